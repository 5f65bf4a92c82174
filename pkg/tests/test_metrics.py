import pytest

from conftest import synthetic_result
from boostbench.metrics import MetricsTable, compute_metrics, parse_report_csv, render_report


@pytest.fixture(scope="module")
def o1():
    # Table 3 inputs: TPT 5493 over 50 tasks, solved 44 -> 49 -> 50, 312768 tokens in total
    return compute_metrics(synthetic_result("o1", 50, [44, 49, 50, 50, 50], 5493, 312768 - 5493 * 50))


@pytest.fixture(scope="module")
def o1_mini():
    return compute_metrics(synthetic_result("o1-mini", 50, [15, 20, 27, 33, 34], 6754, 1006272 - 6754 * 50))


class TestTable3Parity:
    def test_o1(self, o1):
        assert o1.tpt == 5493
        assert o1.tokens == 312768
        assert o1.initial_cps == pytest.approx(0.37, abs=0.005)
        assert o1.cost == pytest.approx(18.77, abs=0.005)
        assert o1.total_cps == pytest.approx(0.38, abs=0.005)
        assert o1.ec_tpt == pytest.approx(5440, abs=10)

    def test_o1_mini(self, o1_mini):
        assert o1_mini.tpt == 6754
        assert o1_mini.initial_cps == pytest.approx(0.27, abs=0.005)
        assert o1_mini.cost == pytest.approx(12.08, abs=0.005)
        assert o1_mini.total_cps == pytest.approx(0.36, abs=0.005)
        assert o1_mini.ec_tpt == pytest.approx(6367, abs=1)

    def test_success_rates(self, o1_mini):
        assert o1_mini.success == (30.0, 40.0, 54.0, 66.0, 68.0)


def test_zero_usage_and_zero_solved():
    m = compute_metrics(synthetic_result("o1", 4, [0, 0], 0, 0))
    assert m.cost == 0 and m.tokens == 0
    assert m.initial_cps is None and m.total_cps is None
    assert "n/a" in render_report(m)


def test_no_correction_rounds():
    m = compute_metrics(synthetic_result("o1", 3, [3], 100, 0))
    assert m.ec_tpt is None and m.rounds == 0


def test_cumulative_must_not_decrease():
    with pytest.raises(ValueError):
        MetricsTable("x", "o1", 5, (3, 2), None, None, 0, 0.0, None, None)


def test_markdown_shape(o1, o1_mini):
    md = render_report([o1, o1_mini])
    assert "| Experiment | Model | Initial | R1 | R2 | R3 | R4 |" in md
    assert "| TPT | Initial CPS ($) | EC-TPT | Tokens | Cost ($) | Total CPS ($) |" in md
    assert "| 30 | 40 | 54 | 66 | 68 |" in md
    assert "| 5493 | 0.37 |" in md and "| 18.77 | 0.38 |" in md


def test_empty_report_has_headers_only():
    md = render_report([])
    assert "Initial | R1 | R2 | R3 | R4" in md
    assert md.count("\n|") == 4
    assert parse_report_csv(render_report([], "csv")) == []


def test_csv_round_trip(o1, o1_mini):
    zero = compute_metrics(synthetic_result("o1", 4, [0, 0], 0, 0))
    tables = [o1, o1_mini, zero]
    assert parse_report_csv(render_report(tables, "csv")) == tables


def test_unknown_format(o1):
    with pytest.raises(ValueError):
        render_report(o1, "html")
