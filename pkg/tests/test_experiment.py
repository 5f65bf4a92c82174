import json
from dataclasses import replace

import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from boostbench.bwgen import BwDatasetSpec, dataset
from boostbench.config import ConfigError, ExperimentConfig, load_config
from boostbench.crt import generate_crt_dataset, load_scenarios, write_crt_dataset
from boostbench.experiment import (
    ExperimentError,
    Runner,
    load_result,
    read_transcript,
    resume_experiment,
    run_experiment,
)
from boostbench.gateway import MockBackend, TokenUsage, TransientError
from boostbench.metrics import compute_metrics
from boostbench.mock import SimulatedSolver


@pytest.fixture(scope="session")
def bw50(tmp_path_factory):
    path = tmp_path_factory.mktemp("bw50")
    dataset(BwDatasetSpec(3, 5, 4, 10, 50, seed=2), path)
    return path


@pytest.fixture(scope="session")
def bw12(tmp_path_factory):
    path = tmp_path_factory.mktemp("bw12")
    dataset(BwDatasetSpec(3, 5, 4, 10, 12, seed=5), path)
    return path


@pytest.fixture(scope="session")
def crt(tmp_path_factory):
    path = tmp_path_factory.mktemp("crt")
    write_crt_dataset(generate_crt_dataset(load_scenarios(), 2, 0), path, 0)
    return path


def cfg(ds, out, **kw):
    kw.setdefault("backend", {"kind": "mock", "solve_rate": 0.4})
    return ExperimentConfig(dataset=str(ds), model="o1-mini", output_dir=str(out), **kw)


class Crashing(MockBackend):
    """Mock backend that dies with a non-gateway error on its Nth call."""

    def __init__(self, responder, after):
        super().__init__(responder)
        self.calls = 0
        self.after = after

    def send(self, request, wire_name):
        self.calls += 1
        if self.calls == self.after:
            raise KeyboardInterrupt("simulated kill")
        return super().send(request, wire_name)


class TestProtocol:
    def test_scripted_counts(self, bw50, tmp_path):
        ids = [f"task_{i:03d}" for i in range(50)]
        schedule = {t: 0 for t in ids[:15]}
        for k in range(1, 5):
            schedule.update({t: k for t in ids[10 + 5 * k: 15 + 5 * k]})
        r = run_experiment(cfg(bw50, tmp_path, backend={"kind": "mock", "schedule": schedule}))
        assert r.cumulative_solved() == [15, 20, 25, 30, 35]
        assert [len(x.attempted) for x in r.rounds] == [50, 35, 30, 25, 20]
        assert len(r.records) == 50 + 35 + 30 + 25 + 20

    def test_zero_rounds(self, bw12, tmp_path):
        r = run_experiment(cfg(bw12, tmp_path, rounds=0))
        assert len(r.records) == 12
        assert {rec["round"] for rec in r.records} == {0}

    @settings(max_examples=8, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
    @given(st.floats(0.0, 1.0), st.integers(0, 1000), st.integers(1, 4))
    def test_only_failures_are_resubmitted(self, bw12, tmp_path_factory, rate, seed, conc):
        out = tmp_path_factory.mktemp("run")
        r = run_experiment(cfg(bw12, out, seed=seed, concurrency=conc, backend={"kind": "mock", "solve_rate": rate}))
        solved = set()
        for rnd in r.rounds:
            assert set(rnd.attempted) == set(r.task_ids) - solved
            assert set(rnd.solved) <= set(rnd.attempted)
            assert not solved & set(rnd.solved)
            solved |= set(rnd.solved)
        cum = r.cumulative_solved()
        assert cum == sorted(cum)

    def test_error_feedback_prompts(self, bw12, tmp_path):
        r = run_experiment(cfg(bw12, tmp_path))
        later = [rec for rec in r.records if rec["round"] > 0]
        assert later and all(rec["family"] == "error_correction" for rec in later)
        runner = Runner(cfg(bw12, tmp_path / "x"))
        prev = next(rec for rec in r.records if rec["verdict"] == "incorrect")
        bundle = runner.correction_prompt(prev["task_id"], prev)
        assert prev["extracted"] in bundle.user
        assert bundle.user.startswith(runner.base_prompt(prev["task_id"]).user)
        assert bundle.user.count("Previous solution:") == 1

    def test_crt_forces_repeat(self, crt, tmp_path):
        r = run_experiment(cfg(crt, tmp_path))
        assert r.config.correction_mode == "repeat" and r.config.rounds == 2
        assert all(rec["family"] == "repeat" for rec in r.records if rec["round"] > 0)
        assert {rec["verdict"] for rec in r.records} <= {"solved", "incorrect"}
        with pytest.raises(ConfigError):
            run_experiment(cfg(crt, tmp_path / "b", correction_mode="error_feedback"))

    def test_llm_extraction_keeps_summary_out_of_metrics(self, bw12, crt, tmp_path):
        for ds in (bw12, crt):
            out = tmp_path / ds.name
            rule = run_experiment(cfg(ds, out / "rule"))
            llm = run_experiment(cfg(ds, out / "llm", extraction_mode="llm"))
            assert [x["verdict"] for x in llm.records] == [x["verdict"] for x in rule.records]
            assert any("summary_usage" in x for x in llm.records)
            assert compute_metrics(llm).tokens == compute_metrics(rule).tokens


class TestPersistence:
    def test_identical_runs_are_byte_identical(self, bw12, tmp_path):
        run_experiment(cfg(bw12, tmp_path / "a", concurrency=4))
        run_experiment(cfg(bw12, tmp_path / "b", concurrency=1))
        a = (tmp_path / "a" / "transcript.jsonl").read_bytes()
        assert a == (tmp_path / "b" / "transcript.jsonl").read_bytes()
        assert len(a) > 0

    @pytest.mark.parametrize("after", [1, 7, 20])
    def test_crash_resume_equivalence(self, bw12, tmp_path, after):
        run_experiment(cfg(bw12, tmp_path / "ref"))
        config = cfg(bw12, tmp_path / "crash")
        with pytest.raises(KeyboardInterrupt):
            Runner(config, backend=Crashing(SimulatedSolver(0.4, 0), after)).run()
        partial = read_transcript(tmp_path / "crash" / "transcript.jsonl")
        assert len(partial) < len(read_transcript(tmp_path / "ref" / "transcript.jsonl"))
        resume_experiment(tmp_path / "crash")
        assert (tmp_path / "crash" / "transcript.jsonl").read_bytes() == \
            (tmp_path / "ref" / "transcript.jsonl").read_bytes()

    def test_truncated_line_is_dropped_on_resume(self, bw12, tmp_path):
        ref = run_experiment(cfg(bw12, tmp_path / "ref"))
        path = tmp_path / "cut" / "transcript.jsonl"
        run_experiment(cfg(bw12, tmp_path / "cut"))
        lines = path.read_bytes().splitlines(keepends=True)
        path.write_bytes(b"".join(lines[:9]) + lines[9][:40])
        resumed = resume_experiment(tmp_path / "cut")
        assert path.read_bytes() == (tmp_path / "ref" / "transcript.jsonl").read_bytes()
        assert resumed.cumulative_solved() == ref.cumulative_solved()

    def test_corrupt_middle_line_is_an_error(self, bw12, tmp_path):
        run_experiment(cfg(bw12, tmp_path))
        path = tmp_path / "transcript.jsonl"
        lines = path.read_text().splitlines()
        lines[2] = "{oops"
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(ExperimentError):
            read_transcript(path)

    def test_fresh_run_refuses_existing_transcript(self, bw12, tmp_path):
        run_experiment(cfg(bw12, tmp_path))
        with pytest.raises(ExperimentError):
            run_experiment(cfg(bw12, tmp_path))

    def test_resume_refuses_foreign_transcript(self, bw12, tmp_path):
        run_experiment(cfg(bw12, tmp_path))
        conf = json.loads((tmp_path / "config.json").read_text())
        conf["seed"] = 99
        (tmp_path / "config.json").write_text(json.dumps(conf))
        with pytest.raises(ExperimentError):
            resume_experiment(tmp_path)

    def test_resume_of_complete_run_is_a_no_op(self, bw12, tmp_path):
        run_experiment(cfg(bw12, tmp_path))
        before = (tmp_path / "transcript.jsonl").read_bytes()
        resume_experiment(tmp_path)
        assert (tmp_path / "transcript.jsonl").read_bytes() == before

    def test_conservation(self, bw12, tmp_path):
        r = run_experiment(cfg(bw12, tmp_path))
        from_file = TokenUsage()
        for rec in read_transcript(tmp_path / "transcript.jsonl"):
            from_file = from_file + TokenUsage.from_dict(rec["usage"])
        per_round = TokenUsage()
        for rnd in r.rounds:
            per_round = per_round + rnd.usage_sum
        assert from_file == per_round == r.usage_total
        assert compute_metrics(load_result(tmp_path)) == compute_metrics(r)

    def test_record_schema(self, bw12, tmp_path):
        r = run_experiment(cfg(bw12, tmp_path))
        rec = r.records[0]
        for key in ("run_id", "task_id", "round", "family", "prompt_hash", "response_text", "usage", "cost_usd",
                    "verdict", "failure", "timestamps", "template_versions"):
            assert key in rec
        assert set(rec["usage"]) >= {"prompt", "completion", "reasoning"}
        bad = [x for x in r.records if x["verdict"] == "incorrect"]
        assert all(x["failure"] is not None for x in bad)


class TestTransportFailures:
    def test_exhausted_exchange_is_carried_over(self, bw12, tmp_path):
        solver = SimulatedSolver(1.0, 0)

        def flaky(request):
            if request.tag == "task_003:r0":
                raise TransientError("down")
            return solver(request)

        r = Runner(cfg(bw12, tmp_path), backend=MockBackend(flaky),
                   gateway_options={"max_attempts": 2, "sleep": lambda s: None}).run()
        first = r.rounds[0].per_task["task_003"]
        assert first.verdict == "error" and first.usage == TokenUsage()
        assert "task_003" not in r.rounds[0].solved
        assert "task_003" in r.rounds[1].attempted and "task_003" in r.rounds[1].solved
        # with no earlier answer the correction round resends the original prompt
        rec = next(x for x in r.records if x["task_id"] == "task_003" and x["round"] == 1)
        assert rec["family"] == "repeat"

    def test_always_failing_backend_never_solves(self, bw12, tmp_path):
        def down(request):
            raise TransientError("down")

        r = Runner(cfg(bw12, tmp_path, rounds=2), backend=MockBackend(down),
                   gateway_options={"max_attempts": 1, "sleep": lambda s: None}).run()
        assert r.cumulative_solved() == [0, 0, 0]
        assert all(x["verdict"] == "error" for x in r.records)
        m = compute_metrics(r)
        assert m.tpt is None and m.total_cps is None


class TestConfig:
    def test_defaults_per_kind(self):
        c = ExperimentConfig(dataset="d", model="o1", output_dir="o")
        assert c.resolved("blocksworld").rounds == 4
        assert c.resolved("blocksworld").correction_mode == "error_feedback"
        assert c.resolved("crt").rounds == 2 and c.resolved("crt").correction_mode == "repeat"

    @pytest.mark.parametrize("bad", [{"rounds": -1}, {"correction_mode": "x"}, {"extraction_mode": "x"},
                                     {"concurrency": 0}, {"backend": {"kind": "grpc"}}])
    def test_invalid(self, bad):
        with pytest.raises(ConfigError):
            ExperimentConfig(dataset="d", model="o1", output_dir="o", **bad)

    def test_from_dict_rejects_unknown_and_missing(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"dataset": "d", "model": "o1", "output_dir": "o", "colour": 1})
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"dataset": "d"})

    def test_run_id_ignores_output_dir(self):
        c = ExperimentConfig(dataset="d", model="o1", output_dir="o")
        assert c.run_id() == replace(c, output_dir="elsewhere").run_id()
        assert c.run_id() != replace(c, seed=1).run_id()

    def test_load_config_resolves_relative_paths(self, tmp_path):
        (tmp_path / "s.txt").write_text("strategy")
        (tmp_path / "c.json").write_text(json.dumps(
            {"dataset": "ds", "model": "o1", "output_dir": "out", "strategy": "s.txt"}))
        c = load_config(tmp_path / "c.json")
        assert c.dataset == str(tmp_path / "ds") and c.strategy == str(tmp_path / "s.txt")
        (tmp_path / "c.json").write_text(json.dumps(
            {"dataset": "ds", "model": "o1", "output_dir": "out", "strategy": "bw_handwritten"}))
        assert load_config(tmp_path / "c.json").strategy == "bw_handwritten"

    def test_unknown_model_fails_early(self, bw12, tmp_path):
        from boostbench.gateway import UnknownModelError
        with pytest.raises(UnknownModelError):
            Runner(replace(cfg(bw12, tmp_path), model="gpt-99"))

    def test_dry_run_calls_nothing(self, bw12, tmp_path):
        def boom(request):
            raise AssertionError("backend called")

        runner = Runner(cfg(bw12, tmp_path, strategy="bw_handwritten"), backend=MockBackend(boom))
        prompts = runner.dry_run()
        assert len(prompts) == 12 and all("An example solution" in p.user for p in prompts)
        assert not (tmp_path / "transcript.jsonl").exists()
