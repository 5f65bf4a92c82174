import pytest

from conftest import reference_text
from boostbench.crt import load_scenarios, make_crt_task_from_fraction
from boostbench.pddl import parse_plan_strict, render_domain, validate
from boostbench.prompts import (
    EXAMPLE_SOLUTION,
    NO_STRATEGY,
    PromptError,
    Strategy,
    build_bw_task_prompt,
    build_crt_task_prompt,
    build_error_prompt,
    build_repeat_prompt,
    build_strategy_gen_prompt,
    error_message,
    fill,
    load_strategy,
    load_template,
)

BW_SLOT = "[STRATEGY GOES HERE]\n\n"
CRT_SLOT = "[STRATEGY HERE]"


def light_switch_task():
    sc = next(s for s in load_scenarios() if s.id == "light_switch")
    return make_crt_task_from_fraction(sc, 5, 7, 9)


def crt_without_strategy():
    text = reference_text("B2_crt_task_prompt")
    return text[: text.index("\n\nA general strategy")]


class TestFidelity:
    def test_bw_no_strategy(self, b1_task):
        expected = reference_text("B1_bw_task_prompt").replace(BW_SLOT, "")
        assert build_bw_task_prompt(b1_task).user == expected

    def test_bw_handwritten_strategy(self, b1_task):
        c1 = load_strategy("bw_handwritten")
        assert c1.body == reference_text("C1_bw_handwritten")
        expected = reference_text("B1_bw_task_prompt").replace(BW_SLOT, c1.body + "\n\n")
        assert build_bw_task_prompt(b1_task, c1).user == expected

    def test_crt_generated_strategy(self):
        c4 = load_strategy("crt_generated_1")
        assert c4.body == reference_text("C4_crt_generated_1")
        expected = reference_text("B2_crt_task_prompt").replace(CRT_SLOT, c4.body)
        assert build_crt_task_prompt(light_switch_task(), c4).user == expected

    def test_crt_no_strategy(self):
        assert build_crt_task_prompt(light_switch_task()).user == crt_without_strategy()

    @pytest.mark.parametrize("kind,name", [("blocksworld", "B3_bw_strategy_gen"), ("crt", "B4_crt_strategy_gen")])
    def test_strategy_generation_prompts(self, kind, name):
        bundle = build_strategy_gen_prompt(kind)
        assert bundle.user == reference_text(name)
        assert bundle.family == "strategy_gen"

    @pytest.mark.parametrize("name", ["bw_handwritten", "bw_generated_1", "crt_handwritten", "crt_generated_1"])
    def test_builtin_strategies_match_reference(self, name):
        fixture = {"bw_handwritten": "C1_bw_handwritten", "bw_generated_1": "C2_bw_generated_1",
                   "crt_handwritten": "C3_crt_handwritten", "crt_generated_1": "C4_crt_generated_1"}[name]
        assert load_strategy(name).body == reference_text(fixture)

    def test_summary_prompt_matches_reference(self):
        assert fill(load_template("summarize_crt"), {"FORMULA": "7Y - 10X"}) == reference_text("E1_summary_input")
        # the second listing differs from the first only in trailing whitespace
        squash = lambda t: [line.rstrip() for line in t.strip().splitlines() if line.strip()]  # noqa: E731
        assert squash(fill(load_template("summarize_crt"), {"FORMULA": "t = 5 * log3(1/9)"})) == squash(
            reference_text("E2_summary_input"))


class TestLayout:
    @pytest.mark.parametrize("name", ["bw_handwritten", "bw_generated_1"])
    def test_strategy_between_domain_and_example(self, b1_task, name):
        strategy = load_strategy(name)
        text = build_bw_task_prompt(b1_task, strategy).user
        domain_end = text.index(render_domain(b1_task.domain)) + len(render_domain(b1_task.domain))
        at = text.index(strategy.body)
        assert domain_end < at < text.index("An example solution")

    def test_ends_with_solution_marker(self, b1_task):
        assert build_bw_task_prompt(b1_task).user.endswith("\nSolution:")

    def test_strategy_text_is_not_rescanned(self, b1_task):
        tricky = Strategy("t", "handwritten", "Use {TASK} literally and {N_OPERATORS}.")
        text = build_bw_task_prompt(b1_task, tricky).user
        assert "Use {TASK} literally and {N_OPERATORS}." in text

    def test_missing_slot_value(self):
        with pytest.raises(PromptError):
            fill("{A}", {})

    def test_empty_strategy_rejected(self):
        with pytest.raises(PromptError):
            Strategy("x", "generated", "  ")

    def test_strategy_from_file(self, tmp_path):
        p = tmp_path / "mine.txt"
        p.write_text("Do it well.\n")
        s = load_strategy(str(p))
        assert s.body == "Do it well." and s.id == "mine"
        assert load_strategy("none") is NO_STRATEGY

    def test_messages(self, b1_task):
        assert build_bw_task_prompt(b1_task).messages() == [{"role": "user", "content": build_bw_task_prompt(b1_task).user}]


class TestCorrectionPrompts:
    def test_not_executable(self, b1_task):
        bad = "(unstack d f)\n(pickup c)"
        report = validate(b1_task, parse_plan_strict(bad))
        original = build_bw_task_prompt(b1_task)
        bundle = build_error_prompt(original, bad, report)
        assert bundle.family == "error_correction"
        assert bundle.user.startswith(original.user)
        assert bad in bundle.user
        assert "(pickup c) at step 2" in bundle.user
        assert "(holding d)" in bundle.user

    def test_goal_unmet(self, example_task):
        report = validate(example_task, parse_plan_strict(EXAMPLE_SOLUTION)[:4])
        msg = error_message(report)
        assert "goal was not satisfied" in msg

    def test_no_error_for_correct_solution(self, example_task):
        with pytest.raises(PromptError):
            error_message(validate(example_task, parse_plan_strict(EXAMPLE_SOLUTION)))

    def test_only_the_previous_solution_is_shown(self, b1_task):
        original = build_bw_task_prompt(b1_task)
        first = build_error_prompt(original, "(pickup a)", validate(b1_task, parse_plan_strict("(pickup a)")))
        # a second correction is built from the original, never from the first correction
        second = build_error_prompt(original, "(pickup b)", validate(b1_task, parse_plan_strict("(pickup b)")))
        assert "(pickup a)" not in second.user.replace(original.user, "")
        assert first.user != second.user

    def test_crt_uses_repeat(self):
        original = build_crt_task_prompt(light_switch_task())
        with pytest.raises(PromptError):
            build_error_prompt(original, "x", None)
        repeat = build_repeat_prompt(original)
        assert repeat.user == original.user and repeat.family == "repeat"
