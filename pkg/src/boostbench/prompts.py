"""Prompt construction for task, strategy-generation, error-correction and repeat prompts."""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Literal, Mapping

from .crt import CrtTask
from .pddl import Task, ValidationReport, render_domain, render_state, render_task

TEMPLATE_VERSIONS = {
    "bw_task": "b1-v1",
    "crt_task": "b2-v1",
    "strategy_gen": "b3b4-v1",
    "error_feedback": "err-v1",
    "summarize_plan": "sumplan-v1",
    "summarize_crt": "e-v1",
}

CRT_STRATEGY_INTRO = "A general strategy for this problem type has been given below."

# solution shown after the domain in every BlocksWorld task prompt
EXAMPLE_SOLUTION = """\
(unstack d c)
(putdown d)
(pickup c)
(stack c d)
(unstack a b)
(putdown a)
(pickup b)
(stack b c)
(pickup a)
(stack a b)"""

Family = Literal["task", "strategy_gen", "error_correction", "repeat"]
DomainKind = Literal["blocksworld", "crt"]

BUILTIN_STRATEGIES = {
    "bw_handwritten": ("blocksworld", "handwritten"),
    "bw_generated_1": ("blocksworld", "generated"),
    "crt_handwritten": ("crt", "handwritten"),
    "crt_generated_1": ("crt", "generated"),
}


class PromptError(ValueError):
    pass


@dataclass(frozen=True)
class Strategy:
    id: str
    source: Literal["handwritten", "generated", "none"]
    body: str

    def __post_init__(self) -> None:
        if self.source != "none" and not self.body.strip():
            raise PromptError(f"strategy {self.id} has an empty body")

    @property
    def token_estimate(self) -> int:
        # rough 4-characters-per-token rule
        return (len(self.body) + 3) // 4


NO_STRATEGY = Strategy("none", "none", "")


@dataclass(frozen=True)
class PromptBundle:
    user: str
    family: Family
    task_ref: str
    domain_kind: DomainKind
    system: str | None = None

    def __post_init__(self) -> None:
        if not self.user:
            raise PromptError("prompt text is empty")

    def messages(self) -> list[dict]:
        msgs = []
        if self.system:
            msgs.append({"role": "system", "content": self.system})
        msgs.append({"role": "user", "content": self.user})
        return msgs


@lru_cache(maxsize=None)
def load_template(name: str) -> str:
    return resources.files("boostbench.templates").joinpath(f"{name}.txt").read_text()


def fill(template: str, values: Mapping[str, str]) -> str:
    """Replace ``{NAME}`` slots in one pass; inserted text is never rescanned."""

    def sub(m: re.Match) -> str:
        key = m.group(1)
        if key not in values:
            raise PromptError(f"no value for template slot {key}")
        return values[key]

    return re.sub(r"\{([A-Z_]+)\}", sub, template)


def load_strategy(ref: str | None) -> Strategy:
    """Resolve ``None``/``"none"``, a built-in name, or a path to a strategy text file."""
    if ref in (None, "", "none"):
        return NO_STRATEGY
    if ref in BUILTIN_STRATEGIES:
        body = resources.files("boostbench.strategies").joinpath(f"{ref}.txt").read_text()
        return Strategy(ref, BUILTIN_STRATEGIES[ref][1], body)
    path = Path(ref)
    body = path.read_text().rstrip("\n")
    source = "handwritten" if "handwritten" in path.stem else "generated"
    return Strategy(path.stem, source, body)


def build_bw_task_prompt(task: Task, strategy: Strategy | None = None) -> PromptBundle:
    strategy = strategy or NO_STRATEGY
    text = fill(load_template("bw_task"), {
        "N_OPERATORS": str(len(task.domain.actions)),
        "DOMAIN": render_domain(task.domain),
        "STRATEGY": strategy.body + "\n\n" if strategy.body else "",
        "EXAMPLE_SOLUTION": EXAMPLE_SOLUTION,
        "TASK": render_task(task),
    })
    return PromptBundle(text, "task", task.id, "blocksworld")


def build_crt_task_prompt(task: CrtTask, strategy: Strategy | None = None) -> PromptBundle:
    strategy = strategy or NO_STRATEGY
    slot = f"\n\n{CRT_STRATEGY_INTRO}\n\n{strategy.body}" if strategy.body else ""
    text = fill(load_template("crt_task"), {"QUESTION": task.prompt_body, "STRATEGY": slot})
    return PromptBundle(text, "task", task.id, "crt")


def build_strategy_gen_prompt(domain_kind: DomainKind) -> PromptBundle:
    if domain_kind not in ("blocksworld", "crt"):
        raise PromptError(f"unknown domain kind {domain_kind!r}")
    return PromptBundle(load_template(f"strategy_gen_{domain_kind}"), "strategy_gen",
                        f"strategy_gen:{domain_kind}", domain_kind)


def error_message(report: ValidationReport) -> str:
    """Verdict text describing why a BlocksWorld solution failed."""
    if report.goal_satisfied:
        raise PromptError("solution is correct; there is no error to report")
    if not report.fully_executable:
        f = report.first_failure
        return fill(load_template("error_not_executable"), {
            "FAILING_ACTION": str(f.action),
            "STEP": str(f.step_index),
            "REASON": f.reason,
            "STATE": render_state(f.state_before),
        })
    return fill(load_template("error_goal_unmet"), {"STATE": render_state(report.final_state)})


def build_error_prompt(original: PromptBundle, bad_solution: str, report: ValidationReport) -> PromptBundle:
    """Original prompt, the previous (incorrect) solution and an error message.

    Only the immediately preceding solution is included, never earlier attempts.
    """
    if original.domain_kind != "blocksworld":
        raise PromptError("error-feedback prompts exist for planning tasks only; use a repeat prompt")
    verdict = error_message(report)
    text = fill(load_template("error_feedback"), {
        "ORIGINAL": original.user,
        "BAD_SOLUTION": bad_solution if bad_solution.strip() else "(no actions found)",
        "VERDICT": verdict,
    })
    return replace(original, user=text, family="error_correction")


def build_repeat_prompt(original: PromptBundle) -> PromptBundle:
    return replace(original, family="repeat")

