"""A deterministic stand-in for a chat model, for offline and reproducible runs.

It reads the task out of the prompt, solves it symbolically, and answers
correctly with a configurable probability. Each decision is a hash of the
seed and the request tag, so runs are repeatable.
"""

from __future__ import annotations

import hashlib
import json
import re
from typing import Mapping, Sequence

from .crt import parse_linear_answer, power_exponent, rate_from_text
from .extraction import extract_plan
from .gateway import ChatRequest
from .pddl import PDDLError, parse_task, render_plan
from .planner import strategy_plan
from .prompts import load_strategy

_ROUND_RE = re.compile(r":r(\d+)$")
_TAG_RE = re.compile(r"^(.*):r(\d+)$")


def uniform(seed: int, key: str) -> float:
    h = hashlib.sha256(f"{seed}|{key}".encode()).digest()
    return int.from_bytes(h[:8], "big") / 2.0 ** 64


class SimulatedSolver:
    """Callable responder for :class:`~boostbench.gateway.MockBackend`.

    ``solve_rate`` is a probability, or a list indexed by round (taken from a
    ``...:r<k>`` request tag; the last entry repeats). ``schedule`` overrides
    it per task: task id -> the round in which the task is first solved
    (tasks missing from the schedule are never solved).
    """

    def __init__(self, solve_rate: float | Sequence[float] = 0.5, seed: int = 0,
                 schedule: Mapping[str, int] | None = None):
        self.solve_rate = solve_rate
        self.seed = seed
        self.schedule = dict(schedule) if schedule is not None else None

    def succeeds(self, tag: str, u: float) -> bool:
        if self.schedule is None:
            return u < self.rate_for(tag)
        m = _TAG_RE.match(tag)
        if not m:
            return False
        solve_round = self.schedule.get(m.group(1))
        return solve_round is not None and int(m.group(2)) >= solve_round

    def rate_for(self, tag: str) -> float:
        if isinstance(self.solve_rate, (int, float)):
            return float(self.solve_rate)
        m = _ROUND_RE.search(tag)
        k = int(m.group(1)) if m else 0
        rates = list(self.solve_rate)
        return float(rates[min(k, len(rates) - 1)])

    def __call__(self, request: ChatRequest) -> str:
        text = request.messages[-1]["content"]
        u = uniform(self.seed, request.tag or request.cache_key())
        good = self.succeeds(request.tag, u)
        if "Extract the final plan it proposes" in text:
            body = text.split("Response:\n", 1)[-1]
            return render_plan(extract_plan(body))
        if "Summarise the given formula into an AY - BX form" in text:
            formula = text.split("\n\nSummarise", 1)[0]
            form = parse_linear_answer(formula)
            return json.dumps({"A": form.a_y, "B": form.b_x})
        if "*THIS IS YOUR PROBLEM, SOLVE IT*" in text:
            return self._blocksworld(text, good, u)
        if "enclosed in double at symbols" in text:
            return self._crt(text, good)
        if "write a strategy for the domain" in text:
            return load_strategy("bw_generated_1").body
        if "write an explanation for a weaker LLM" in text:
            return load_strategy("crt_generated_1").body
        return "I am not sure how to answer that."

    @staticmethod
    def _blocksworld(text: str, good: bool, u: float) -> str:
        try:
            task = parse_task(text)
            plan = strategy_plan(task)
        except (PDDLError, ValueError):
            return "I could not read the problem."
        if not good and plan:
            i = int(u * 1e6) % len(plan)
            if i % 2:
                del plan[i]  # usually breaks executability
            else:
                plan = plan[:-1]  # executable but misses the goal
        return (
            "**Solution:**\n\nFirst clear every tower, then build the goal towers.\n\n"
            "**Complete Action Sequence:**\n\n```\n" + render_plan(plan) + "\n```\n"
        )

    @staticmethod
    def _crt(text: str, good: bool) -> str:
        rate = rate_from_text(text)
        step = re.search(r"(\d+)X\b", text)
        total = re.search(r"(\d+)Y\b", text)
        frac = re.search(r"\b1/(\d+)\b", text)
        if not (rate and step and total and frac):
            return "@@unknown@@"
        a, b, d = int(step.group(1)), int(total.group(1)), int(frac.group(1))
        try:
            k = power_exponent(rate, d)
        except ValueError:
            return "@@unknown@@"
        if good:
            return f"Each step back divides the amount by {rate}.\n\n@@{b}Y - {k * a}X@@"
        return f"t = {a} * log{rate}(1/{d})\n\n@@t = {a} * log{rate}(1/{d})@@"
