"""Recover checkable answers from free-form model output."""

from __future__ import annotations

import ast
import json
import re
from typing import TYPE_CHECKING

from .crt import ABSENT, LinearForm
from .pddl import DomainModel, GroundAction, PDDLError, blocksworld_domain, parse_action, parse_plan_strict
from .prompts import fill, load_template

if TYPE_CHECKING:
    from .gateway import Gateway

_FENCE_RE = re.compile(r"^[ \t]*```[^\n`]*\n(.*?)^[ \t]*```", re.MULTILINE | re.DOTALL)
_PAREN_RE = re.compile(r"\(([^()]*)\)")
# list numbering, bullets, emphasis and inline code around an action
_LINE_NOISE_RE = re.compile(r"^\s*(?:(?:\d+[.)]|[-*+•])\s+)?(?:\*\*Action:\*\*\s*)?[`*_]*\s*|\s*[`*_]*\s*$")


def _as_action(text: str, domain: DomainModel) -> GroundAction | None:
    try:
        return parse_action(f"({text})", domain)
    except PDDLError:
        return None


def _block_actions(block: str, domain: DomainModel) -> list[GroundAction] | None:
    """Actions of a fenced block, or None unless every non-blank line is one action."""
    actions = []
    for line in block.splitlines():
        if not line.strip():
            continue
        core = _LINE_NOISE_RE.sub("", line)
        m = re.fullmatch(r"\(([^()]*)\)", core.strip())
        action = _as_action(m.group(1), domain) if m else None
        if action is None:
            return None
        actions.append(action)
    return actions or None


def extract_plan(llm_text: str, domain: DomainModel | None = None) -> list[GroundAction]:
    """Plan from a model response.

    The last fenced code block made only of actions wins; without one, every
    well-formed action in the text is taken in order. Repeated actions are kept
    since valid plans can repeat them.
    """
    domain = domain or blocksworld_domain()
    fenced = None
    for m in _FENCE_RE.finditer(llm_text):
        actions = _block_actions(m.group(1), domain)
        if actions:
            fenced = actions
    if fenced is not None:
        return fenced
    out = []
    for m in _PAREN_RE.finditer(llm_text):
        action = _as_action(m.group(1), domain)
        if action is not None:
            out.append(action)
    return out


def extract_crt_answer(llm_text: str) -> str:
    """Content of the last ``@@...@@`` span, trimmed; empty if there is none."""
    spans = re.findall(r"@@(.*?)@@", llm_text, re.DOTALL)
    return spans[-1].strip() if spans else ""


def summarize_plan_llm(llm_text: str, gateway: "Gateway", model: str, tag: str = "") -> list[GroundAction]:
    from .gateway import ChatRequest

    prompt = fill(load_template("summarize_plan"), {"RESPONSE": llm_text})
    exchange = gateway.complete(ChatRequest(model, ({"role": "user", "content": prompt},), tag=f"summary:{tag}"))
    try:
        return parse_plan_strict(exchange.response_text.strip())
    except PDDLError:
        return []


def _first_structure(text: str) -> str | None:
    start = text.find("{")
    while start >= 0:
        depth = 0
        for i in range(start, len(text)):
            if text[i] == "{":
                depth += 1
            elif text[i] == "}":
                depth -= 1
                if depth == 0:
                    return text[start:i + 1]
        start = text.find("{", start + 1)
    return None


def _coef(value) -> int | None:
    if value is None or isinstance(value, bool):
        return None
    if isinstance(value, int):
        return value
    if isinstance(value, float) and value.is_integer():
        return int(value)
    if isinstance(value, str) and re.fullmatch(r"-?\d+", value.strip()):
        return int(value)
    raise ValueError(value)


def parse_summary_reply(reply: str) -> LinearForm:
    """Read ``{'A': int|None, 'B': int|None}`` out of a summariser reply."""
    blob = _first_structure(reply)
    if blob is None:
        return ABSENT
    data = None
    try:
        data = json.loads(blob)
    except json.JSONDecodeError:
        patched = re.sub(r"\bnull\b", "None", blob)
        try:
            data = ast.literal_eval(patched)
        except (ValueError, SyntaxError):
            return ABSENT
    if not isinstance(data, dict):
        return ABSENT
    keys = {str(k).strip().upper(): v for k, v in data.items()}
    try:
        a, b = _coef(keys.get("A")), _coef(keys.get("B"))
    except ValueError:
        return ABSENT
    if a is None or b is None:
        return ABSENT
    return LinearForm(a, b)


def summarize_crt_llm(formula_text: str, gateway: "Gateway", model: str, tag: str = "") -> LinearForm:
    """Ask a model to restate the formula as aY - bX. It sees only the formula, never the task."""
    from .gateway import ChatRequest

    prompt = fill(load_template("summarize_crt"), {"FORMULA": formula_text})
    exchange = gateway.complete(ChatRequest(model, ({"role": "user", "content": prompt},), tag=f"summary:{tag}"))
    return parse_summary_reply(exchange.response_text)
