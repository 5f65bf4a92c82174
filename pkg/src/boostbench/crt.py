"""Type-3 CRT tasks: exponential growth word problems with algebraic placeholders.

A task says a quantity grows by a factor ``r`` every ``aX`` units and is
complete after ``bY`` units; asking when it was at ``1/r^k`` gives
``bY - k*aX``.
"""

from __future__ import annotations

import json
import random
import re
from dataclasses import asdict, dataclass
from fractions import Fraction
from importlib import resources
from pathlib import Path

RATE_WORDS = {2: "doubles", 3: "triples", 4: "quadruples"}
_WORD_RATES = {w: r for r, w in RATE_WORDS.items()}
PLACEHOLDERS = ("RATE_WORD", "STEP", "TOTAL", "FRACTION", "UNIT", "SUBJECT")


class CrtError(ValueError):
    pass


@dataclass(frozen=True)
class CrtScenario:
    id: str
    template: str
    rate: int
    unit: str
    subject: str = ""

    def __post_init__(self) -> None:
        if self.rate not in RATE_WORDS:
            raise CrtError(f"scenario {self.id}: unsupported rate {self.rate}")
        unknown = set(re.findall(r"\{([A-Z_]+)\}", self.template)) - set(PLACEHOLDERS)
        if unknown:
            raise CrtError(f"scenario {self.id}: unknown placeholders {sorted(unknown)}")
        for needed in ("RATE_WORD", "STEP", "TOTAL", "FRACTION"):
            if "{" + needed + "}" not in self.template:
                raise CrtError(f"scenario {self.id}: template lacks {{{needed}}}")

    @property
    def rate_word(self) -> str:
        return RATE_WORDS[self.rate]


@dataclass(frozen=True)
class CrtParams:
    step_coef: int
    total_coef: int
    k: int

    def __post_init__(self) -> None:
        if self.step_coef <= 0 or self.total_coef <= 0:
            raise CrtError("coefficients must be positive")
        if self.k < 0:
            raise CrtError("k must be non-negative")


@dataclass(frozen=True)
class LinearForm:
    """``a_y*Y - b_x*X``; both fields None when the answer could not be read."""

    a_y: int | None = None
    b_x: int | None = None

    def __post_init__(self) -> None:
        if (self.a_y is None) != (self.b_x is None):
            raise CrtError("LinearForm coefficients must both be present or both absent")

    @property
    def present(self) -> bool:
        return self.a_y is not None

    def __str__(self) -> str:
        if not self.present:
            return "None"
        return f"{self.a_y}Y - {self.b_x}X"


ABSENT = LinearForm()


@dataclass(frozen=True)
class CrtTask:
    id: str
    prompt_body: str
    truth: LinearForm
    params: CrtParams
    scenario_id: str
    rate: int

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "prompt_body": self.prompt_body,
            "truth": {"A": self.truth.a_y, "B": self.truth.b_x},
            "params": asdict(self.params),
            "scenario_id": self.scenario_id,
            "rate": self.rate,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CrtTask":
        return cls(
            id=d["id"],
            prompt_body=d["prompt_body"],
            truth=LinearForm(d["truth"]["A"], d["truth"]["B"]),
            params=CrtParams(**d["params"]),
            scenario_id=d["scenario_id"],
            rate=d["rate"],
        )


def power_exponent(rate: int, denominator: int) -> int:
    """k with rate**k == denominator, or CrtError."""
    if rate < 2 or denominator < 1:
        raise CrtError("rate must be >= 2 and denominator >= 1")
    k, value = 0, 1
    while value < denominator:
        value *= rate
        k += 1
    if value != denominator:
        raise CrtError(f"1/{denominator} is not a power of 1/{rate}")
    return k


def ground_truth(params: CrtParams, rate: int) -> LinearForm:
    return LinearForm(params.total_coef, params.k * params.step_coef)


def fraction_text(rate: int, k: int) -> str:
    return f"1/{rate ** k}"


def render_question(scenario: CrtScenario, params: CrtParams) -> str:
    values = {
        "RATE_WORD": scenario.rate_word,
        "STEP": f"{params.step_coef}X",
        "TOTAL": f"{params.total_coef}Y",
        "FRACTION": fraction_text(scenario.rate, params.k),
        "UNIT": scenario.unit,
        "SUBJECT": scenario.subject,
    }
    return re.sub(r"\{([A-Z_]+)\}", lambda m: values[m.group(1)], scenario.template)


def make_crt_task(scenario: CrtScenario, params: CrtParams, task_id: str | None = None) -> CrtTask:
    return CrtTask(
        id=task_id or f"{scenario.id}_{params.step_coef}_{params.total_coef}_{params.k}",
        prompt_body=render_question(scenario, params),
        truth=ground_truth(params, scenario.rate),
        params=params,
        scenario_id=scenario.id,
        rate=scenario.rate,
    )


def make_crt_task_from_fraction(scenario: CrtScenario, step_coef: int, total_coef: int,
                                denominator: int, task_id: str | None = None) -> CrtTask:
    k = power_exponent(scenario.rate, denominator)
    return make_crt_task(scenario, CrtParams(step_coef, total_coef, k), task_id)


def rate_from_text(text: str) -> int | None:
    m = re.search(r"\b(doubles|triples|quadruples)\b", text)
    return _WORD_RATES[m.group(1)] if m else None


# ---------------------------------------------------------------------------
# scenarios

def load_scenarios(path: str | Path | None = None) -> list[CrtScenario]:
    """Read a JSON scenario list: ``[{"id", "rate", "unit", "template", "subject"?}]``."""
    if path is None:
        text = resources.files("boostbench.data").joinpath("crt_scenarios.json").read_text()
    else:
        text = Path(path).read_text()
    raw = json.loads(text)
    scenarios = [CrtScenario(**entry) for entry in raw]
    ids = [s.id for s in scenarios]
    if len(set(ids)) != len(ids):
        raise CrtError("duplicate scenario id")
    return scenarios


def random_params(rng: random.Random, rate: int) -> CrtParams:
    k = rng.randint(1, 3)
    step = rng.randint(2, 9)
    total = rng.randint(k * step // 2 + 2, 40)
    return CrtParams(step, total, k)


def generate_crt_dataset(scenarios: list[CrtScenario], per_scenario: int = 3, seed: int = 0) -> list[CrtTask]:
    rng = random.Random(seed)
    tasks = []
    for sc in scenarios:
        seen = set()
        while len(seen) < per_scenario:
            p = random_params(rng, sc.rate)
            if p in seen:
                continue
            seen.add(p)
            tasks.append(make_crt_task(sc, p, f"{sc.id}_{len(seen) - 1}"))
    return tasks


def write_crt_dataset(tasks: list[CrtTask], out_dir: str | Path, seed: int) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"kind": "crt", "seed": seed, "tasks": [t.to_dict() for t in tasks]}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def load_crt_dataset(path: str | Path) -> list[CrtTask]:
    manifest = json.loads((Path(path) / "manifest.json").read_text())
    if manifest.get("kind") != "crt":
        raise ValueError(f"{path} is not a CRT dataset")
    return [CrtTask.from_dict(d) for d in manifest["tasks"]]


# ---------------------------------------------------------------------------
# answer parsing

_TOKEN_RE = re.compile(r"\s*(?:(\d+(?:\.\d+)?)|([A-Za-z_][A-Za-z_0-9]*)|(.))")


class _NotLinear(Exception):
    pass


def _tokenize(text: str) -> list[tuple[str, str]]:
    tokens = []
    for num, name, op in _TOKEN_RE.findall(text):
        if num:
            tokens.append(("num", num))
        elif name:
            tokens.append(("name", name))
        elif op.strip():
            tokens.append(("op", op))
    return tokens


class _LinearParser:
    """Recursive descent over + - * / and parentheses.

    Values are dicts {"X": c, "Y": c, "": constant} with Fraction coefficients.
    Products of two symbolic factors and division by a symbol are rejected.
    """

    def __init__(self, tokens):
        self.tokens = tokens
        self.i = 0

    def peek(self):
        return self.tokens[self.i] if self.i < len(self.tokens) else (None, None)

    def take(self):
        tok = self.peek()
        self.i += 1
        return tok

    def parse(self) -> dict:
        value = self.expr()
        if self.i != len(self.tokens):
            raise _NotLinear
        return value

    def expr(self) -> dict:
        value = self.term()
        while self.peek() in (("op", "+"), ("op", "-")):
            _, op = self.take()
            rhs = self.term()
            value = _combine(value, rhs, 1 if op == "+" else -1)
        return value

    def term(self) -> dict:
        value = self.unary()
        while True:
            kind, tok = self.peek()
            if (kind, tok) in (("op", "*"), ("op", "/")):
                self.take()
                rhs = self.unary()
                value = _mul(value, rhs) if tok == "*" else _div(value, rhs)
            elif kind in ("num", "name") or (kind, tok) == ("op", "("):
                # implicit multiplication, e.g. 10X or 2(3X)
                value = _mul(value, self.unary())
            else:
                return value

    def unary(self) -> dict:
        if self.peek() == ("op", "-"):
            self.take()
            return _scale(self.unary(), -1)
        if self.peek() == ("op", "+"):
            self.take()
            return self.unary()
        return self.atom()

    def atom(self) -> dict:
        kind, tok = self.take()
        if kind == "num":
            return {"": Fraction(tok)}
        if kind == "name":
            if tok in ("X", "Y"):
                return {tok: Fraction(1)}
            # a number glued to a symbol, e.g. "10X" tokenises as num + name already;
            # anything else (log3, t, sqrt) is outside the grammar
            raise _NotLinear
        if (kind, tok) == ("op", "("):
            value = self.expr()
            if self.take() != ("op", ")"):
                raise _NotLinear
            return value
        raise _NotLinear


def _combine(a: dict, b: dict, sign: int) -> dict:
    out = dict(a)
    for k, v in b.items():
        out[k] = out.get(k, 0) + sign * v
    return out


def _scale(a: dict, c) -> dict:
    return {k: v * c for k, v in a.items()}


def _is_const(a: dict) -> bool:
    return all(v == 0 for k, v in a.items() if k)


def _mul(a: dict, b: dict) -> dict:
    if _is_const(a):
        return _scale(b, a.get("", 0))
    if _is_const(b):
        return _scale(a, b.get("", 0))
    raise _NotLinear


def _div(a: dict, b: dict) -> dict:
    if not _is_const(b) or b.get("", 0) == 0:
        raise _NotLinear
    return _scale(a, 1 / Fraction(b[""]))


def parse_linear_answer(text: str) -> LinearForm:
    """Normalise an extracted answer to ``aY - bX``.

    Accepts sums and differences of numeric multiples of X and Y (with numeric
    products, quotients and parentheses) and an optional ``name =`` prefix.
    Anything else, a non-zero constant term, or non-integer coefficients give
    the absent form.
    """
    text = text.strip().replace("−", "-").replace("×", "*").replace("·", "*")
    text = re.sub(r"^\$+|\$+$", "", text).strip()
    m = re.match(r"^[A-Za-z_][A-Za-z_0-9]*\s*=(?!=)(.*)$", text, re.DOTALL)
    if m and m.group(0).split("=")[0].strip() not in ("X", "Y"):
        text = m.group(1)
    if not text.strip():
        return ABSENT
    try:
        value = _LinearParser(_tokenize(text)).parse()
    except (_NotLinear, ZeroDivisionError):
        return ABSENT
    if value.get("", 0) != 0:
        return ABSENT
    y, x = value.get("Y", Fraction(0)), value.get("X", Fraction(0))
    if y.denominator != 1 or x.denominator != 1:
        return ABSENT
    return LinearForm(int(y), int(-x))


def check_answer(form: LinearForm, truth: LinearForm) -> bool:
    return form.present and form.a_y == truth.a_y and form.b_x == truth.b_x
