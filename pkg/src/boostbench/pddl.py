"""STRIPS core for the prompt-style BlocksWorld syntax.

The text format is the one shown to the model::

    action : pickup (block)
    preconds : (clear block), (ontable block), (handempty)
    effects : (holding block), not(ontable block), not(clear block), not(handempty)

States are sets of ground atoms. Plans are sequences of ground actions written
one per line as ``(unstack d c)``.
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

# predicate -> arity for the BlocksWorld vocabulary
BLOCKSWORLD_PREDICATES: dict[str, int] = {
    "handempty": 0,
    "clear": 1,
    "on": 2,
    "ontable": 1,
    "holding": 1,
}

# rendering order of predicate groups
_GROUP_ORDER = {"handempty": 0, "clear": 1, "on": 2, "ontable": 3, "holding": 4}

_NAME_RE = re.compile(r"^[a-z][a-z0-9_-]*$")


class PDDLError(ValueError):
    """Raised for malformed domain, state, or plan text."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class InvalidStateError(ValueError):
    pass


class NotApplicableError(ValueError):
    """Action preconditions do not hold in the given state."""

    def __init__(self, action: "GroundAction", missing: Sequence["Atom"], reason: str | None = None):
        self.action = action
        self.missing = tuple(missing)
        if reason is None:
            reason = "precondition " + ", ".join(str(a) for a in self.missing) + " not satisfied"
        self.reason = reason
        super().__init__(f"{action} is not applicable: {reason}")


@dataclass(frozen=True, order=True)
class Atom:
    predicate: str
    args: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not _NAME_RE.match(self.predicate):
            raise PDDLError(f"bad predicate name {self.predicate!r}")
        for a in self.args:
            if not _NAME_RE.match(a):
                raise PDDLError(f"bad object name {a!r} in ({self.predicate} ...)")
        arity = BLOCKSWORLD_PREDICATES.get(self.predicate)
        if arity is not None and arity != len(self.args):
            raise PDDLError(
                f"predicate {self.predicate} takes {arity} argument(s), got {len(self.args)}"
            )

    def substitute(self, binding: Mapping[str, str]) -> "Atom":
        return Atom(self.predicate, tuple(binding[a] for a in self.args))

    def __str__(self) -> str:
        return "(" + " ".join((self.predicate,) + self.args) + ")"


@dataclass(frozen=True)
class GroundAction:
    name: str
    args: tuple[str, ...] = ()

    def __str__(self) -> str:
        return "(" + " ".join((self.name,) + self.args) + ")"


@dataclass(frozen=True)
class ActionSchema:
    name: str
    params: tuple[str, ...]
    preconds: tuple[Atom, ...]
    # ordered (atom, is_add) pairs; order is kept for faithful re-rendering
    effects: tuple[tuple[Atom, bool], ...]

    @property
    def add_effects(self) -> tuple[Atom, ...]:
        return tuple(a for a, add in self.effects if add)

    @property
    def del_effects(self) -> tuple[Atom, ...]:
        return tuple(a for a, add in self.effects if not add)

    def ground(self, args: Sequence[str]) -> tuple[frozenset[Atom], frozenset[Atom], frozenset[Atom]]:
        """Return (preconditions, adds, deletes) for the given arguments."""
        if len(args) != len(self.params):
            raise PDDLError(f"action {self.name} takes {len(self.params)} argument(s), got {len(args)}")
        binding = dict(zip(self.params, args))
        pre = frozenset(a.substitute(binding) for a in self.preconds)
        add = frozenset(a.substitute(binding) for a in self.add_effects)
        dele = frozenset(a.substitute(binding) for a in self.del_effects)
        return pre, add, dele


@dataclass(frozen=True)
class DomainModel:
    actions: tuple[ActionSchema, ...]

    def __post_init__(self) -> None:
        names = [a.name for a in self.actions]
        if len(set(names)) != len(names):
            raise PDDLError("duplicate action name")

    def schema(self, name: str) -> ActionSchema:
        for a in self.actions:
            if a.name == name:
                return a
        raise KeyError(name)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(a.name for a in self.actions)


@dataclass(frozen=True)
class Task:
    id: str
    domain: DomainModel
    init: tuple[Atom, ...]
    goal: tuple[Atom, ...]
    meta: dict | None = field(default=None, compare=False)

    @property
    def init_state(self) -> frozenset[Atom]:
        return frozenset(self.init)

    @property
    def goal_atoms(self) -> frozenset[Atom]:
        return frozenset(self.goal)

    @property
    def blocks(self) -> tuple[str, ...]:
        return objects_of(self.init)


@dataclass(frozen=True)
class Failure:
    step_index: int  # 1-based
    action: GroundAction
    reason: str


@dataclass(frozen=True)
class ExecutionTrace:
    states: tuple[frozenset[Atom], ...]
    executed: int
    failure: Failure | None = None

    @property
    def final_state(self) -> frozenset[Atom]:
        return self.states[-1]


@dataclass(frozen=True)
class FirstFailure:
    step_index: int
    action: GroundAction
    state_before: frozenset[Atom]
    reason: str = ""


@dataclass(frozen=True)
class ValidationReport:
    fully_executable: bool
    goal_satisfied: bool
    final_state: frozenset[Atom]
    first_failure: FirstFailure | None = None
    executed: int = 0


# ---------------------------------------------------------------------------
# parsing

_ATOM_ITEM_RE = re.compile(r"^(not\s*)?\(\s*([^()]*?)\s*\)$")
_ACTION_HEAD_RE = re.compile(r"^action\s*:\s*([A-Za-z][\w-]*)\s*\(([^()]*)\)\s*$")
_FIELD_RE = re.compile(r"^(preconds|effects)\s*:\s*(.*)$")


def _make_atom(tokens: Sequence[str], vocabulary: Mapping[str, int] | None, line: int | None) -> Atom:
    if not tokens:
        raise PDDLError("empty atom", line)
    pred, args = tokens[0], tuple(tokens[1:])
    if vocabulary is not None:
        if pred not in vocabulary:
            raise PDDLError(f"unknown predicate {pred!r}", line)
        if vocabulary[pred] != len(args):
            raise PDDLError(f"predicate {pred} takes {vocabulary[pred]} argument(s), got {len(args)}", line)
    try:
        return Atom(pred, args)
    except PDDLError as exc:
        raise PDDLError(str(exc), line) from None


def _split_items(text: str, line: int) -> list[str]:
    items, depth, buf = [], 0, []
    for ch in text:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
            if depth < 0:
                raise PDDLError("unbalanced parentheses", line)
        if ch == "," and depth == 0:
            items.append("".join(buf).strip())
            buf = []
        else:
            buf.append(ch)
    if depth:
        raise PDDLError("unbalanced parentheses", line)
    items.append("".join(buf).strip())
    return [i for i in items if i]


def _parse_atom_list(
    text: str, line: int, vocabulary: Mapping[str, int] | None, allow_negation: bool
) -> list[tuple[Atom, bool]]:
    out = []
    for item in _split_items(text, line):
        m = _ATOM_ITEM_RE.match(item)
        if not m:
            raise PDDLError(f"malformed atom {item!r}", line)
        negated = bool(m.group(1))
        if negated and not allow_negation:
            raise PDDLError(f"negative literal not allowed here: {item!r}", line)
        out.append((_make_atom(m.group(2).split(), vocabulary, line), not negated))
    return out


def parse_domain(
    text: str, vocabulary: Mapping[str, int] | None = BLOCKSWORLD_PREDICATES
) -> DomainModel:
    """Parse ``action :`` blocks. Lines before the first block are ignored."""
    schemas: list[ActionSchema] = []
    current: dict | None = None

    def finish() -> None:
        if current is None:
            return
        if current["preconds"] is None or current["effects"] is None:
            raise PDDLError(f"action {current['name']} needs preconds and effects lines", current["line"])
        params = current["params"]
        for atom in list(current["preconds"]) + [a for a, _ in current["effects"]]:
            for arg in atom.args:
                if arg not in params:
                    raise PDDLError(
                        f"variable {arg!r} in action {current['name']} is not a parameter", current["line"]
                    )
        if any(s.name == current["name"] for s in schemas):
            raise PDDLError(f"duplicate action name {current['name']!r}", current["line"])
        schemas.append(
            ActionSchema(
                name=current["name"],
                params=params,
                preconds=tuple(current["preconds"]),
                effects=tuple(current["effects"]),
            )
        )

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        head = _ACTION_HEAD_RE.match(line)
        if head:
            finish()
            params = tuple(head.group(2).split())
            current = {"name": head.group(1).lower(), "params": params, "preconds": None,
                       "effects": None, "line": lineno}
            continue
        if current is None:
            if line.lower().startswith(("preconds", "effects")):
                raise PDDLError("field outside an action block", lineno)
            continue
        fm = _FIELD_RE.match(line)
        if not fm:
            raise PDDLError(f"unexpected line in action {current['name']}: {line!r}", lineno)
        key, body = fm.groups()
        if current[key] is not None:
            raise PDDLError(f"repeated {key} line", lineno)
        if key == "preconds":
            current[key] = [a for a, _ in _parse_atom_list(body, lineno, vocabulary, allow_negation=False)]
        else:
            current[key] = _parse_atom_list(body, lineno, vocabulary, allow_negation=True)
    finish()
    if not schemas:
        raise PDDLError("no action blocks")
    return DomainModel(tuple(schemas))


def _scan_parens(text: str) -> list[tuple[str, int]]:
    """Return (content, line) for each top-level parenthesised group."""
    groups, depth, buf, line, start_line = [], 0, [], 1, 1
    for ch in text:
        if ch == "\n":
            line += 1
        if ch == "(":
            if depth:
                raise PDDLError("nested parentheses", line)
            depth, buf, start_line = 1, [], line
        elif ch == ")":
            if not depth:
                raise PDDLError("unbalanced parentheses", line)
            depth = 0
            groups.append(("".join(buf), start_line))
        elif depth:
            buf.append(ch)
        elif not ch.isspace():
            raise PDDLError(f"unexpected character {ch!r} outside an atom", line)
    if depth:
        raise PDDLError("unbalanced parentheses", start_line)
    return groups


def parse_atoms(text: str, vocabulary: Mapping[str, int] | None = BLOCKSWORLD_PREDICATES) -> tuple[Atom, ...]:
    """Ordered, duplicate-free atoms from whitespace-separated ``(pred args)`` groups."""
    seen: dict[Atom, None] = {}
    for content, line in _scan_parens(text):
        seen.setdefault(_make_atom(content.split(), vocabulary, line), None)
    return tuple(seen)


def parse_state(text: str, vocabulary: Mapping[str, int] | None = BLOCKSWORLD_PREDICATES) -> frozenset[Atom]:
    return frozenset(parse_atoms(text, vocabulary))


def parse_action(text: str, domain: DomainModel | None = None, line: int | None = None) -> GroundAction:
    m = re.fullmatch(r"\s*\(\s*([^()]*?)\s*\)\s*", text)
    if not m or not m.group(1):
        raise PDDLError(f"not an action: {text.strip()!r}", line)
    tokens = m.group(1).split()
    name, args = tokens[0].lower(), tuple(tokens[1:])
    if domain is not None:
        try:
            schema = domain.schema(name)
        except KeyError:
            raise PDDLError(f"unknown action {name!r}", line) from None
        if len(schema.params) != len(args):
            raise PDDLError(f"action {name} takes {len(schema.params)} argument(s), got {len(args)}", line)
    for a in args:
        if not _NAME_RE.match(a):
            raise PDDLError(f"bad object name {a!r}", line)
    return GroundAction(name, args)


def parse_plan_strict(text: str, domain: DomainModel | None = None) -> list[GroundAction]:
    """One parenthesised action per non-blank line, nothing else."""
    domain = domain or blocksworld_domain()
    plan = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        if raw.strip():
            plan.append(parse_action(raw, domain, lineno))
    return plan


_TASK_RE = re.compile(
    r"Initial State:\s*\n(?P<init>.*?)\n\s*Goal:[ \t]*\n?(?P<goal>.*?)(?:\n\s*Solution:.*)?\s*$",
    re.DOTALL,
)


def parse_task(text: str, task_id: str = "task", domain: DomainModel | None = None,
               meta: dict | None = None) -> Task:
    """Parse a task written as ``Initial State:`` / ``Goal:`` sections.

    Anything before ``Initial State:`` (e.g. the rest of a full prompt) is skipped.
    """
    idx = text.rfind("Initial State:")
    if idx < 0:
        raise PDDLError("missing 'Initial State:' section")
    m = _TASK_RE.match(text[idx:])
    if not m:
        raise PDDLError("missing 'Goal:' section")
    return Task(
        id=task_id,
        domain=domain or blocksworld_domain(),
        init=parse_atoms(m.group("init")),
        goal=parse_atoms(m.group("goal")),
        meta=meta,
    )


# ---------------------------------------------------------------------------
# rendering

def _atom_key(atom: Atom):
    return _GROUP_ORDER.get(atom.predicate, len(_GROUP_ORDER)), atom.predicate


def render_state(atoms: Iterable[Atom]) -> str:
    """One atom per line grouped handempty, clear, on, ontable, holding.

    Sets are sorted fully; sequences keep their order within a group.
    """
    if isinstance(atoms, (set, frozenset)):
        ordered = sorted(atoms, key=lambda a: (_atom_key(a), a.args))
    else:
        ordered = sorted(atoms, key=_atom_key)
    return "\n".join(str(a) for a in ordered)


def _render_atom_list(items: Iterable[tuple[Atom, bool]]) -> str:
    return ", ".join(str(a) if positive else f"not{a}" for a, positive in items)


def render_schema(schema: ActionSchema) -> str:
    return "\n".join([
        f"action : {schema.name} ({' '.join(schema.params)})",
        "preconds : " + _render_atom_list((a, True) for a in schema.preconds),
        "effects : " + _render_atom_list(schema.effects),
    ])


def render_domain(domain: DomainModel) -> str:
    return "\n\n".join(render_schema(s) for s in domain.actions)


def render_task(task: Task) -> str:
    return f"Initial State:\n{render_state(task.init)}\n\nGoal:\n{render_state(task.goal)}"


def render_plan(plan: Iterable[GroundAction]) -> str:
    return "\n".join(str(a) for a in plan)


# ---------------------------------------------------------------------------
# semantics

def objects_of(atoms: Iterable[Atom]) -> tuple[str, ...]:
    return tuple(sorted({arg for a in atoms for arg in a.args}))


def check_blocksworld_state(atoms: Iterable[Atom]) -> list[str]:
    """Return a list of violated BlocksWorld state invariants (empty if well formed)."""
    atoms = frozenset(atoms)
    problems = []
    blocks = objects_of(atoms)
    holding = [a.args[0] for a in atoms if a.predicate == "holding"]
    handempty = Atom("handempty") in atoms
    if len(holding) > 1:
        problems.append("more than one block held")
    if handempty == bool(holding):
        problems.append("handempty must hold exactly when no block is held")
    below: dict[str, str] = {}
    above: dict[str, list[str]] = {}
    for a in atoms:
        if a.predicate == "on":
            top, bottom = a.args
            if top == bottom:
                problems.append(f"block {top} on itself")
            below.setdefault(top, bottom)
            above.setdefault(bottom, []).append(top)
    for b in blocks:
        places = (Atom("ontable", (b,)) in atoms) + sum(1 for a in atoms if a.predicate == "on" and a.args[0] == b) \
            + (b in holding)
        if places != 1:
            problems.append(f"block {b} must be in exactly one place, found {places}")
        if len(above.get(b, [])) > 1:
            problems.append(f"block {b} supports more than one block")
        # the domain's unstack never deletes (clear top-block), so a held block may keep it
        if b in holding:
            continue
        should_be_clear = not above.get(b)
        if (Atom("clear", (b,)) in atoms) != should_be_clear:
            problems.append(f"clear {b} is inconsistent")
    for b in blocks:
        seen, cur = {b}, b
        while cur in below:
            cur = below[cur]
            if cur in seen:
                problems.append(f"cycle in on-relation through {b}")
                break
            seen.add(cur)
    return problems


def applicable_actions(state: Iterable[Atom], domain: DomainModel,
                       objects: Sequence[str] | None = None) -> frozenset[GroundAction]:
    state = frozenset(state)
    objs = tuple(objects) if objects is not None else objects_of(state)
    out = set()
    for schema in domain.actions:
        for args in itertools.product(objs, repeat=len(schema.params)):
            pre, _, _ = schema.ground(args)
            if pre <= state:
                out.add(GroundAction(schema.name, args))
    return frozenset(out)


def apply(state: Iterable[Atom], action: GroundAction, domain: DomainModel) -> frozenset[Atom]:
    """Successor state; raises NotApplicableError if a precondition is missing."""
    state = frozenset(state)
    try:
        schema = domain.schema(action.name)
    except KeyError:
        raise NotApplicableError(action, (), reason=f"unknown action {action.name!r}") from None
    if len(schema.params) != len(action.args):
        raise NotApplicableError(
            action, (), reason=f"action {action.name} takes {len(schema.params)} argument(s)"
        )
    pre, add, dele = schema.ground(action.args)
    missing = sorted(pre - state, key=lambda a: (_atom_key(a), a.args))
    if missing:
        raise NotApplicableError(action, missing)
    return (state - dele) | add


def execute_plan(init: Iterable[Atom], plan: Sequence[GroundAction], domain: DomainModel) -> ExecutionTrace:
    states = [frozenset(init)]
    for i, action in enumerate(plan, start=1):
        try:
            states.append(apply(states[-1], action, domain))
        except NotApplicableError as exc:
            return ExecutionTrace(tuple(states), i - 1, Failure(i, action, exc.reason))
    return ExecutionTrace(tuple(states), len(plan))


def validate(task: Task, plan: Sequence[GroundAction]) -> ValidationReport:
    trace = execute_plan(task.init, plan, task.domain)
    final = trace.final_state
    if trace.failure is not None:
        f = trace.failure
        return ValidationReport(
            fully_executable=False,
            goal_satisfied=False,
            final_state=final,
            first_failure=FirstFailure(f.step_index, f.action, final, f.reason),
            executed=trace.executed,
        )
    return ValidationReport(
        fully_executable=True,
        goal_satisfied=task.goal_atoms <= final,
        final_state=final,
        executed=trace.executed,
    )


# ---------------------------------------------------------------------------
# the built-in BlocksWorld domain

BLOCKSWORLD_DOMAIN_TEXT = """\
action : pickup (block)
preconds : (clear block), (ontable block), (handempty)
effects : (holding block), not(ontable block), not(clear block), not(handempty)

action : putdown (block)
preconds : (holding block)
effects : not(holding block), (clear block), (ontable block), (handempty)

action : unstack (top-block bottom-block)
preconds : (on top-block bottom-block), (clear top-block), (handempty)
effects : (holding top-block), (clear bottom-block), not(on top-block bottom-block), not(clear bottom-block), not(handempty)

action : stack (top-block bottom-block)
preconds : (holding top-block), (clear bottom-block)
effects : (on top-block bottom-block), (clear top-block), (handempty), not(holding top-block), not(clear bottom-block)"""

_BW_DOMAIN: DomainModel | None = None


def blocksworld_domain() -> DomainModel:
    global _BW_DOMAIN
    if _BW_DOMAIN is None:
        _BW_DOMAIN = parse_domain(BLOCKSWORLD_DOMAIN_TEXT)
    return _BW_DOMAIN


def make_task(task_id: str, init: Iterable[Atom], goal: Iterable[Atom], meta: dict | None = None,
              check: bool = True) -> Task:
    """Build a BlocksWorld task, validating the initial state and goal objects."""
    init = tuple(dict.fromkeys(init))
    goal = tuple(dict.fromkeys(goal))
    if check:
        problems = check_blocksworld_state(init)
        if problems:
            raise InvalidStateError("; ".join(problems))
        extra = set(objects_of(goal)) - set(objects_of(init))
        if extra:
            raise InvalidStateError(f"goal mentions unknown blocks: {sorted(extra)}")
    return Task(task_id, blocksworld_domain(), init, goal, meta)
