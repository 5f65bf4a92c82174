"""Seeded random BlocksWorld datasets filtered by block count and optimal length."""

from __future__ import annotations

import hashlib
import json
import logging
import random
import string
from dataclasses import asdict, dataclass
from pathlib import Path

from .pddl import Atom, Task, make_task, parse_task, render_task
from .planner import PlanSearchLimits, _Problem, _upper_plan, optimal_plan

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"


class GenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class BwDatasetSpec:
    min_blocks: int
    max_blocks: int
    min_len: int
    max_len: int
    count: int
    seed: int = 0

    def __post_init__(self) -> None:
        if not 1 <= self.min_blocks <= self.max_blocks:
            raise ValueError("block range must be non-empty and start at 1 or more")
        if not 0 <= self.min_len <= self.max_len:
            raise ValueError("optimal length range must be non-empty")
        if self.count <= 0:
            raise ValueError("count must be positive")


# dataset parameters used in the experiments
PRESETS = {
    "main": dict(min_blocks=5, max_blocks=6, min_len=16, max_len=18, count=50),
    "mid": dict(min_blocks=10, max_blocks=12, min_len=30, max_len=32, count=20),
    "large": dict(min_blocks=18, max_blocks=19, min_len=40, max_len=44, count=20),
}


def block_names(n: int) -> list[str]:
    names = []
    width = 1
    while len(names) < n:
        for combo in _words(width):
            names.append(combo)
            if len(names) == n:
                break
        width += 1
    return names


def _words(width: int):
    if width == 1:
        yield from string.ascii_lowercase
        return
    for head in _words(width - 1):
        for ch in string.ascii_lowercase:
            yield head + ch


def _towers(n: int, rng: random.Random) -> list[list[str]]:
    blocks = block_names(n)
    rng.shuffle(blocks)
    towers: list[list[str]] = []
    for b in blocks:
        choice = rng.randrange(len(towers) + 1)
        if choice == len(towers):
            towers.append([b])
        else:
            towers[choice].append(b)
    return towers


def random_state(n_blocks: int, rng: random.Random) -> frozenset[Atom]:
    """Shuffle the blocks, then drop each on the table or on top of a uniformly chosen tower."""
    if n_blocks < 1:
        raise ValueError("need at least one block")
    atoms = {Atom("handempty")}
    for tower in _towers(n_blocks, rng):
        atoms.add(Atom("ontable", (tower[0],)))
        atoms.add(Atom("clear", (tower[-1],)))
        for lower, upper in zip(tower, tower[1:]):
            atoms.add(Atom("on", (upper, lower)))
    return frozenset(atoms)


def goal_atoms(state: frozenset[Atom]) -> frozenset[Atom]:
    return frozenset(a for a in state if a.predicate in ("on", "ontable"))


def candidate_rng(seed: int, index: int, attempt: int) -> random.Random:
    digest = hashlib.sha256(f"{seed}:{index}:{attempt}".encode()).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


def generate_task(
    spec: BwDatasetSpec,
    rng: random.Random | None = None,
    *,
    index: int = 0,
    limits: PlanSearchLimits | None = None,
    max_rejections: int = 20_000,
    allow_uncertified: bool = False,
) -> Task:
    """Sample init/goal pairs until the planner certifies an optimal length in the window.

    With ``rng`` given, candidates are drawn from it; otherwise each candidate gets
    its own generator derived from ``(spec.seed, index, attempt)``.
    """
    limits = limits or PlanSearchLimits(max_expansions=200_000, max_seconds=20.0)
    for attempt in range(max_rejections):
        crng = rng if rng is not None else candidate_rng(spec.seed, index, attempt)
        n = crng.randint(spec.min_blocks, spec.max_blocks)
        init = random_state(n, crng)
        goal = goal_atoms(random_state(n, crng))
        task = make_task(f"task_{index:03d}", sorted(init), sorted(goal))
        prob = _Problem(task)
        lb = prob.heuristic(prob.init)
        if lb > spec.max_len:
            continue
        ub = len(_upper_plan(task, prob))
        if ub < spec.min_len:
            continue
        result = optimal_plan(task, limits)
        if result.certified_optimal:
            if spec.min_len <= result.length <= spec.max_len:
                return _with_meta(task, n, result)
        elif allow_uncertified and result.lower_bound >= spec.min_len and result.upper_bound <= spec.max_len:
            return _with_meta(task, n, result)
    raise GenerationError(f"no task found for {spec} after {max_rejections} candidates")


def _with_meta(task: Task, n: int, result) -> Task:
    meta = {
        "n_blocks": n,
        "optimal_len": result.length if result.certified_optimal else None,
        "lower_bound": result.lower_bound,
        "upper_bound": result.upper_bound,
        "certified_optimal": result.certified_optimal,
    }
    return Task(task.id, task.domain, task.init, task.goal, meta)


def dataset(spec: BwDatasetSpec, out_dir: str | Path | None = None, **kwargs) -> tuple[list[Task], dict]:
    tasks = []
    for i in range(spec.count):
        task = generate_task(spec, index=i, **kwargs)
        log.info("generated %s (%s)", task.id, task.meta)
        tasks.append(task)
    manifest = {
        "kind": "blocksworld",
        "seed": spec.seed,
        "spec": asdict(spec),
        "tasks": [{"id": t.id, "file": f"{t.id}.txt", **t.meta} for t in tasks],
    }
    if out_dir is not None:
        write_dataset(tasks, manifest, out_dir)
    return tasks, manifest


def write_dataset(tasks: list[Task], manifest: dict, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for t in tasks:
        (out / f"{t.id}.txt").write_text(render_task(t) + "\n")
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_dataset(path: str | Path, recertify: bool = False,
                 limits: PlanSearchLimits | None = None) -> list[Task]:
    """Load a BlocksWorld dataset directory; optionally re-run the planner on every task."""
    root = Path(path)
    manifest = json.loads((root / MANIFEST).read_text())
    if manifest.get("kind") != "blocksworld":
        raise ValueError(f"{root} is not a BlocksWorld dataset")
    tasks = []
    for entry in manifest["tasks"]:
        meta = {k: v for k, v in entry.items() if k not in ("id", "file")}
        task = parse_task((root / entry["file"]).read_text(), entry["id"], meta=meta)
        if recertify and meta.get("certified_optimal"):
            result = optimal_plan(task, limits)
            if not result.certified_optimal or result.length != meta["optimal_len"]:
                raise GenerationError(
                    f"{task.id}: manifest says {meta['optimal_len']}, planner found "
                    f"{result.length} (certified={result.certified_optimal})"
                )
        tasks.append(task)
    return tasks
