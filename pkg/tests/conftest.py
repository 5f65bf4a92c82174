from pathlib import Path

import pytest

from boostbench.pddl import parse_task

REFERENCE = Path(__file__).parent / "fixtures" / "reference"


def reference_text(name: str) -> str:
    return (REFERENCE / f"{name}.txt").read_text()


@pytest.fixture(scope="session")
def b1_task():
    return parse_task(reference_text("B1_bw_task_prompt"), "b1")


@pytest.fixture(scope="session")
def example_task():
    # the small task whose solution is the example shown in every BlocksWorld prompt
    return parse_task(reference_text("B3_bw_strategy_gen"), "example")


def random_bw_state(n: int, seed: int, hold: bool = False) -> frozenset:
    """A random well-formed BlocksWorld state, optionally with one block in the hand."""
    import random

    from boostbench.bwgen import random_state
    from boostbench.pddl import Atom

    rng = random.Random(seed)
    state = set(random_state(n, rng))
    if hold:
        clear = sorted(a.args[0] for a in state if a.predicate == "clear")
        b = rng.choice(clear)
        state -= {Atom("handempty"), Atom("ontable", (b,))}
        below = [a for a in state if a.predicate == "on" and a.args[0] == b]
        if not below:
            state.discard(Atom("clear", (b,)))  # as after pickup
        for a in below:
            # as after unstack, which leaves (clear b) in place
            state.discard(a)
            state.add(Atom("clear", (a.args[1],)))
        state.add(Atom("holding", (b,)))
    return frozenset(state)


def synthetic_result(model, n_tasks, cumulative, initial_tokens, correction_tokens):
    """ExperimentResult rebuilt from made-up transcript records.

    ``cumulative`` is the cumulative solved count after each round; every
    round-0 exchange uses ``initial_tokens`` reasoning tokens and the
    correction exchanges share ``correction_tokens`` as evenly as possible.
    """
    from boostbench.config import ExperimentConfig
    from boostbench.experiment import ExperimentResult, rebuild_rounds

    ids = tuple(f"t{i:03d}" for i in range(n_tasks))
    n_corr = sum(n_tasks - c for c in cumulative[:-1])
    share = [correction_tokens // n_corr + (1 if i < correction_tokens % n_corr else 0) for i in range(n_corr)] \
        if n_corr else []
    records, solved, prev = [], 0, 0
    for k, cum in enumerate(cumulative):
        attempted = ids[prev:] if k else ids
        new = cum - prev
        for j, tid in enumerate(attempted):
            tokens = initial_tokens if k == 0 else share.pop()
            records.append({
                "task_id": tid, "round": k, "response_text": "...",
                "usage": {"prompt": 0, "completion": tokens, "reasoning": tokens, "folded": True},
                "verdict": "solved" if j < new else "incorrect",
            })
        prev = cum
    assert not share
    config = ExperimentConfig(dataset="-", model=model, output_dir="-", rounds=len(cumulative) - 1)
    return ExperimentResult(config, ids, rebuild_rounds(ids, records, len(cumulative) - 1), records)


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
