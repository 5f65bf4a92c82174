import json
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from boostbench.bwgen import (
    PRESETS,
    BwDatasetSpec,
    GenerationError,
    block_names,
    dataset,
    generate_task,
    goal_atoms,
    load_dataset,
    random_state,
)
from boostbench.pddl import check_blocksworld_state, render_state
from boostbench.planner import PlanSearchLimits, optimal_plan

SMALL = BwDatasetSpec(min_blocks=3, max_blocks=4, min_len=4, max_len=8, count=8, seed=3)


def test_spec_validation():
    with pytest.raises(ValueError):
        BwDatasetSpec(5, 4, 1, 2, 1)
    with pytest.raises(ValueError):
        BwDatasetSpec(1, 2, 5, 4, 1)
    with pytest.raises(ValueError):
        BwDatasetSpec(1, 2, 1, 2, 0)


def test_presets_match_experiment_windows():
    assert PRESETS["main"] == dict(min_blocks=5, max_blocks=6, min_len=16, max_len=18, count=50)
    assert (PRESETS["mid"]["min_len"], PRESETS["mid"]["max_len"]) == (30, 32)
    assert (PRESETS["large"]["min_len"], PRESETS["large"]["max_len"]) == (40, 44)


def test_block_names():
    names = block_names(30)
    assert names[:3] == ["a", "b", "c"] and names[26] == "aa"
    assert len(set(names)) == 30


@given(st.integers(1, 12), st.integers(0, 10**6))
def test_random_states_are_well_formed(n, seed):
    s = random_state(n, random.Random(seed))
    assert check_blocksworld_state(s) == []
    assert len({x for a in s for x in a.args}) == n


def test_sampler_reaches_every_three_block_configuration():
    rng = random.Random(0)
    seen = {render_state(random_state(3, rng)) for _ in range(3000)}
    assert len(seen) == 13


def test_goal_atoms_drop_clear_and_hand():
    g = goal_atoms(random_state(4, random.Random(1)))
    assert {a.predicate for a in g} <= {"on", "ontable"}


def test_generated_tasks_lie_in_window():
    tasks, manifest = dataset(SMALL)
    assert len(tasks) == SMALL.count
    for task, entry in zip(tasks, manifest["tasks"]):
        assert SMALL.min_blocks <= len(task.blocks) <= SMALL.max_blocks
        # independent check with exhaustive breadth-first search
        bfs = optimal_plan(task, PlanSearchLimits(mode="exact_bfs"))
        assert bfs.length == entry["optimal_len"]
        assert SMALL.min_len <= bfs.length <= SMALL.max_len
        assert entry["certified_optimal"]


def test_generation_is_deterministic():
    _, m1 = dataset(SMALL)
    _, m2 = dataset(SMALL)
    assert m1 == m2
    _, m3 = dataset(BwDatasetSpec(3, 4, 4, 8, 8, seed=4))
    assert m3 != m1


def test_prefix_stability():
    # task i depends only on (seed, i), so a longer dataset extends a shorter one
    short, _ = dataset(BwDatasetSpec(3, 4, 4, 8, 3, seed=3))
    long, _ = dataset(SMALL)
    assert [t.init for t in short] == [t.init for t in long[:3]]


def test_write_and_reload(tmp_path):
    tasks, manifest = dataset(SMALL, tmp_path / "ds")
    assert json.loads((tmp_path / "ds" / "manifest.json").read_text())["kind"] == "blocksworld"
    loaded = load_dataset(tmp_path / "ds", recertify=True)
    assert [t.id for t in loaded] == [t.id for t in tasks]
    assert [t.init_state for t in loaded] == [t.init_state for t in tasks]
    assert [t.goal_atoms for t in loaded] == [t.goal_atoms for t in tasks]


def test_recertify_catches_a_wrong_manifest(tmp_path):
    dataset(SMALL, tmp_path / "ds")
    path = tmp_path / "ds" / "manifest.json"
    manifest = json.loads(path.read_text())
    manifest["tasks"][0]["optimal_len"] += 1
    path.write_text(json.dumps(manifest))
    with pytest.raises(GenerationError):
        load_dataset(tmp_path / "ds", recertify=True)


def test_load_rejects_other_kinds(tmp_path):
    (tmp_path / "manifest.json").write_text(json.dumps({"kind": "crt", "tasks": []}))
    with pytest.raises(ValueError):
        load_dataset(tmp_path)


def test_impossible_window_fails():
    with pytest.raises(GenerationError):
        generate_task(BwDatasetSpec(2, 2, 10, 12, 1), max_rejections=50)


def test_mid_preset_task():
    spec = BwDatasetSpec(seed=0, **dict(PRESETS["mid"], count=1))
    task = generate_task(spec, index=0)
    assert 30 <= task.meta["optimal_len"] <= 32 and task.meta["certified_optimal"]
