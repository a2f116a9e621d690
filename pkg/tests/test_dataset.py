import collections

import pytest
from hypothesis import given, strategies as st

from tgplan.dataset import (
    Instance,
    SplitSpec,
    build_dataset,
    gen_blocksworld,
    gen_logistics,
    make_split_spec,
    read_rows,
    row_to_json,
    sample_blocksworld_towers,
    solve_instance,
    split,
    write_rows,
)
from tgplan.pddl import domain_to_pddl, problem_to_pddl


def _inst(d, p):
    return Instance(p.name, domain_to_pddl(d), problem_to_pddl(p))


def _tower_instance():
    # tower c-b-a to tower a-b-c: unstack c, put-down c, unstack b, stack b c, pick-up a, stack a b
    from tgplan.dataset import blocksworld_domain_text

    prob = """(define (problem flip) (:domain blocksworld-4ops) (:objects a b c - block)
      (:init (ontable a) (on b a) (on c b) (clear c) (handempty))
      (:goal (and (on a b) (on b c))))"""
    return Instance("flip", blocksworld_domain_text(), prob)


def test_rows_follow_optimal_plan():
    rows, reason = solve_instance(_tower_instance())
    assert reason is None
    assert [r.h_star for r in rows] == [6, 5, 4, 3, 2, 1, 0]
    for r in rows:
        assert r.lower_bound_hmax <= r.h_star <= 6 and r.lower_bound_blind <= r.h_star
        assert r.ff_value >= r.lower_bound_hmax
    assert rows[-1].goal_count == 0 and rows[-1].lower_bound_blind == 0


def test_cost_four_gives_five_rows():
    for seed in range(200):
        d, p = gen_blocksworld(3, seed)
        rows, _ = solve_instance(_inst(d, p))
        if rows and rows[0].h_star == 4:
            assert len(rows) == 5
            return
    pytest.fail("no 3-block instance of optimal cost 4 found")


def test_trivial_instances_skipped():
    for seed in range(100):
        d, p = gen_blocksworld(1, seed)
        if p.goal <= p.init:
            rows, skipped = build_dataset([_inst(d, p)])
            assert rows == [] and p.name in skipped
            return
    pytest.fail("no trivial instance found")


def test_tower_sampler_is_uniform():
    # 3 blocks: 13 distinct arrangements into ordered towers, unordered set of towers
    rng = __import__("random").Random(0)
    counts = collections.Counter(
        tuple(sorted(tuple(t) for t in sample_blocksworld_towers("abc", rng))) for _ in range(13_000)
    )
    assert len(counts) == 13
    assert all(800 < c < 1200 for c in counts.values())


@given(st.integers(1, 8), st.integers(0, 10**6))
def test_generator_deterministic_and_well_formed(n, seed):
    d1, p1 = gen_blocksworld(n, seed)
    d2, p2 = gen_blocksworld(n, seed)
    assert problem_to_pddl(p1) == problem_to_pddl(p2)
    preds = collections.Counter(a[0] for a in p1.init)
    assert preds["handempty"] == 1 and preds["on"] + preds["ontable"] == n
    assert {a[0] for a in p1.goal} <= {"on", "ontable"}


def test_logistics_generator_has_airports_and_trucks():
    d, p = gen_logistics({"airplanes": 1, "cities": 3, "city_size": 2, "packages": 2, "trucks": 3}, 0)
    init = {a[0] for a in p.init}
    assert {"in-city", "at"} <= init
    rows, reason = solve_instance(_inst(d, p))
    assert reason is None or "goal" in reason


def test_row_json_round_trip(tmp_path):
    rows, _ = solve_instance(_tower_instance())
    path = tmp_path / "rows.jsonl"
    write_rows(path, rows)
    assert read_rows(path) == rows
    text = path.read_text()
    assert text.count("\n") == len(rows) and text.splitlines()[0] == row_to_json(rows[0])


def test_read_rows_reports_line(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"instance_id": "x"}\n')
    with pytest.raises(ValueError, match="bad.jsonl:1"):
        read_rows(path)


def test_split_counts_and_disjointness():
    ids = [f"i{k:03d}" for k in range(100)]
    spec = make_split_spec(ids, seed=4)
    assert (len(spec.train), len(spec.val), len(spec.test), len(spec.plan)) == (60, 15, 15, 10)
    assert sorted(spec.train + spec.val + spec.test + spec.plan) == ids
    assert make_split_spec(reversed(ids), seed=4) == spec
    assert make_split_spec(ids, seed=5) != spec


def test_split_spec_rejects_overlap():
    with pytest.raises(ValueError):
        SplitSpec(("a",), ("a",), (), ())


def test_split_is_by_instance():
    rows = []
    for seed in range(8):
        d, p = gen_blocksworld(3, seed)
        r, _ = solve_instance(_inst(d, p))
        rows += r or []
    ids = sorted({r.instance_id for r in rows})
    parts = split(rows, make_split_spec(ids, 0, (0.5, 0.25, 0.25, 0.0)))
    owners = {name: {r.instance_id for r in part} for name, part in parts.items()}
    assert not owners["train"] & owners["val"] and not owners["train"] & owners["test"]
    assert sum(len(p) for p in parts.values()) == len(rows)


def test_build_dataset_parallel_matches_serial():
    insts = [_inst(*gen_blocksworld(4, s)) for s in range(6)]
    assert build_dataset(insts, jobs=1) == build_dataset(insts, jobs=2)
