"""Instance generators, optimal-plan datasets and instance-level splits."""

from __future__ import annotations

import json
import logging
import math
import random
from dataclasses import asdict, dataclass, field
from importlib import resources
from typing import Iterable, Sequence

from . import heuristics
from .pddl import Domain, GroundTask, Problem, TypedParam, format_atom, ground, parse_domain, parse_problem
from .search import SOLVED, astar

__all__ = [
    "Instance",
    "DatasetRow",
    "SplitSpec",
    "blocksworld_domain",
    "logistics_domain",
    "gen_blocksworld",
    "gen_logistics",
    "sample_blocksworld_towers",
    "solve_instance",
    "build_dataset",
    "make_split_spec",
    "split",
    "write_rows",
    "read_rows",
    "row_to_json",
]

log = logging.getLogger(__name__)

ROW_FIELDS = (
    "instance_id",
    "state",
    "h_star",
    "lower_bound_hmax",
    "lower_bound_blind",
    "ff_value",
    "goal_count",
    "total_ignored",
    "mean_ignored",
)


def _data_text(name: str) -> str:
    return resources.files("tgplan").joinpath("data").joinpath(name).read_text(encoding="utf-8")


def blocksworld_domain_text() -> str:
    return _data_text("blocksworld.pddl")


def logistics_domain_text() -> str:
    return _data_text("logistics.pddl")


def blocksworld_domain() -> Domain:
    return parse_domain(blocksworld_domain_text())


def logistics_domain() -> Domain:
    return parse_domain(logistics_domain_text())


@dataclass
class Instance:
    """A problem with its PDDL texts and the generator parameters that made it."""

    id: str
    domain_text: str
    problem_text: str
    meta: dict = field(default_factory=dict)

    def task(self) -> GroundTask:
        d = parse_domain(self.domain_text)
        return ground(d, parse_problem(self.problem_text, d))


# ---------------------------------------------------------------- generators


def _lah(n: int, k: int) -> int:
    return math.comb(n - 1, k - 1) * math.factorial(n) // math.factorial(k)


def sample_blocksworld_towers(blocks: Sequence[str], rng: random.Random) -> list[list[str]]:
    """Uniformly random tower configuration (bottom block first).

    Configurations with ``k`` towers number ``L(n, k)`` (Lah numbers); draw
    ``k`` in proportion, then a random permutation cut at ``k - 1`` distinct
    positions.
    """
    n = len(blocks)
    weights = [_lah(n, k) for k in range(1, n + 1)]
    r = rng.randrange(sum(weights))
    k = 1
    for k, w in enumerate(weights, start=1):
        if r < w:
            break
        r -= w
    order = list(blocks)
    rng.shuffle(order)
    cuts = sorted(rng.sample(range(1, n), k - 1))
    bounds = [0] + cuts + [n]
    return [order[bounds[i]:bounds[i + 1]] for i in range(k)]


def _tower_atoms(towers: list[list[str]], with_clear: bool) -> list[tuple]:
    atoms = []
    for tower in towers:
        atoms.append(("ontable", tower[0]))
        for below, above in zip(tower, tower[1:]):
            atoms.append(("on", above, below))
        if with_clear:
            atoms.append(("clear", tower[-1]))
    return atoms


def gen_blocksworld(n_blocks: int, seed: int) -> tuple[Domain, Problem]:
    """Random blocksworld problem with independent uniform init and goal towers."""
    if n_blocks < 1:
        raise ValueError("n_blocks must be >= 1")
    rng = random.Random(f"blocksworld-{n_blocks}-{seed}")
    blocks = [f"b{i}" for i in range(1, n_blocks + 1)]
    init = _tower_atoms(sample_blocksworld_towers(blocks, rng), True) + [("handempty",)]
    goal = _tower_atoms(sample_blocksworld_towers(blocks, rng), False)
    domain = blocksworld_domain()
    problem = Problem(
        f"bw-n{n_blocks}-s{seed}",
        domain.name,
        tuple(TypedParam(b, "block") for b in blocks),
        frozenset(init),
        frozenset(goal),
    )
    return domain, problem


def gen_logistics(params: dict, seed: int) -> tuple[Domain, Problem]:
    """Random logistics problem.

    ``params`` keys: airplanes, cities, city_size, packages, trucks.  Each
    city's first location is its airport.  Trucks are assigned round-robin to
    cities, so every city has a truck whenever ``trucks >= cities``.
    """
    keys = ("airplanes", "cities", "city_size", "packages", "trucks")
    p = {k: int(params[k]) for k in keys}
    if any(v < 1 for v in p.values()):
        raise ValueError(f"all logistics parameters must be >= 1, got {p}")
    rng = random.Random("logistics-" + "-".join(str(p[k]) for k in keys) + f"-{seed}")
    objects = []
    init = []
    cities = [f"c{i}" for i in range(1, p["cities"] + 1)]
    places = {}
    for c in cities:
        locs = [f"{c}-l{j}" for j in range(1, p["city_size"] + 1)]
        places[c] = locs
        objects.append(TypedParam(c, "city"))
        objects.append(TypedParam(locs[0], "airport"))
        objects.extend(TypedParam(l, "location") for l in locs[1:])
        init.extend(("in-city", l, c) for l in locs)
    airports = [places[c][0] for c in cities]
    all_places = [l for c in cities for l in places[c]]
    for i in range(1, p["trucks"] + 1):
        t = f"t{i}"
        objects.append(TypedParam(t, "truck"))
        city = cities[(i - 1) % len(cities)]
        init.append(("at", t, rng.choice(places[city])))
    for i in range(1, p["airplanes"] + 1):
        a = f"a{i}"
        objects.append(TypedParam(a, "airplane"))
        init.append(("at", a, rng.choice(airports)))
    goal = []
    for i in range(1, p["packages"] + 1):
        pk = f"p{i}"
        objects.append(TypedParam(pk, "package"))
        init.append(("at", pk, rng.choice(all_places)))
        goal.append(("at", pk, rng.choice(all_places)))
    domain = logistics_domain()
    name = "lg-" + "-".join(f"{p[k]}" for k in keys) + f"-s{seed}"
    return domain, Problem(name, domain.name, tuple(objects), frozenset(init), frozenset(goal))


# ------------------------------------------------------------------ datasets


@dataclass(frozen=True)
class DatasetRow:
    instance_id: str
    state: tuple[str, ...]
    h_star: int
    lower_bound_hmax: int
    lower_bound_blind: int
    ff_value: int
    goal_count: int
    total_ignored: int
    mean_ignored: float


def row_to_json(row: DatasetRow) -> str:
    d = asdict(row)
    d["state"] = list(row.state)
    return json.dumps({k: d[k] for k in ROW_FIELDS}, ensure_ascii=False)


def _row_from_dict(d: dict) -> DatasetRow:
    missing = [k for k in ROW_FIELDS if k not in d]
    if missing:
        raise ValueError(f"dataset row missing fields {missing}")
    return DatasetRow(
        instance_id=str(d["instance_id"]),
        state=tuple(d["state"]),
        h_star=int(d["h_star"]),
        lower_bound_hmax=int(d["lower_bound_hmax"]),
        lower_bound_blind=int(d["lower_bound_blind"]),
        ff_value=int(d["ff_value"]),
        goal_count=int(d["goal_count"]),
        total_ignored=int(d["total_ignored"]),
        mean_ignored=float(d["mean_ignored"]),
    )


def write_rows(path, rows: Iterable[DatasetRow]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in rows:
            fh.write(row_to_json(r) + "\n")


def read_rows(path) -> list[DatasetRow]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rows.append(_row_from_dict(json.loads(line)))
            except (ValueError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
    return rows


def state_rows(task: GroundTask, instance_id: str, states: list[int], costs: list[int]) -> list[DatasetRow]:
    rows = []
    for s, hs in zip(states, costs):
        info = heuristics.ff(task, s)
        hm = heuristics.hmax(task, s)
        rows.append(
            DatasetRow(
                instance_id=instance_id,
                state=tuple(format_atom(a) for a in task.state_atoms(s)),
                h_star=hs,
                lower_bound_hmax=int(hm),
                lower_bound_blind=heuristics.blind(task, s),
                ff_value=int(info.ff_value),
                goal_count=heuristics.goal_count(task, s),
                total_ignored=info.total_ignored_effects,
                mean_ignored=info.mean_ignored_effects,
            )
        )
    return rows


def solve_instance(inst: Instance, budget: int = 200_000):
    """Rows for one instance, or ``(None, reason)`` when it is skipped."""
    task = inst.task()
    if task.goal & task.init == task.goal:
        return None, "goal satisfied in initial state"
    res = astar(task, lambda s: heuristics.hmax(task, s), max_expansions=budget)
    if res.status != SOLVED:
        return None, f"not solved by A*+hmax within {budget} expansions ({res.status})"
    states = [task.init]
    s = task.init
    for ai in res.plan:
        a = task.actions[ai]
        s = (s & ~a.delete) | a.add
        states.append(s)
    costs = [res.cost - k for k in range(len(states))]
    return state_rows(task, inst.id, states, costs), None


def _solve_job(args):
    inst, budget = args
    return inst.id, solve_instance(inst, budget)


def build_dataset(
    instances: Sequence[Instance], budget: int = 200_000, jobs: int = 1
) -> tuple[list[DatasetRow], dict[str, str]]:
    """Solve every instance optimally and emit one row per state on the plan.

    Returns the rows sorted by (instance id, step) and a mapping of skipped
    instance ids to the reason they were skipped.
    """
    work = [(inst, budget) for inst in instances]
    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_solve_job, work))
    else:
        results = [_solve_job(w) for w in work]
    rows: list[DatasetRow] = []
    skipped: dict[str, str] = {}
    for iid, (inst_rows, reason) in sorted(results, key=lambda r: r[0]):
        if inst_rows is None:
            log.info("skipping %s: %s", iid, reason)
            skipped[iid] = reason
        else:
            rows.extend(inst_rows)
    return rows, skipped


# -------------------------------------------------------------------- splits


@dataclass(frozen=True)
class SplitSpec:
    train: tuple[str, ...]
    val: tuple[str, ...]
    test: tuple[str, ...]
    plan: tuple[str, ...]
    seed: int = 0

    def __post_init__(self):
        seen: set[str] = set()
        for part in (self.train, self.val, self.test, self.plan):
            overlap = seen.intersection(part)
            if overlap:
                raise ValueError(f"split parts overlap on {sorted(overlap)[:5]}")
            if len(set(part)) != len(part):
                raise ValueError("duplicate instance id inside a split part")
            seen.update(part)

    def to_dict(self) -> dict:
        return {k: list(getattr(self, k)) for k in ("train", "val", "test", "plan")} | {"seed": self.seed}


def make_split_spec(
    instance_ids: Iterable[str], seed: int, ratios: Sequence[float] = (0.6, 0.15, 0.15, 0.1)
) -> SplitSpec:
    """Shuffle instance ids with ``seed`` and cut them by ``ratios``.

    The val/test/plan counts are ``round(ratio * n)``; train takes the rest.
    """
    ids = sorted(set(instance_ids))
    rng = random.Random(seed)
    rng.shuffle(ids)
    n = len(ids)
    counts = [round(r * n) for r in ratios[1:]]
    n_train = n - sum(counts)
    if n_train < 0:
        raise ValueError("split ratios exceed the number of instances")
    cuts = [0, n_train]
    for c in counts:
        cuts.append(cuts[-1] + c)
    parts = [tuple(sorted(ids[cuts[i]:cuts[i + 1]])) for i in range(4)]
    return SplitSpec(*parts, seed=seed)


def split(rows: Sequence[DatasetRow], spec: SplitSpec) -> dict[str, list[DatasetRow]]:
    """Partition rows by the instance lists of ``spec``; row order is kept."""
    where = {}
    for name in ("train", "val", "test", "plan"):
        for iid in getattr(spec, name):
            where[iid] = name
    out = {name: [] for name in ("train", "val", "test", "plan")}
    for r in rows:
        if r.instance_id in where:
            out[where[r.instance_id]].append(r)
    return out
