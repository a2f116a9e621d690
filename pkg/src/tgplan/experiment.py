"""Experiment pipeline: generate -> dataset -> train -> eval -> plan.

Every stage reads its inputs from and writes its outputs to the experiment
output directory, so each report can be recomputed from the files on disk.

Layout under ``out``::

    instances/domain.pddl, instances/<id>.pddl, instances/<id>.json, instances/index.json
    dataset/{rows,train,val,test}.jsonl, dataset/split.json, dataset/skipped.json
    checkpoints/<cell>.json, curves/<cell>.csv
    reports/eval.json, reports/plan.json
"""

from __future__ import annotations

import copy
import csv
import io
import itertools
import json
import logging
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from . import heuristics
from .dataset import (
    Instance,
    build_dataset,
    gen_blocksworld,
    gen_logistics,
    make_split_spec,
    read_rows,
    split,
    write_rows,
    SplitSpec,
)
from .learn import Checkpoint, TrainConfig, evaluate, heuristic_fn, train
from .pddl import domain_to_pddl, ground, parse_domain, parse_problem, problem_to_pddl
from .search import SOLVED, gbfs

__all__ = [
    "ExperimentConfig",
    "load_config",
    "cmd_generate",
    "cmd_dataset",
    "cmd_train",
    "cmd_eval",
    "cmd_plan",
    "run_all",
    "plan_heuristic",
]

log = logging.getLogger(__name__)

PLAN_SEED_OFFSET = 1_000_000

DEFAULTS: dict[str, Any] = {
    "out": "runs/experiment",
    "seed": 0,
    "eval_cap": 10_000,
    "jobs": 1,
    "budget": 200_000,
    "domain": {"name": "blocksworld", "n_instances": 150, "min_blocks": 3, "max_blocks": 7, "n_plan": 50},
    "split": {"train": 0.6, "val": 0.2, "test": 0.2, "plan": 0.0},
    "train": {"steps": 10_000, "batch": 256, "lr": 0.01, "val_every": 50},
    "grid": {
        "dist": ["gaussian", "truncated"],
        "sigma": ["learned", "fixed"],
        "residual": ["ff", "none"],
        "bound": ["hmax"],
    },
    "seeds": [0, 1, 2, 3, 4],
}


class DataError(ValueError):
    """Missing or inconsistent experiment artifacts."""


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in extra.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class ExperimentConfig:
    out: Path
    seed: int
    eval_cap: int
    jobs: int
    budget: int
    domain: dict
    split: dict
    train: dict
    grid: dict
    seeds: list

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = _merge(DEFAULTS, d)
        unknown = set(d) - set(DEFAULTS)
        if unknown:
            raise ValueError(f"unknown config keys {sorted(unknown)}")
        cfg = cls(
            out=Path(d["out"]),
            seed=int(d["seed"]),
            eval_cap=int(d["eval_cap"]),
            jobs=int(d["jobs"]),
            budget=int(d["budget"]),
            domain=d["domain"],
            split=d["split"],
            train=d["train"],
            grid=d["grid"],
            seeds=[int(s) for s in d["seeds"]],
        )
        if cfg.eval_cap < 1:
            raise ValueError("eval_cap must be >= 1")
        cfg.cells()  # grid values are validated by TrainConfig
        return cfg

    def cells(self) -> list[TrainConfig]:
        g = self.grid
        out = []
        for dist, sigma, res, bound, seed in itertools.product(
            g["dist"], g["sigma"], g["residual"], g["bound"], self.seeds
        ):
            if res not in ("ff", "none"):
                raise ValueError(f"residual must be 'ff' or 'none', got {res!r}")
            out.append(
                TrainConfig(
                    distribution=dist,
                    sigma_mode=sigma,
                    residual=res == "ff",
                    lower_bound_source=bound,
                    seed=seed,
                    steps=int(self.train["steps"]),
                    batch=int(self.train["batch"]),
                    lr=float(self.train["lr"]),
                    val_every=int(self.train["val_every"]),
                )
            )
        return out


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> ExperimentConfig:
    """Read a JSON or TOML config file and apply ``overrides`` on top."""
    data: dict = {}
    if path is not None:
        p = Path(path)
        text = p.read_text(encoding="utf-8")
        if p.suffix == ".toml":
            try:
                import tomllib
            except ModuleNotFoundError:  # Python < 3.11
                import tomli as tomllib
            data = tomllib.loads(text)
        else:
            data = json.loads(text)
    return ExperimentConfig.from_dict(_merge(data, overrides or {}))


# ------------------------------------------------------------------ helpers


def _dump_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")


def _load_json(path: Path):
    if not path.exists():
        raise DataError(f"missing artifact {path}")
    return json.loads(path.read_text(encoding="utf-8"))


def _pool_map(fn, items: list, jobs: int) -> list:
    if jobs > 1 and len(items) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def _instance_dir(cfg: ExperimentConfig) -> Path:
    return cfg.out / "instances"


def _load_instance(cfg: ExperimentConfig, iid: str) -> Instance:
    d = _instance_dir(cfg)
    meta = _load_json(d / f"{iid}.json")
    dom = d / meta.get("domain_file", "domain.pddl")
    prob = d / f"{iid}.pddl"
    if not prob.exists() or not dom.exists():
        raise DataError(f"missing PDDL files for instance {iid}")
    return Instance(iid, dom.read_text(encoding="utf-8"), prob.read_text(encoding="utf-8"), meta)


# ----------------------------------------------------------------- generate


def _blocksworld_instances(spec: dict, seed: int, count: int, offset: int):
    lo, hi = int(spec.get("min_blocks", 3)), int(spec.get("max_blocks", 7))
    rng = random.Random(f"bw-sizes-{seed}-{offset}")
    i = 0
    while True:
        n = rng.randint(lo, hi)
        s = offset + seed * 100_000 + i
        i += 1
        d, p = gen_blocksworld(n, s)
        yield d, p, {"generator": "blocksworld", "n_blocks": n, "seed": s}


def _logistics_instances(spec: dict, seed: int, count: int, offset: int):
    ranges = spec.get("params", {"airplanes": [1, 1], "cities": [2, 2], "city_size": [2, 2], "packages": [2, 3], "trucks": [2, 2]})
    rng = random.Random(f"lg-params-{seed}-{offset}")
    i = 0
    while True:
        params = {k: rng.randint(int(v[0]), int(v[1])) if isinstance(v, list) else int(v) for k, v in sorted(ranges.items())}
        s = offset + seed * 100_000 + i
        i += 1
        d, p = gen_logistics(params, s)
        yield d, p, {"generator": "logistics", "params": params, "seed": s}


def _generated(cfg: ExperimentConfig, count: int, offset: int, skip_trivial: bool):
    name = cfg.domain["name"]
    gen = {"blocksworld": _blocksworld_instances, "logistics": _logistics_instances}.get(name)
    if gen is None:
        raise ValueError(f"unknown generator domain {name!r}")
    out = []
    for d, p, meta in gen(cfg.domain, cfg.seed, count, offset):
        if len(out) >= count:
            break
        if skip_trivial and p.goal <= p.init:
            continue
        out.append((d, p, meta))
    return out


def cmd_generate(cfg: ExperimentConfig) -> list[str]:
    """Write the instance pool (and separate planning instances) as PDDL files."""
    d_out = _instance_dir(cfg)
    d_out.mkdir(parents=True, exist_ok=True)
    name = cfg.domain["name"]
    pool: list[str] = []
    plan: list[str] = []
    if name == "pddl":
        dom_text = Path(cfg.domain["domain_file"]).read_text(encoding="utf-8")
        domain = parse_domain(dom_text)
        (d_out / "domain.pddl").write_text(dom_text, encoding="utf-8")
        for key, target in (("problem_files", pool), ("plan_files", plan)):
            for f in sorted(cfg.domain.get(key, [])):
                text = Path(f).read_text(encoding="utf-8")
                prob = parse_problem(text, domain)
                iid = prob.name
                (d_out / f"{iid}.pddl").write_text(text, encoding="utf-8")
                _dump_json(d_out / f"{iid}.json", {"generator": "pddl", "source": str(f)})
                target.append(iid)
    else:
        n_pool = int(cfg.domain.get("n_instances", 0))
        n_plan = int(cfg.domain.get("n_plan", 0))
        batches = [(pool, _generated(cfg, n_pool, 0, False))]
        if n_plan:
            batches.append((plan, _generated(cfg, n_plan, PLAN_SEED_OFFSET, True)))
        dom_written = False
        for target, items in batches:
            for d, p, meta in items:
                if not dom_written:
                    (d_out / "domain.pddl").write_text(domain_to_pddl(d), encoding="utf-8")
                    dom_written = True
                (d_out / f"{p.name}.pddl").write_text(problem_to_pddl(p), encoding="utf-8")
                _dump_json(d_out / f"{p.name}.json", meta)
                target.append(p.name)
    if set(pool) & set(plan):
        raise DataError("planning instances overlap the dataset pool")
    _dump_json(d_out / "index.json", {"pool": pool, "plan": plan})
    log.info("generated %d pool and %d planning instances", len(pool), len(plan))
    return pool + plan


# ------------------------------------------------------------------ dataset


def cmd_dataset(cfg: ExperimentConfig) -> dict:
    """Solve the pool optimally, write all rows and the instance-level split."""
    index = _load_json(_instance_dir(cfg) / "index.json")
    instances = [_load_instance(cfg, iid) for iid in index["pool"]]
    rows, skipped = build_dataset(instances, budget=cfg.budget, jobs=cfg.jobs)
    ratios = [float(cfg.split.get(k, 0.0)) for k in ("train", "val", "test", "plan")]
    spec = make_split_spec(sorted({r.instance_id for r in rows}), cfg.seed, ratios)
    if index["plan"]:
        spec = SplitSpec(spec.train, spec.val, spec.test, tuple(sorted(set(spec.plan) | set(index["plan"]))), spec.seed)
    parts = split(rows, spec)
    ddir = cfg.out / "dataset"
    ddir.mkdir(parents=True, exist_ok=True)
    write_rows(ddir / "rows.jsonl", rows)
    for name in ("train", "val", "test"):
        write_rows(ddir / f"{name}.jsonl", parts[name])
    _dump_json(ddir / "split.json", spec.to_dict())
    _dump_json(ddir / "skipped.json", skipped)
    counts = {k: len(v) for k, v in parts.items()}
    log.info("dataset rows per split: %s; skipped %d instances", counts, len(skipped))
    return counts


# -------------------------------------------------------------------- train


def _curve_csv(ck: Checkpoint) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step", "val_nll", "val_mse"])
    for s, n, m in zip(ck.curve_steps, ck.curve_nll, ck.curve_mse):
        w.writerow([s, repr(float(n)), repr(float(m))])
    return buf.getvalue()


def _train_job(args):
    tc, train_path, val_path = args
    ck = train(read_rows(train_path), read_rows(val_path), tc)
    return tc.name, ck.to_dict(), _curve_csv(ck)


def cmd_train(cfg: ExperimentConfig) -> list[str]:
    """Train one model per grid cell and seed; write checkpoints and curves."""
    ddir = cfg.out / "dataset"
    for f in ("train.jsonl", "val.jsonl"):
        if not (ddir / f).exists():
            raise DataError(f"missing {ddir / f}; run the dataset stage first")
    jobs = [(tc, ddir / "train.jsonl", ddir / "val.jsonl") for tc in cfg.cells()]
    results = sorted(_pool_map(_train_job, jobs, cfg.jobs), key=lambda r: r[0])
    for name, ck, curve in results:
        _dump_json(cfg.out / "checkpoints" / f"{name}.json", ck)
        cpath = cfg.out / "curves" / f"{name}.csv"
        cpath.parent.mkdir(parents=True, exist_ok=True)
        cpath.write_text(curve, encoding="utf-8")
    return [r[0] for r in results]


def _load_checkpoint(cfg: ExperimentConfig, tc: TrainConfig) -> Checkpoint:
    path = cfg.out / "checkpoints" / f"{tc.name}.json"
    if not path.exists():
        raise DataError(f"missing checkpoint {path}; run the train stage first")
    return Checkpoint.from_dict(_load_json(path))


# --------------------------------------------------------------------- eval

_METRICS = ("nll", "mse", "nll_clip", "mse_clip")


def _cell_key(tc: TrainConfig) -> tuple:
    return (tc.distribution, tc.sigma_mode, "ff" if tc.residual else "none", tc.lower_bound_source)


def _mean(values):
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


def cmd_eval(cfg: ExperimentConfig) -> dict:
    """Test-set NLL/MSE for both saved weight sets, nested by distribution, sigma, residual and bound."""
    test = read_rows(cfg.out / "dataset" / "test.jsonl")
    cells: dict = {}
    ff_mse = None
    for tc in cfg.cells():
        rep = evaluate(_load_checkpoint(cfg, tc), test)
        ff_mse = rep["ff_mse"]
        dist, sigma, res, bound = _cell_key(tc)
        slot = cells.setdefault(dist, {}).setdefault(sigma, {}).setdefault(res, {}).setdefault(
            bound, {"seeds": {}, "ff_mse_clip": rep["ff_mse_clip"]}
        )
        slot["seeds"][str(tc.seed)] = {"best_nll": rep["best_nll"], "best_mse": rep["best_mse"]}
    for dist in cells.values():
        for sigma in dist.values():
            for res in sigma.values():
                for slot in res.values():
                    slot["mean"] = {
                        ck: {m: _mean(s[ck][m] for s in slot["seeds"].values()) for m in _METRICS}
                        for ck in ("best_nll", "best_mse")
                    }
    report = {"n_test_rows": len(test), "ff_mse": ff_mse, "cells": cells}
    _dump_json(cfg.out / "reports" / "eval.json", report)
    return report


# --------------------------------------------------------------------- plan


def plan_heuristic(task, spec):
    """GBFS heuristic for ``spec``: ``"ff"`` or ``(checkpoint dict, variant, bound)``."""
    if spec == "ff":
        return lambda s: heuristics.ff(task, s).ff_value
    ck_weights, variant, bound = spec
    from .learn import LinearModel

    return heuristic_fn(LinearModel.from_dict(ck_weights), variant, task, bound)


def _plan_job(args):
    inst_id, domain_text, problem_text, spec, eval_cap = args
    d = parse_domain(domain_text)
    task = ground(d, parse_problem(problem_text, d))
    res = gbfs(task, plan_heuristic(task, spec), eval_cap)
    return inst_id, res.status == SOLVED, res.evaluations, res.cost


def _sweep(cfg: ExperimentConfig, instances: list[Instance], spec) -> dict:
    jobs = [(i.id, i.domain_text, i.problem_text, spec, cfg.eval_cap) for i in instances]
    results = sorted(_pool_map(_plan_job, jobs, cfg.jobs))
    per = {iid: {"solved": ok, "evaluations": ev if ok else cfg.eval_cap, "plan_length": c if ok else None}
           for iid, ok, ev, c in results}
    return {
        "coverage": sum(1 for r in per.values() if r["solved"]),
        "mean_evaluations": float(np.mean([r["evaluations"] for r in per.values()])) if per else None,
        "instances": per,
    }


def _variants(distribution: str) -> list[str]:
    return ["tn"] if distribution == "truncated" else ["raw", "clip"]


def cmd_plan(cfg: ExperimentConfig) -> dict:
    """GBFS on the planning instances for ff and every trained cell and point-estimate variant."""
    split_spec = _load_json(cfg.out / "dataset" / "split.json")
    instances = [_load_instance(cfg, iid) for iid in split_spec["plan"]]
    checkpoints = [(tc, _load_checkpoint(cfg, tc)) for tc in cfg.cells()]
    report: dict = {"eval_cap": cfg.eval_cap, "n_instances": len(instances)}
    report["ff"] = _sweep(cfg, instances, "ff")
    cells: dict = {}
    for tc, ck in checkpoints:
        weights = ck.best_nll.to_dict()
        dist, sigma, res, bound = _cell_key(tc)
        for variant in _variants(dist):
            sweep = _sweep(cfg, instances, (weights, variant, bound))
            label = {"tn": "TN", "raw": "N", "clip": "N+clip"}[variant]
            slot = cells.setdefault(sigma, {}).setdefault(res, {}).setdefault(bound, {}).setdefault(
                label, {"seeds": {}}
            )
            slot["seeds"][str(tc.seed)] = sweep
    for sigma in cells.values():
        for res in sigma.values():
            for bound in res.values():
                for slot in bound.values():
                    seeds = slot["seeds"].values()
                    slot["mean_coverage"] = _mean(s["coverage"] for s in seeds)
                    slot["mean_evaluations"] = _mean(s["mean_evaluations"] for s in seeds)
    report["cells"] = cells
    _dump_json(cfg.out / "reports" / "plan.json", report)
    return report


def run_all(cfg: ExperimentConfig) -> dict:
    cmd_generate(cfg)
    cmd_dataset(cfg)
    cmd_train(cfg)
    return {"eval": cmd_eval(cfg), "plan": cmd_plan(cfg)}
