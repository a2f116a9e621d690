"""One test per acceptance criterion, each printing a PASS/FAIL line.

The desk-scale blocksworld experiment (``demos/acceptance.json``) is run
once per session and shared by criteria 5-10.
"""

import itertools
import json
import math
import statistics
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from conftest import ACCEPTANCE_LINES
from oracles import bfs_costs, tn_logpdf, tn_mean, tn_quad_moments
from tg_grid import GRID, probe_points
from tgplan import heuristics
from tgplan.dataset import gen_blocksworld, gen_logistics, read_rows
from tgplan.experiment import cmd_dataset, cmd_eval, cmd_generate, cmd_plan, cmd_train, load_config
from tgplan.learn import Checkpoint, LinearModel, loss_nll, make_batch, nll_and_grad, point_estimate
from tgplan.pddl import ground
from tgplan.search import astar, validate_plan
from tgplan.trunc_gauss import TruncatedGaussian, truncnorm_nll_and_grad

CONFIG = Path(__file__).resolve().parent.parent / "demos" / "acceptance.json"
CELL = ("learned", "ff", "hmax")


def record(n, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


def _run(out: Path) -> dict:
    cfg = load_config(CONFIG, {"out": str(out)})
    t = {}
    t0 = time.perf_counter()
    cmd_generate(cfg)
    cmd_dataset(cfg)
    t["dataset"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    cmd_train(cfg)
    cmd_eval(cfg)
    t["train_eval"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    cmd_plan(cfg)
    t["plan"] = time.perf_counter() - t0
    return {"cfg": cfg, "out": out, "times": t}


@pytest.fixture(scope="session")
def experiment(tmp_path_factory):
    return _run(tmp_path_factory.mktemp("acceptance") / "run")


def _ckpt(exp, dist, seed):
    name = f"{dist}-{CELL[0]}-{CELL[1]}-{CELL[2]}-s{seed}"
    return Checkpoint.from_dict(json.loads((exp["out"] / "checkpoints" / f"{name}.json").read_text()))


# ------------------------------------------------------------------ numerics


def test_criterion_01_numerics_oracle():
    t0 = time.perf_counter()
    worst_mean = worst_lp = 0.0
    for mu, s, (lo, hi) in GRID:
        d = TruncatedGaussian.create(mu, s, lo, hi)
        ref = tn_mean(mu, s, d.l, d.u)
        mass, qmean = tn_quad_moments(mu, s, d.l, d.u)
        assert abs(mass - 1) < 1e-12 and abs(qmean - ref) <= 1e-12 * max(abs(ref), 1)
        if ref == 0:
            err = abs(d.mean()) if abs(d.mean()) > 1e-12 else 0.0
        else:
            err = abs(d.mean() - float(ref)) / abs(float(ref))
        worst_mean = max(worst_mean, err)
        for x in probe_points(d):
            worst_lp = max(worst_lp, abs(d.log_prob(x) - float(tn_logpdf(x, mu, s, d.l, d.u))))
    far = TruncatedGaussian.create(-100.0, 0.1, 0.0, None)
    far_err = abs(far.mean() - float(tn_mean(-100, 0.1, 0.0, far.u))) / float(tn_mean(-100, 0.1, 0.0, far.u))
    dt = time.perf_counter() - t0
    ok = worst_mean <= 1e-9 and worst_lp <= 1e-6 and far_err <= 1e-9 and dt < 60
    record(1, ok, f"{len(GRID)} grid cells, max mean rel err {worst_mean:.2e} (<=1e-9), "
                  f"max log_prob abs err {worst_lp:.2e} (<=1e-6), mu=-100/l=0 rel err {far_err:.2e}, {dt:.1f}s (<60s)")


def test_criterion_02_gaussian_reduction():
    rng = np.random.default_rng(2)
    worst = 0.0
    for mu, s in zip(rng.uniform(-10, 10, 400), np.exp(rng.uniform(math.log(0.1), math.log(10), 400))):
        d = TruncatedGaussian.create(mu, s)
        xs = mu + s * rng.normal(0, 3, 5)
        worst = max(worst, abs(d.mean() - mu))
        for x in xs:
            worst = max(worst, abs(d.nll(x) + stats.norm.logpdf(x, mu, s)))
    for mu, s in itertools.product((-10.0, 0.0, 10.0), (0.1, 10.0)):
        d = TruncatedGaussian.create(mu, s)
        worst = max(worst, abs(d.mean() - mu), abs(d.nll(mu + s) + stats.norm.logpdf(mu + s, mu, s)))
    record(2, worst <= 1e-6, f"max |TN - Gaussian| over NLL and mean {worst:.2e} (<=1e-6)")


def _rel(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-8)


def test_criterion_03_gradients():
    rng = np.random.default_rng(3)
    h = 1e-5
    worst = 0.0
    for case in range(100):
        mu, s = rng.uniform(-15, 15), rng.uniform(0.2, 5)
        lo = rng.uniform(-5, 5)
        hi = lo + rng.uniform(0.5, 20) if case % 2 else 1e5
        x = lo + rng.uniform(0.01, 0.99) * min(hi - lo, 10)
        _, gm, gs = truncnorm_nll_and_grad(x, mu, s, lo, hi)
        f = lambda m, t: float(truncnorm_nll_and_grad(x, m, t, lo, hi)[0])
        worst = max(worst, _rel(float(gm), (f(mu + h, s) - f(mu - h, s)) / (2 * h)))
        worst = max(worst, _rel(float(gs), (f(mu, s + h) - f(mu, s - h)) / (2 * h)))
        # model weights through the full loss
        n = 8
        hm = rng.integers(0, 4, n)
        ff = hm + rng.integers(0, 4, n)
        X = np.column_stack([np.ones(n), rng.integers(0, 5, n), ff, rng.integers(0, 3, n), rng.uniform(0, 1, n)])
        from tgplan.learn import Batch

        b = Batch(X, hm + rng.uniform(0, 3, n), hm.astype(float))
        dist = "truncated" if case % 3 else "gaussian"
        m = LinearModel(rng.normal(0, 0.3, 5), rng.normal(0, 0.3, 5), bool(case % 2))
        _, g = nll_and_grad(m, b, dist)
        theta = m.params()
        for k in range(theta.size):
            e = np.zeros_like(theta)
            e[k] = h
            fd = (loss_nll(m.with_params(theta + e), b, dist) - loss_nll(m.with_params(theta - e), b, dist)) / (2 * h)
            worst = max(worst, _rel(g[k], fd))
    record(3, worst <= 1e-4, f"100 random cases, max relative gradient error {worst:.2e} (<=1e-4)")


# ------------------------------------------------------------------ planning


def test_criterion_04_astar_equals_bfs():
    t0 = time.perf_counter()
    mismatches = 0
    count = 0
    for i in range(60):
        task = ground(*gen_blocksworld(2 + i % 5, 500 + i))
        res = astar(task, lambda s: heuristics.hmax(task, s))
        mismatches += res.cost != bfs_costs(task) or not validate_plan(task, res.plan)
        count += 1
    fixtures = [
        {"airplanes": 1, "cities": 2, "city_size": 2, "packages": 1, "trucks": 2},
        {"airplanes": 1, "cities": 2, "city_size": 2, "packages": 2, "trucks": 2},
        {"airplanes": 2, "cities": 2, "city_size": 1, "packages": 2, "trucks": 2},
        {"airplanes": 1, "cities": 3, "city_size": 1, "packages": 2, "trucks": 3},
    ]
    for k, params in enumerate(fixtures):
        task = ground(*gen_logistics(params, k))
        res = astar(task, lambda s: heuristics.hmax(task, s))
        mismatches += res.cost != bfs_costs(task) or not validate_plan(task, res.plan)
        count += 1
    dt = time.perf_counter() - t0
    record(4, mismatches == 0 and dt < 120,
           f"{count} instances (60 blocksworld <=6 blocks, {len(fixtures)} logistics), {mismatches} mismatches, {dt:.1f}s (<120s)")


def test_criterion_05_admissibility(experiment):
    rows = read_rows(experiment["out"] / "dataset" / "rows.jsonl")
    bad = [r for r in rows if not (r.lower_bound_hmax <= r.h_star and r.lower_bound_blind <= r.h_star
                                   and r.ff_value >= r.lower_bound_hmax)]
    record(5, not bad and len(rows) > 0, f"{len(rows)} rows, {len(bad)} violations")


def test_criterion_06_bound_respect(experiment):
    test = read_rows(experiment["out"] / "dataset" / "test.jsonl")
    b = make_batch(test, "hmax")
    lower = b.bound - 0.1
    violations = total = 0
    for seed in experiment["cfg"].seeds:
        ck = _ckpt(experiment, "truncated", seed)
        for model in (ck.best_nll, ck.best_mse):
            est = point_estimate(model, b, "tn")
            violations += int(np.sum(est < lower))
            total += est.size
    record(6, violations == 0, f"{total} TN point estimates on test rows, {violations} below the stored open bound")


def test_criterion_07_table1_direction(experiment):
    rep = json.loads((experiment["out"] / "reports" / "eval.json").read_text())
    g = rep["cells"]["gaussian"][CELL[0]][CELL[1]][CELL[2]]["seeds"]
    t = rep["cells"]["truncated"][CELL[0]][CELL[1]][CELL[2]]["seeds"]
    seeds = sorted(t)
    nll_wins = sum(t[s]["best_nll"]["nll"] < g[s]["best_nll"]["nll"] for s in seeds)
    mse_wins = sum(t[s]["best_mse"]["mse"] <= g[s]["best_mse"]["mse_clip"] for s in seeds)
    dt = experiment["times"]["dataset"] + experiment["times"]["train_eval"]
    detail = (
        f"TN NLL < N NLL in {nll_wins}/5 (need >=4), TN MSE <= N+clip MSE in {mse_wins}/5 (need >=3); "
        f"NLL TN {np.mean([t[s]['best_nll']['nll'] for s in seeds]):.3f} vs N {np.mean([g[s]['best_nll']['nll'] for s in seeds]):.3f}, "
        f"MSE TN {np.mean([t[s]['best_mse']['mse'] for s in seeds]):.3f} vs N+clip {np.mean([g[s]['best_mse']['mse_clip'] for s in seeds]):.3f}, "
        f"ff {rep['ff_mse']:.3f}; {dt:.0f}s (<900s)"
    )
    record(7, nll_wins >= 4 and mse_wins >= 3 and dt < 900, detail)


def _steps_to_converge(ck):
    final = ck.curve_mse[-1]
    for step, v in zip(ck.curve_steps, ck.curve_mse):
        if v <= 1.25 * final:
            return step
    return ck.curve_steps[-1]


def test_criterion_08_convergence_speed(experiment):
    seeds = experiment["cfg"].seeds
    tn = [_steps_to_converge(_ckpt(experiment, "truncated", s)) for s in seeds]
    n = [_steps_to_converge(_ckpt(experiment, "gaussian", s)) for s in seeds]
    finals_tn = [_ckpt(experiment, "truncated", s).curve_mse[-1] for s in seeds]
    finals_n = [_ckpt(experiment, "gaussian", s).curve_mse[-1] for s in seeds]
    # context only: first step at which TN matches the Gaussian run's best validation MSE
    catch_up = []
    for s in seeds:
        target = min(_ckpt(experiment, "gaussian", s).curve_mse)
        ck = _ckpt(experiment, "truncated", s)
        catch_up.append(next((st for st, v in zip(ck.curve_steps, ck.curve_mse) if v <= target), None))
    ok = statistics.median(tn) <= statistics.median(n)
    record(8, ok, f"steps to 1.25x own final val MSE: TN median {statistics.median(tn)} {tn} vs N median "
                  f"{statistics.median(n)} {n}; final val MSE TN {np.mean(finals_tn):.3f} vs N {np.mean(finals_n):.3f}; "
                  f"TN reaches N's best val MSE at steps {catch_up}")


def test_criterion_09_table2_direction(experiment):
    rep = json.loads((experiment["out"] / "reports" / "plan.json").read_text())
    slot = rep["cells"][CELL[0]][CELL[1]][CELL[2]]
    tn, base = slot["TN"]["mean_evaluations"], rep["ff"]["mean_evaluations"]
    dt = experiment["times"]["plan"]
    record(9, rep["n_instances"] == 50 and tn < base and dt < 600,
           f"{rep['n_instances']} held-out instances, mean evaluations TN {tn:.2f} vs GBFS+ff {base:.2f} "
           f"(N {slot['N']['mean_evaluations']:.2f}, N+clip {slot['N+clip']['mean_evaluations']:.2f}); "
           f"coverage TN {slot['TN']['mean_coverage']} ff {rep['ff']['coverage']}; {dt:.0f}s (<600s)")


def test_criterion_10_determinism(experiment, tmp_path_factory):
    again = _run(tmp_path_factory.mktemp("acceptance-rerun") / "run")
    differ = []
    n_files = 0
    for sub in ("instances", "dataset", "checkpoints", "curves", "reports"):
        a = {p.relative_to(experiment["out"]): p.read_bytes() for p in (experiment["out"] / sub).rglob("*") if p.is_file()}
        b = {p.relative_to(again["out"]): p.read_bytes() for p in (again["out"] / sub).rglob("*") if p.is_file()}
        n_files += len(a)
        differ += sorted(str(k) for k in set(a) | set(b) if a.get(k) != b.get(k))
    record(10, not differ, f"{n_files} artifacts compared across two runs, {len(differ)} differ {differ[:3]}")
