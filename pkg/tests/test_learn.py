import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tgplan.dataset import DatasetRow, Instance, solve_instance, gen_blocksworld
from tgplan.learn import (
    FIXED_SIGMA,
    AdamState,
    Checkpoint,
    LinearModel,
    TrainConfig,
    adam_step,
    evaluate,
    heuristic_fn,
    loss_mse,
    loss_nll,
    make_batch,
    nll_and_grad,
    point_estimate,
    predict,
    train,
)
from tgplan.pddl import domain_to_pddl, problem_to_pddl
from tgplan.trunc_gauss import OutOfSupportError


def synthetic_rows(n, seed, noise=0.3):
    rng = np.random.default_rng(seed)
    rows = []
    for i in range(n):
        gc = int(rng.integers(0, 6))
        hm = int(rng.integers(0, 4))
        ff = hm + int(rng.integers(0, 5))
        tot = int(rng.integers(0, 4))
        mean = tot / max(ff, 1)
        y = 1.0 + 0.5 * gc + 0.8 * ff + noise * rng.normal()
        rows.append(DatasetRow(f"syn{i % 20:02d}", (), max(y, hm), hm, int(y > 0), ff, gc, tot, mean))
    return rows


def random_model(rng, learned, residual):
    return LinearModel(rng.normal(0, 0.3, 5), rng.normal(0, 0.3, 5) if learned else None, residual)


def test_fixed_sigma_gaussian_nll_is_shifted_mse():
    rows = synthetic_rows(200, 0)
    b = make_batch(rows, "none")
    m = random_model(np.random.default_rng(1), False, True)
    nll = loss_nll(m, b, "gaussian")
    mse = loss_mse(m, b, "raw")
    # 1/(2 sigma^2) = 1 at sigma = 1/sqrt(2)
    assert abs(nll - (mse + math.log(FIXED_SIGMA) + 0.5 * math.log(2 * math.pi))) <= 1e-12


@pytest.mark.parametrize("dist", ["gaussian", "truncated"])
@pytest.mark.parametrize("learned", [False, True])
@pytest.mark.parametrize("residual", [False, True])
def test_weight_gradients_match_finite_differences(dist, learned, residual):
    rng = np.random.default_rng(hash((dist, learned, residual)) % 2**32)
    b = make_batch(synthetic_rows(64, 2), "hmax")
    m = random_model(rng, learned, residual)
    loss, g = nll_and_grad(m, b, dist)
    assert loss == pytest.approx(loss_nll(m, b, dist), rel=1e-12)
    theta = m.params()
    h = 1e-5
    for k in range(theta.size):
        e = np.zeros_like(theta)
        e[k] = h
        fd = (loss_nll(m.with_params(theta + e), b, dist) - loss_nll(m.with_params(theta - e), b, dist)) / (2 * h)
        assert g[k] == pytest.approx(fd, rel=1e-4, abs=1e-8)


def test_adam_first_step_closed_form():
    theta = np.array([1.0, -2.0, 0.5, 0.0])
    grad = np.array([0.3, -4.0, 1e-3, 0.0])
    new, st_ = adam_step(theta, grad, AdamState.fresh(4), lr=0.01)
    expected = theta - 0.01 * grad / (np.abs(grad) + 1e-8)
    np.testing.assert_allclose(new, expected, rtol=0, atol=1e-15)
    assert st_.t == 1
    np.testing.assert_allclose(st_.m, 0.1 * grad)
    np.testing.assert_allclose(st_.v, 0.001 * grad**2)


def test_adam_minimises_quadratic():
    theta, state = np.array([3.0, -2.0]), AdamState.fresh(2)
    for _ in range(3000):
        theta, state = adam_step(theta, 2 * theta, state, lr=0.01)
    assert np.all(np.abs(theta) < 1e-2)


def test_gaussian_training_recovers_generating_model():
    rows = synthetic_rows(3000, 5, noise=0.3)
    cfg = TrainConfig("gaussian", "learned", False, "none", steps=6000, batch=256, seed=0)
    ck = train(rows[:2500], rows[2500:], cfg)
    w = ck.final.w_mu
    np.testing.assert_allclose(w[[1, 2]], [0.5, 0.8], atol=0.05)
    assert w[0] + w[3] * 1.5 + w[4] * 0.4 == pytest.approx(1.0, abs=0.4)
    sig = predict(ck.final, np.array([1.0, 2, 3, 1, 0.3])).sigma
    assert sig == pytest.approx(0.3, abs=0.06)


def test_training_is_deterministic_and_checkpoint_round_trips():
    rows = synthetic_rows(300, 7)
    cfg = TrainConfig("truncated", "learned", True, "hmax", steps=200, seed=3)
    a, b = train(rows[:250], rows[250:], cfg), train(rows[:250], rows[250:], cfg)
    assert a.to_dict() == b.to_dict()
    assert len(a.curve_steps) == 4 and a.curve_steps[-1] == 200
    again = Checkpoint.from_dict(a.to_dict())
    assert again.to_dict() == a.to_dict()
    assert train(rows[:250], rows[250:], TrainConfig("truncated", "learned", True, "hmax", steps=200, seed=4)).to_dict() != a.to_dict()


def test_inadmissible_bound_names_row():
    rows = synthetic_rows(50, 1)
    bad = DatasetRow("broken", (), 0.0, 3, 0, 3, 1, 0, 0.0)
    cfg = TrainConfig("truncated", "fixed", True, "hmax", steps=10)
    with pytest.raises(OutOfSupportError, match="broken"):
        train(rows + [bad], rows, cfg)


def test_invalid_config_rejected():
    with pytest.raises(ValueError):
        TrainConfig("laplace", "fixed", True, "hmax")
    with pytest.raises(ValueError):
        TrainConfig("gaussian", "fixed", True, "lmcut")


@settings(max_examples=50)
@given(st.integers(0, 10_000))
def test_truncated_point_estimate_respects_bound(seed):
    rng = np.random.default_rng(seed)
    b = make_batch(synthetic_rows(40, seed), "hmax")
    m = LinearModel(rng.normal(0, 3, 5), rng.normal(0, 1, 5), bool(seed % 2))
    est = point_estimate(m, b, "tn")
    assert np.all(est >= b.bound - 0.1)
    assert np.all(point_estimate(m, b, "clip") >= b.bound)


def test_evaluate_keys_and_baseline():
    rows = synthetic_rows(200, 9)
    ck = train(rows[:150], rows[150:], TrainConfig("gaussian", "fixed", True, "hmax", steps=100))
    rep = evaluate(ck, rows[150:])
    b = make_batch(rows[150:], "hmax")
    assert rep["ff_mse"] == pytest.approx(float(np.mean((b.X[:, 2] - b.y) ** 2)))
    assert set(rep["best_nll"]) == {"nll", "mse", "nll_clip", "mse_clip"}
    # raising mu to an admissible bound can only move it towards h*
    assert rep["best_mse"]["mse_clip"] <= rep["best_mse"]["mse"] + 1e-12


def test_heuristic_fn_matches_row_predictions():
    d, p = gen_blocksworld(5, 3)
    inst = Instance(p.name, domain_to_pddl(d), problem_to_pddl(p))
    rows, _ = solve_instance(inst)
    task = inst.task()
    rng = np.random.default_rng(0)
    m = LinearModel(rng.normal(0, 0.5, 5), rng.normal(0, 0.5, 5), True)
    b = make_batch(rows, "hmax")
    states = [task.state_from_atoms([tuple(a.strip("()").split()) for a in r.state]) for r in rows]
    for variant in ("tn", "raw", "clip"):
        h = heuristic_fn(m, variant, task, "hmax")
        np.testing.assert_allclose([h(s) for s in states], point_estimate(m, b, variant), rtol=1e-12)
