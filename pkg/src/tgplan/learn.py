"""Linear heuristic models trained by Gaussian or Truncated-Gaussian NLL.

The model maps the feature vector ``[1, goal_count, ff, total_ignored,
mean_ignored]`` of a state to a predictive distribution over ``h*``:

* ``mu(s) = w_mu . f(s)`` plus ``ff(s)`` when residual learning is on;
* ``sigma(s) = 1/sqrt(2)`` (fixed) or ``softplus(w_s . f(s)) + 1e-3`` (learned).

For the truncated variant the support is ``(l - 0.1, 1e5)`` with ``l`` the
admissible lower bound stored in the row, or ``(-1e5, 1e5)`` without one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.special import expit

from .dataset import DatasetRow
from .trunc_gauss import (
    MISSING_BOUND,
    OPEN_BOUND_EPS,
    OutOfSupportError,
    TruncatedGaussian,
    truncnorm_logpdf,
    truncnorm_mean,
    truncnorm_nll_and_grad,
)

__all__ = [
    "FEATURE_NAMES",
    "FIXED_SIGMA",
    "SIGMA_FLOOR",
    "TrainConfig",
    "LinearModel",
    "Batch",
    "AdamState",
    "Checkpoint",
    "TrainingDiverged",
    "features",
    "make_batch",
    "predict",
    "point_estimate",
    "heuristic_fn",
    "distribution_params",
    "loss_nll",
    "loss_mse",
    "nll_and_grad",
    "adam_step",
    "train",
    "evaluate",
]

FEATURE_NAMES = ("bias", "goal_count", "ff_value", "total_ignored", "mean_ignored")
FIXED_SIGMA = 1.0 / math.sqrt(2.0)
SIGMA_FLOOR = 1e-3
LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)

DISTRIBUTIONS = ("gaussian", "truncated")
SIGMA_MODES = ("fixed", "learned")
BOUND_SOURCES = ("hmax", "blind", "none")


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    distribution: str = "truncated"
    sigma_mode: str = "learned"
    residual: bool = True
    lower_bound_source: str = "hmax"
    steps: int = 10_000
    batch: int = 256
    lr: float = 0.01
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    val_every: int = 50

    def __post_init__(self):
        if self.distribution not in DISTRIBUTIONS:
            raise ValueError(f"distribution must be one of {DISTRIBUTIONS}")
        if self.sigma_mode not in SIGMA_MODES:
            raise ValueError(f"sigma_mode must be one of {SIGMA_MODES}")
        if self.lower_bound_source not in BOUND_SOURCES:
            raise ValueError(f"lower_bound_source must be one of {BOUND_SOURCES}")
        if self.steps < 1 or self.batch < 1 or self.val_every < 1:
            raise ValueError("steps, batch and val_every must be positive")

    @property
    def name(self) -> str:
        res = "ff" if self.residual else "none"
        return f"{self.distribution}-{self.sigma_mode}-{res}-{self.lower_bound_source}-s{self.seed}"

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


@dataclass(frozen=True)
class LinearModel:
    w_mu: np.ndarray
    w_s: np.ndarray | None = None
    residual: bool = False

    @classmethod
    def zeros(cls, sigma_mode: str, residual: bool) -> "LinearModel":
        n = len(FEATURE_NAMES)
        return cls(np.zeros(n), np.zeros(n) if sigma_mode == "learned" else None, residual)

    @property
    def sigma_mode(self) -> str:
        return "fixed" if self.w_s is None else "learned"

    def params(self) -> np.ndarray:
        if self.w_s is None:
            return self.w_mu.copy()
        return np.concatenate([self.w_mu, self.w_s])

    def with_params(self, theta: np.ndarray) -> "LinearModel":
        n = len(FEATURE_NAMES)
        theta = np.asarray(theta, dtype=float)
        if self.w_s is None:
            return replace(self, w_mu=theta[:n].copy())
        return replace(self, w_mu=theta[:n].copy(), w_s=theta[n:].copy())

    def to_dict(self) -> dict:
        return {
            "w_mu": [float(v) for v in self.w_mu],
            "w_s": None if self.w_s is None else [float(v) for v in self.w_s],
            "residual": self.residual,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LinearModel":
        w_s = d.get("w_s")
        return cls(
            np.asarray(d["w_mu"], dtype=float),
            None if w_s is None else np.asarray(w_s, dtype=float),
            bool(d["residual"]),
        )


def features(row: DatasetRow) -> np.ndarray:
    return np.array(
        [1.0, row.goal_count, row.ff_value, row.total_ignored, row.mean_ignored], dtype=float
    )


@dataclass(frozen=True)
class Batch:
    """Rows as arrays.  ``bound`` is the raw admissible bound (NaN when none)."""

    X: np.ndarray
    y: np.ndarray
    bound: np.ndarray
    ids: tuple = ()

    def __len__(self) -> int:
        return len(self.y)

    def take(self, idx: np.ndarray) -> "Batch":
        return Batch(self.X[idx], self.y[idx], self.bound[idx])


def make_batch(rows: Sequence[DatasetRow], bound_source: str) -> Batch:
    X = np.array([features(r) for r in rows], dtype=float).reshape(-1, len(FEATURE_NAMES))
    y = np.array([r.h_star for r in rows], dtype=float)
    if bound_source == "hmax":
        bound = np.array([r.lower_bound_hmax for r in rows], dtype=float)
    elif bound_source == "blind":
        bound = np.array([r.lower_bound_blind for r in rows], dtype=float)
    else:
        bound = np.full(len(rows), np.nan)
    ids = tuple(f"{r.instance_id}@h*={r.h_star}" for r in rows)
    return Batch(X, y, bound, ids)


def _sigma(model: LinearModel, X: np.ndarray):
    """``(sigma, d sigma / d z)`` with ``z = w_s . f``."""
    if model.w_s is None:
        return np.full(X.shape[0], FIXED_SIGMA), None
    z = X @ model.w_s
    return np.logaddexp(0.0, z) + SIGMA_FLOOR, expit(z)


def _support(bound: np.ndarray):
    lower = np.where(np.isnan(bound), -MISSING_BOUND, bound - OPEN_BOUND_EPS)
    return lower, np.full_like(lower, MISSING_BOUND)


def distribution_params(model: LinearModel, batch: Batch):
    """``(mu, sigma, lower, upper)`` arrays of the truncated predictive distribution."""
    mu = batch.X @ model.w_mu
    if model.residual:
        mu = mu + batch.X[:, 2]
    sigma, _ = _sigma(model, batch.X)
    lower, upper = _support(batch.bound)
    return mu, sigma, lower, upper


def predict(model: LinearModel, f: np.ndarray, lower: float | None = None) -> TruncatedGaussian:
    """Predictive Truncated Gaussian for one feature vector (open lower bound)."""
    f = np.asarray(f, dtype=float)
    mu = float(f @ model.w_mu) + (float(f[2]) if model.residual else 0.0)
    sigma = float(_sigma(model, f[None, :])[0][0])
    return TruncatedGaussian.create(mu, sigma, lower, None, open_lower=True)


def _raise_row(exc: OutOfSupportError, batch: Batch):
    i = int(exc.index[0]) if exc.index is not None and len(exc.index) else 0
    who = batch.ids[i] if batch.ids else f"row {i}"
    raise OutOfSupportError(
        f"target outside predicted support for {who} (inadmissible bound?): {exc}", exc.index
    ) from exc


def nll_and_grad(model: LinearModel, batch: Batch, distribution: str):
    """Mean NLL over the batch and its gradient with respect to ``model.params()``."""
    X = batch.X
    n = len(batch)
    mu, sigma, lower, upper = distribution_params(model, batch)
    _, dsig_dz = _sigma(model, X)
    if distribution == "gaussian":
        r = (batch.y - mu) / sigma
        nll = 0.5 * r * r + np.log(sigma) + LOG_SQRT_2PI
        d_mu = -r / sigma
        d_sigma = (1.0 - r * r) / sigma
    else:
        try:
            nll, d_mu, d_sigma = truncnorm_nll_and_grad(batch.y, mu, sigma, lower, upper)
        except OutOfSupportError as exc:
            _raise_row(exc, batch)
        nll, d_mu, d_sigma = np.atleast_1d(nll), np.atleast_1d(d_mu), np.atleast_1d(d_sigma)
    grad = [X.T @ d_mu / n]
    if model.w_s is not None:
        grad.append(X.T @ (d_sigma * dsig_dz) / n)
    return float(np.mean(nll)), np.concatenate(grad)


def loss_nll(model: LinearModel, batch: Batch, distribution: str, clip: bool = False) -> float:
    """Mean NLL.  ``clip`` evaluates a Gaussian with ``mu`` raised to the bound."""
    mu, sigma, lower, upper = distribution_params(model, batch)
    if distribution == "gaussian":
        if clip:
            mu = np.where(np.isnan(batch.bound), mu, np.fmax(mu, batch.bound))
        r = (batch.y - mu) / sigma
        return float(np.mean(0.5 * r * r + np.log(sigma) + LOG_SQRT_2PI))
    try:
        lp = truncnorm_logpdf(batch.y, mu, sigma, lower, upper)
    except OutOfSupportError as exc:
        _raise_row(exc, batch)
    return float(-np.mean(lp))


def point_estimate(model: LinearModel, batch: Batch, variant: str) -> np.ndarray:
    """``variant``: ``tn`` (truncated mean), ``raw`` (mu) or ``clip`` (max(mu, bound))."""
    mu, sigma, lower, upper = distribution_params(model, batch)
    if variant == "tn":
        return np.atleast_1d(truncnorm_mean(mu, sigma, lower, upper))
    if variant == "raw":
        return mu
    if variant == "clip":
        return np.where(np.isnan(batch.bound), mu, np.fmax(mu, batch.bound))
    raise ValueError(f"unknown point-estimate variant {variant!r}")


def loss_mse(model: LinearModel, batch: Batch, variant: str) -> float:
    pred = point_estimate(model, batch, variant)
    return float(np.mean((pred - batch.y) ** 2))


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def fresh(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_step(theta, grad, state: AdamState, lr: float, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update; returns ``(new theta, new state)``."""
    t = state.t + 1
    m = beta1 * state.m + (1.0 - beta1) * grad
    v = beta2 * state.v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    theta = theta - lr * m_hat / (np.sqrt(v_hat) + eps)
    return theta, AdamState(m, v, t)


@dataclass
class Checkpoint:
    """Both saved weight sets of a run plus its validation curves."""

    config: TrainConfig
    best_nll: LinearModel
    best_nll_step: int
    best_mse: LinearModel
    best_mse_step: int
    curve_steps: list = field(default_factory=list)
    curve_nll: list = field(default_factory=list)
    curve_mse: list = field(default_factory=list)
    final: LinearModel | None = None

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "features": list(FEATURE_NAMES),
            "best_nll": {"step": self.best_nll_step, "weights": self.best_nll.to_dict()},
            "best_mse": {"step": self.best_mse_step, "weights": self.best_mse.to_dict()},
            "final": None if self.final is None else self.final.to_dict(),
            "curves": {
                "step": list(self.curve_steps),
                "val_nll": [float(v) for v in self.curve_nll],
                "val_mse": [float(v) for v in self.curve_mse],
            },
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Checkpoint":
        c = d["curves"]
        return cls(
            config=TrainConfig(**d["config"]),
            best_nll=LinearModel.from_dict(d["best_nll"]["weights"]),
            best_nll_step=int(d["best_nll"]["step"]),
            best_mse=LinearModel.from_dict(d["best_mse"]["weights"]),
            best_mse_step=int(d["best_mse"]["step"]),
            curve_steps=list(c["step"]),
            curve_nll=list(c["val_nll"]),
            curve_mse=list(c["val_mse"]),
            final=None if d.get("final") is None else LinearModel.from_dict(d["final"]),
        )


def _point_variant(distribution: str) -> str:
    return "tn" if distribution == "truncated" else "raw"


def train(
    train_rows: Sequence[DatasetRow], val_rows: Sequence[DatasetRow], config: TrainConfig
) -> Checkpoint:
    """Adam on the mean NLL of random minibatches (sampled with replacement).

    Validation NLL and MSE are recorded every ``config.val_every`` steps; the
    weights with the lowest value of each are kept.
    """
    if not train_rows or not val_rows:
        raise ValueError("train and validation rows must be non-empty")
    tr = make_batch(train_rows, config.lower_bound_source)
    va = make_batch(val_rows, config.lower_bound_source)
    for b in (tr, va):
        bad = np.flatnonzero(b.y < _support(b.bound)[0])
        if bad.size:
            raise OutOfSupportError(
                f"h* below the open lower bound for {b.ids[bad[0]]} (inadmissible bound?)", bad
            )
    rng = np.random.default_rng(config.seed)
    model = LinearModel.zeros(config.sigma_mode, config.residual)
    theta = model.params()
    state = AdamState.fresh(theta.size)
    variant = _point_variant(config.distribution)
    best_nll = best_mse = math.inf
    best_nll_model = best_mse_model = model
    best_nll_step = best_mse_step = 0
    steps, curve_nll, curve_mse = [], [], []
    for step in range(1, config.steps + 1):
        idx = rng.integers(0, len(tr), size=config.batch)
        loss, grad = nll_and_grad(model, tr.take(idx), config.distribution)
        if not (math.isfinite(loss) and np.all(np.isfinite(grad))):
            raise TrainingDiverged(
                f"{config.name}: non-finite training NLL {loss} at step {step}, theta={theta.tolist()}"
            )
        theta, state = adam_step(
            theta, grad, state, config.lr, config.beta1, config.beta2, config.eps_adam
        )
        model = model.with_params(theta)
        if step % config.val_every == 0:
            v_nll = loss_nll(model, va, config.distribution)
            v_mse = loss_mse(model, va, variant)
            if not math.isfinite(v_nll):
                raise TrainingDiverged(f"{config.name}: non-finite validation NLL at step {step}")
            steps.append(step)
            curve_nll.append(v_nll)
            curve_mse.append(v_mse)
            if v_nll < best_nll:
                best_nll, best_nll_model, best_nll_step = v_nll, model, step
            if v_mse < best_mse:
                best_mse, best_mse_model, best_mse_step = v_mse, model, step
    return Checkpoint(
        config, best_nll_model, best_nll_step, best_mse_model, best_mse_step,
        steps, curve_nll, curve_mse, final=model,
    )


def _metrics(model: LinearModel, batch: Batch, distribution: str) -> dict:
    out = {
        "nll": loss_nll(model, batch, distribution),
        "mse": loss_mse(model, batch, _point_variant(distribution)),
    }
    if distribution == "gaussian":
        out["nll_clip"] = loss_nll(model, batch, "gaussian", clip=True)
        out["mse_clip"] = loss_mse(model, batch, "clip")
    else:
        out["nll_clip"] = None
        out["mse_clip"] = None
    return out


def evaluate(checkpoint: Checkpoint, test_rows: Sequence[DatasetRow]) -> dict:
    """Test metrics for both saved weight sets plus the ``(ff - h*)^2`` baseline."""
    cfg = checkpoint.config
    batch = make_batch(test_rows, cfg.lower_bound_source)
    ff = batch.X[:, 2]
    ff_clip = ff if cfg.lower_bound_source == "none" else np.fmax(ff, batch.bound)
    return {
        "config": cfg.name,
        "n_test": len(batch),
        "best_nll": _metrics(checkpoint.best_nll, batch, cfg.distribution),
        "best_mse": _metrics(checkpoint.best_mse, batch, cfg.distribution),
        "ff_mse": float(np.mean((ff - batch.y) ** 2)),
        "ff_mse_clip": float(np.mean((ff_clip - batch.y) ** 2)),
    }


def heuristic_fn(model: LinearModel, variant: str, task, bound_source: str):
    """GBFS heuristic ``state -> point estimate`` built from live heuristic features."""
    from . import heuristics

    def h(state: int) -> float:
        info = heuristics.ff(task, state)
        if math.isinf(info.ff_value):
            return math.inf
        f = np.array(
            [1.0, heuristics.goal_count(task, state), info.ff_value,
             info.total_ignored_effects, info.mean_ignored_effects]
        )
        mu = float(f @ model.w_mu) + (info.ff_value if model.residual else 0.0)
        if bound_source == "hmax":
            bound = float(info.hmax)
        elif bound_source == "blind":
            bound = float(heuristics.blind(task, state))
        else:
            bound = None
        if variant == "raw":
            return mu
        if variant == "clip":
            return mu if bound is None else max(mu, bound)
        sigma = float(_sigma(model, f[None, :])[0][0])
        lower = -MISSING_BOUND if bound is None else bound - OPEN_BOUND_EPS
        return float(truncnorm_mean(mu, sigma, lower, MISSING_BOUND))

    return h
