"""Numerically stable Truncated Gaussian.

The distribution ``TN(x | mu, sigma, l, u)`` is a Gaussian with pre-truncation
mean ``mu`` and standard deviation ``sigma`` restricted and renormalized to
``[l, u]``.  Everything here is evaluated in float64.  The difficult quantities
(mean, log-partition, the derivative of the log-partition with respect to
``sigma``) are routed through the ratio functions :func:`f1_stable` and
:func:`f2_stable`, which never subtract two nearly equal tail probabilities.

Array functions (``truncnorm_*``) broadcast over numpy inputs and are what the
training loop uses.  :class:`TruncatedGaussian` is the scalar value type.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erf, erfc

__all__ = [
    "MISSING_BOUND",
    "OPEN_BOUND_EPS",
    "TAYLOR_THRESHOLD",
    "InvalidDistributionError",
    "OutOfSupportError",
    "TruncatedGaussian",
    "erfcx",
    "f1_stable",
    "f2_stable",
    "p1_taylor",
    "p2_taylor",
    "truncnorm_mean",
    "truncnorm_log_partition",
    "truncnorm_logpdf",
    "truncnorm_nll_grad",
    "truncnorm_nll_and_grad",
    "check_support",
]

MISSING_BOUND = 1e5
OPEN_BOUND_EPS = 0.1
TAYLOR_THRESHOLD = 1e-7

SQRT_PI = math.sqrt(math.pi)
SQRT_2 = math.sqrt(2.0)
SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)
LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)
LOG_2 = math.log(2.0)

# Below this argument erfcx is exp(x^2) * erfc(x) directly; above it the
# Laplace continued fraction converges to full precision in _CF_TERMS terms.
_CF_THRESHOLD = 2.0
_CF_TERMS = 60


class InvalidDistributionError(ValueError):
    """Raised for non-positive sigma, NaN parameters or an empty support."""


class OutOfSupportError(ValueError):
    """Raised when a value lies outside ``[l, u]``.

    ``index`` holds the flat positions of the offending entries when the
    check was done on an array.
    """

    def __init__(self, message: str, index=None):
        super().__init__(message)
        self.index = index


def _erfcx_nonneg(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    small = x < _CF_THRESHOLD
    xs = x[small]
    out[small] = np.exp(xs * xs) * erfc(xs)
    xl = x[~small]
    tail = np.zeros_like(xl)
    for k in range(_CF_TERMS, 0, -1):
        tail = (0.5 * k) / (xl + tail)
    out[~small] = 1.0 / (SQRT_PI * (xl + tail))
    return out


def erfcx(x):
    """Scaled complementary error function ``exp(x**2) * erfc(x)``.

    Accurate to ~1e-15 relative for ``x >= 0``.  For negative arguments the
    reflection ``2 exp(x**2) - erfcx(-x)`` is used, which overflows to ``inf``
    below about -26.6.
    """
    x = np.asarray(x, dtype=float)
    flat = np.atleast_1d(x).ravel()
    with np.errstate(over="ignore", invalid="ignore"):
        pos = _erfcx_nonneg(np.abs(flat))
        out = np.where(flat >= 0, pos, 2.0 * np.exp(flat * flat) - pos)
    return out.reshape(x.shape)[()] if x.ndim == 0 else out.reshape(x.shape)


def p1_taylor(x, eps):
    """Taylor expansion of ``f1_stable(x, x + eps)`` around ``eps = 0``."""
    x = np.asarray(x, dtype=float)
    eps = np.asarray(eps, dtype=float)
    out = SQRT_PI * (
        x
        + 0.5 * eps
        - x * eps**2 / 6.0
        - eps**3 / 12.0
        + x * (x * x + 1.0) * eps**4 / 90.0
    )
    return out[()] if out.ndim == 0 else out


def p2_taylor(x, eps):
    """Taylor expansion of ``f2_stable(x, x + eps)`` around ``eps = 0``."""
    x = np.asarray(x, dtype=float)
    eps = np.asarray(eps, dtype=float)
    x2 = x * x
    out = SQRT_PI * (
        x2
        - 0.5
        + x * eps
        + (1.0 - x2) * eps**2 / 3.0
        - x * eps**3 / 3.0
        + (x2 * x2 / 45.0 + x2 / 30.0 - 4.0 / 45.0) * eps**4
    )
    return out[()] if out.ndim == 0 else out


def _ordered(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(np.isnan(x) | np.isnan(y)) or np.any(np.isinf(x) & np.isinf(y)):
        raise ValueError("f1/f2 need finite, non-NaN arguments (at most one infinite)")
    x, y = np.broadcast_arrays(x, y)
    swap = np.abs(x) > np.abs(y)
    a = np.where(swap, y, x)
    b = np.where(swap, x, y)
    return a, b


def _ratios(a, b, want_f2: bool):
    """F1 and optionally F2 for ordered arguments ``|a| <= |b|``.

    Each branch is evaluated only on the entries that select it.  Numerators
    are scaled by ``exp(a^2)``, so ``delta = exp(a^2 - b^2) <= 1``.
    """
    shape = a.shape
    a = np.atleast_1d(a).ravel()
    b = np.atleast_1d(b).ravel()
    f1 = np.empty_like(a)
    f2 = np.empty_like(a) if want_f2 else None
    close = np.abs(b - a) < TAYLOR_THRESHOLD
    neg = ~close & (a <= 0) & (b <= 0)
    pos = ~close & ~neg & (a >= 0) & (b >= 0)
    mix = ~(close | neg | pos)
    if close.any():
        ac, eps = a[close], b[close] - a[close]
        f1[close] = p1_taylor(ac, eps)
        if want_f2:
            f2[close] = p2_taylor(ac, eps)
    with np.errstate(over="ignore", under="ignore"):
        for sel, kind in ((neg, "neg"), (pos, "pos"), (mix, "mix")):
            if not sel.any():
                continue
            aa, bb = a[sel], b[sel]
            log_delta = (aa - bb) * (aa + bb)
            delta = np.exp(log_delta)
            if kind == "neg":
                den = delta * erfcx(-bb) - erfcx(-aa)
            elif kind == "pos":
                den = erfcx(aa) - delta * erfcx(bb)
            else:
                den = (erf(bb) - erf(aa)) * np.exp(aa * aa)
            f1[sel] = -np.expm1(log_delta) / den
            if want_f2:
                # b * delta -> 0 for huge b; avoid inf * 0
                bd = np.where(delta > 0, bb * delta, 0.0)
                f2[sel] = (aa - bd) / den
    f1 = f1.reshape(shape)
    if want_f2:
        return f1, f2.reshape(shape)
    return f1


def _unwrap(v):
    return v[()] if v.ndim == 0 else v


def f1_stable(x, y):
    """``(exp(-x^2) - exp(-y^2)) / (erf(y) - erf(x))`` without cancellation.

    Symmetric in its arguments.  Uses the Taylor polynomial when
    ``|x - y| < 1e-7`` and erfcx-scaled forms when ``x`` and ``y`` share a sign.
    """
    a, b = _ordered(x, y)
    return _unwrap(_ratios(a, b, False))


def f2_stable(x, y):
    """``(x exp(-x^2) - y exp(-y^2)) / (erf(y) - erf(x))`` without cancellation.

    Companion of :func:`f1_stable`; appears in the sigma-derivative of the
    log-partition.
    """
    a, b = _ordered(x, y)
    return _unwrap(_ratios(a, b, True)[1])


def _standardize(mu, sigma, lower, upper):
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    alpha = (np.asarray(lower, dtype=float) - mu) / sigma
    beta = (np.asarray(upper, dtype=float) - mu) / sigma
    return alpha, beta


def _scalar(out):
    return float(out) if np.ndim(out) == 0 else out


def _offsets(alpha, beta, want_f2: bool = False):
    # (E[x] - mu) / sigma, and (alpha phi(alpha) - beta phi(beta)) / Z
    a, b = _ordered(alpha / SQRT_2, beta / SQRT_2)
    if want_f2:
        f1, f2 = _ratios(a, b, True)
        return SQRT_2_OVER_PI * f1, (2.0 / SQRT_PI) * f2
    return SQRT_2_OVER_PI * _ratios(a, b, False)


def truncnorm_mean(mu, sigma, lower, upper):
    """Mean of the truncated distribution, clamped into ``[lower, upper]``."""
    alpha, beta = _standardize(mu, sigma, lower, upper)
    m = np.asarray(mu, dtype=float) + _offsets(alpha, beta) * np.asarray(sigma, dtype=float)
    # the clamp only guards final rounding when |mu| >> |l|
    return _scalar(np.clip(m, lower, upper))


def _log_partition(alpha, beta, r):
    alpha, beta, r = np.broadcast_arrays(alpha, beta, r)
    out = np.empty(alpha.shape)
    pos = (alpha >= 0) & (beta >= 0)
    neg = ~pos & (alpha <= 0) & (beta <= 0)
    mix = ~(pos | neg)
    with np.errstate(divide="ignore"):
        a, b = alpha[pos], beta[pos]
        out[pos] = (
            -np.log(r[pos]) - LOG_SQRT_2PI - 0.5 * a * a + np.log(-np.expm1(0.5 * (a - b) * (a + b)))
        )
        a, b = alpha[neg], beta[neg]
        out[neg] = (
            -np.log(-r[neg]) - LOG_SQRT_2PI - 0.5 * b * b + np.log(-np.expm1(0.5 * (b - a) * (b + a)))
        )
        a, b = alpha[mix], beta[mix]
        out[mix] = -LOG_2 + np.log(erf(b / SQRT_2) - erf(a / SQRT_2))
    return out


def truncnorm_log_partition(mu, sigma, lower, upper):
    """``log(Phi(beta) - Phi(alpha))`` with ``alpha, beta`` the standardized bounds.

    Same-sign bounds go through the stable mean ratio; bounds straddling
    ``mu`` use the erf difference directly.
    """
    alpha, beta = _standardize(mu, sigma, lower, upper)
    return _scalar(_log_partition(alpha, beta, _offsets(alpha, beta)))


def check_support(x, lower, upper):
    """Raise :class:`OutOfSupportError` if any ``x`` lies outside ``[lower, upper]``."""
    x, lower, upper = np.broadcast_arrays(
        np.asarray(x, dtype=float), np.asarray(lower, dtype=float), np.asarray(upper, dtype=float)
    )
    bad = ~((lower <= x) & (x <= upper))
    if np.any(bad):
        idx = np.flatnonzero(bad)
        first = idx[0]
        raise OutOfSupportError(
            f"{idx.size} value(s) outside support, first at index {first}: "
            f"x={x.flat[first]!r} not in [{lower.flat[first]!r}, {upper.flat[first]!r}]",
            index=idx,
        )


def truncnorm_logpdf(x, mu, sigma, lower, upper):
    """Log-density at ``x``; raises :class:`OutOfSupportError` outside ``[l, u]``."""
    check_support(x, lower, upper)
    sigma = np.asarray(sigma, dtype=float)
    xi = (np.asarray(x, dtype=float) - np.asarray(mu, dtype=float)) / sigma
    log_z = truncnorm_log_partition(mu, sigma, lower, upper)
    return _scalar(-np.log(sigma) - LOG_SQRT_2PI - 0.5 * xi * xi - log_z)


def truncnorm_nll_and_grad(x, mu, sigma, lower, upper):
    """``(-log p(x), d/dmu, d/dsigma)`` sharing one evaluation of the ratios.

    With ``xi = (x - mu) / sigma``::

        d/dmu    = (-xi + (E[x] - mu) / sigma) / sigma
        d/dsigma = (1 - xi**2 + (alpha phi(alpha) - beta phi(beta)) / Z) / sigma
    """
    check_support(x, lower, upper)
    sigma = np.asarray(sigma, dtype=float)
    mu = np.asarray(mu, dtype=float)
    alpha, beta = _standardize(mu, sigma, lower, upper)
    xi = (np.asarray(x, dtype=float) - mu) / sigma
    r, g = _offsets(alpha, beta, want_f2=True)
    nll = np.log(sigma) + LOG_SQRT_2PI + 0.5 * xi * xi + _log_partition(alpha, beta, r)
    d_mu = (-xi + r) / sigma
    d_sigma = (1.0 - xi * xi + g) / sigma
    return _scalar(nll), _scalar(d_mu), _scalar(d_sigma)


def truncnorm_nll_grad(x, mu, sigma, lower, upper):
    """Partial derivatives of ``-log p(x)`` with respect to ``mu`` and ``sigma``."""
    _, d_mu, d_sigma = truncnorm_nll_and_grad(x, mu, sigma, lower, upper)
    return d_mu, d_sigma


@dataclass(frozen=True)
class TruncatedGaussian:
    """Scalar Truncated Gaussian with finite stored bounds.

    Build instances with :meth:`create`, which substitutes ``-1e5``/``1e5``
    for missing bounds and applies the open-bound offset.  Direct
    construction validates but does not transform its arguments.
    """

    mu: float
    sigma: float
    l: float = -MISSING_BOUND
    u: float = MISSING_BOUND

    def __post_init__(self):
        vals = (self.mu, self.sigma, self.l, self.u)
        if any(math.isnan(v) for v in vals):
            raise InvalidDistributionError(f"NaN parameter in {vals}")
        if not self.sigma > 0:
            raise InvalidDistributionError(f"sigma must be positive, got {self.sigma}")
        if not self.l < self.u:
            raise InvalidDistributionError(f"need l < u, got l={self.l}, u={self.u}")

    @classmethod
    def create(
        cls,
        mu: float,
        sigma: float,
        lower: float | None = None,
        upper: float | None = None,
        open_lower: bool = False,
        open_upper: bool = False,
    ) -> "TruncatedGaussian":
        if lower is not None and upper is not None and not lower < upper:
            raise InvalidDistributionError(f"need lower < upper, got {lower} >= {upper}")
        if lower is None or math.isinf(lower) and lower < 0:
            l = -MISSING_BOUND
        else:
            l = float(lower) - (OPEN_BOUND_EPS if open_lower else 0.0)
        if upper is None or math.isinf(upper) and upper > 0:
            u = MISSING_BOUND
        else:
            u = float(upper) + (OPEN_BOUND_EPS if open_upper else 0.0)
        return cls(float(mu), float(sigma), l, u)

    def mean(self) -> float:
        return truncnorm_mean(self.mu, self.sigma, self.l, self.u)

    def log_partition(self) -> float:
        return truncnorm_log_partition(self.mu, self.sigma, self.l, self.u)

    def log_prob(self, x: float) -> float:
        return truncnorm_logpdf(x, self.mu, self.sigma, self.l, self.u)

    def nll(self, x: float) -> float:
        return -self.log_prob(x)

    def nll_grad(self, x: float) -> tuple[float, float]:
        return truncnorm_nll_grad(x, self.mu, self.sigma, self.l, self.u)

    def in_support(self, x: float) -> bool:
        return self.l <= x <= self.u
