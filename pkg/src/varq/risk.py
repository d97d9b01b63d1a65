"""Discrete-distribution risk algebra.

Quantiles, Value-at-Risk, the pinball / soft-quantile / Huber losses, the
shortfall (soft-quantile) risk value and the quantile-form Wasserstein-1
distance. Extended reals are plain floats: ``-math.inf`` and ``math.inf``.

The ``*_many`` helpers operate on raw sorted arrays and many levels at once;
the dynamic-programming sweeps use them directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    AlphaOutOfRange,
    EmptyDistribution,
    KappaOutOfRange,
    LengthMismatch,
    NegativeProbability,
    NonFiniteInput,
    ParamOutOfRange,
    ProbabilitySumMismatch,
)

# Tolerance on cumulative probability sums (total mass is 1).
CDF_TOL = 1e-12
PROB_SUM_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class DiscreteDistribution:
    """Finite-support distribution with sorted, distinct atom values."""

    values: np.ndarray
    probs: np.ndarray

    def __len__(self) -> int:
        return len(self.values)

    def __eq__(self, other):
        if not isinstance(other, DiscreteDistribution):
            return NotImplemented
        return np.array_equal(self.values, other.values) and np.array_equal(self.probs, other.probs)

    @property
    def atoms(self) -> list[tuple[float, float]]:
        return [(float(v), float(p)) for v, p in zip(self.values, self.probs)]

    def shift(self, c: float) -> "DiscreteDistribution":
        return _canonical(self.values + c, self.probs)

    def mean(self) -> float:
        return float(np.dot(self.values, self.probs))

    def __repr__(self) -> str:
        return f"DiscreteDistribution({self.atoms!r})"


def _canonical(values: np.ndarray, probs: np.ndarray) -> DiscreteDistribution:
    order = np.argsort(values, kind="stable")
    v = values[order]
    p = probs[order]
    uniq, start = np.unique(v, return_index=True)
    merged = np.add.reduceat(p, start) if len(p) else p
    merged = merged / merged.sum()
    uniq = uniq.astype(float)
    uniq.setflags(write=False)
    merged.setflags(write=False)
    return DiscreteDistribution(uniq, merged)


def dist_new(pairs: Iterable[tuple[float, float]]) -> DiscreteDistribution:
    """Build a canonical distribution from ``(value, probability)`` pairs.

    Atoms are sorted, equal values merged and the probabilities renormalized
    to sum to exactly one.
    """
    pairs = list(pairs)
    if not pairs:
        raise EmptyDistribution("distribution needs at least one atom")
    values = np.array([float(v) for v, _ in pairs])
    probs = np.array([float(p) for _, p in pairs])
    if not np.all(np.isfinite(values)) or not np.all(np.isfinite(probs)):
        raise NonFiniteInput("atom values and probabilities must be finite")
    if np.any(probs < 0):
        raise NegativeProbability(f"negative probability in {pairs!r}")
    total = probs.sum()
    if abs(total - 1.0) > PROB_SUM_TOL:
        raise ProbabilitySumMismatch(f"probabilities sum to {total!r}")
    return _canonical(values, probs)


def from_samples(samples: Sequence[float]) -> DiscreteDistribution:
    """Empirical distribution with equal weight on every sample."""
    x = np.asarray(samples, dtype=float)
    if x.size == 0:
        raise EmptyDistribution("no samples")
    return _canonical(x, np.full(x.size, 1.0 / x.size))


def _check_alpha(alpha: float, *, open_interval: bool = False) -> float:
    alpha = float(alpha)
    if open_interval:
        if not 0.0 < alpha < 1.0:
            raise AlphaOutOfRange(f"alpha must lie in (0, 1), got {alpha!r}")
    elif not 0.0 <= alpha <= 1.0:
        raise AlphaOutOfRange(f"alpha must lie in [0, 1], got {alpha!r}")
    return alpha


def _check_kappa(kappa: float) -> float:
    kappa = float(kappa)
    if not 0.0 < kappa <= 1.0:
        raise KappaOutOfRange(f"kappa must lie in (0, 1], got {kappa!r}")
    return kappa


# ---------------------------------------------------------------- quantiles


def quantile_upper_many(sorted_values: np.ndarray, sorted_weights: np.ndarray, levels) -> np.ndarray:
    """Upper quantiles ``max{v : P[x < v] <= level}`` of a sorted atom list.

    Ties in ``sorted_values`` are allowed. Levels must lie in ``[0, 1)``.
    """
    before = np.cumsum(sorted_weights) - sorted_weights
    idx = np.searchsorted(before, np.asarray(levels, dtype=float) + CDF_TOL, side="right") - 1
    return sorted_values[np.clip(idx, 0, len(sorted_values) - 1)]


def quantile_lower_many(sorted_values: np.ndarray, sorted_weights: np.ndarray, levels) -> np.ndarray:
    """Lower quantiles ``min{v : P[x <= v] >= level}``; levels in ``(0, 1]``."""
    through = np.cumsum(sorted_weights)
    idx = np.searchsorted(through, np.asarray(levels, dtype=float) - CDF_TOL, side="left")
    return sorted_values[np.clip(idx, 0, len(sorted_values) - 1)]


def quantile_lower(d: DiscreteDistribution, alpha: float) -> float:
    alpha = _check_alpha(alpha)
    if alpha == 0.0:
        return -math.inf
    return float(quantile_lower_many(d.values, d.probs, alpha))


def quantile_upper(d: DiscreteDistribution, alpha: float) -> float:
    alpha = _check_alpha(alpha)
    if alpha == 1.0:
        return math.inf
    return float(quantile_upper_many(d.values, d.probs, alpha))


def var(d: DiscreteDistribution, alpha: float) -> float:
    """Value-at-Risk, the upper quantile."""
    return quantile_upper(d, alpha)


def grid_index(alpha: float, J: int) -> int:
    """Largest ``j <= J - 1`` with ``j / J <= alpha`` (evaluated in floating point)."""
    j = min(math.floor(alpha * J), J - 1)
    while j + 1 <= J - 1 and (j + 1) / J <= alpha:
        j += 1
    while j > 0 and j / J > alpha:
        j -= 1
    return j


def f_lower(alpha: float, J: int) -> float:
    """Largest grid level ``j/J`` not exceeding ``alpha``."""
    return grid_index(_check_alpha(alpha), J) / J


def f_upper(alpha: float, J: int) -> float:
    """Right end ``(j+1)/J`` of the grid cell containing ``alpha``."""
    return (grid_index(_check_alpha(alpha), J) + 1) / J


# ------------------------------------------------------------------- losses


def quantile_loss(alpha: float, delta):
    """Pinball loss ``max(alpha*delta, -(1-alpha)*delta)``."""
    alpha = _check_alpha(alpha)
    d = np.asarray(delta, dtype=float)
    out = np.maximum(alpha * d, -(1.0 - alpha) * d)
    return float(out) if out.ndim == 0 else out


def pinball_grad(alpha: float, delta):
    """Subgradient of the pinball loss, taking the value 0 at ``delta == 0``."""
    d = np.asarray(delta, dtype=float)
    out = np.where(d > 0, alpha, np.where(d < 0, alpha - 1.0, 0.0))
    return float(out) if out.ndim == 0 else out


def _soft(alpha, kappa, d):
    return np.select(
        [d < -kappa, d < 0, d < kappa],
        [
            0.5 * (1.0 - alpha) * kappa * ((d + kappa) ** 2 - 2.0 * d / kappa - 1.0),
            (1.0 - alpha) * d * d / (2.0 * kappa),
            alpha * d * d / (2.0 * kappa),
        ],
        0.5 * alpha * kappa * ((d - kappa) ** 2 + 2.0 * d / kappa - 1.0),
    )


def _soft_grad(alpha, kappa, d):
    return np.select(
        [d < -kappa, d < 0, d < kappa],
        [
            (1.0 - alpha) * (kappa * d + kappa * kappa - 1.0),
            (1.0 - alpha) / kappa * d,
            alpha / kappa * d,
        ],
        alpha * (kappa * d - kappa * kappa + 1.0),
    )


def soft_loss(alpha: float, kappa: float, delta):
    """Soft-quantile loss: quadratic on ``[-kappa, kappa)``, nearly linear outside."""
    alpha = _check_alpha(alpha, open_interval=True)
    kappa = _check_kappa(kappa)
    out = _soft(alpha, kappa, np.asarray(delta, dtype=float))
    return float(out) if out.ndim == 0 else out


def soft_loss_grad(alpha: float, kappa: float, delta):
    alpha = _check_alpha(alpha, open_interval=True)
    kappa = _check_kappa(kappa)
    out = _soft_grad(alpha, kappa, np.asarray(delta, dtype=float))
    return float(out) if out.ndim == 0 else out


def strong_convexity(alpha: float, kappa: float) -> float:
    """Lower bound ``min(alpha, 1-alpha) * kappa`` on the slope of the loss derivative."""
    return min(alpha, 1.0 - alpha) * kappa


def grad_lipschitz(alpha: float, kappa: float) -> float:
    """Upper bound ``max(alpha, 1-alpha) / kappa`` on the slope of the loss derivative."""
    return max(alpha, 1.0 - alpha) / kappa


def huber_loss(alpha: float, h: float, delta):
    """Huber quantile regression loss with threshold ``h``."""
    alpha = _check_alpha(alpha)
    h = float(h)
    if not h > 0:
        raise ParamOutOfRange(f"Huber threshold must be positive, got {h!r}")
    d = np.asarray(delta, dtype=float)
    out = np.select(
        [d < -h, d <= 0, d <= h],
        [
            -(1.0 - alpha) * (d + h) + 0.5 * (1.0 - alpha) * h,
            (1.0 - alpha) * d * d / (2.0 * h),
            alpha * d * d / (2.0 * h),
        ],
        alpha * (d - h) + 0.5 * alpha * h,
    )
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------- shortfall


def shortfall_many(values: np.ndarray, weights: np.ndarray, alphas, kappa: float) -> np.ndarray:
    """Roots ``m`` of ``E[d/dδ soft_loss(x - m)] = 0`` for several levels.

    The expectation is piecewise linear in ``m`` with breakpoints at
    ``{z - kappa, z, z + kappa}``; it is evaluated exactly on the sorted
    breakpoints and the root is read off the linear piece holding the sign
    change. ``values`` need not be sorted.
    """
    order = np.argsort(values, kind="stable")
    x = np.asarray(values, dtype=float)[order]
    w = np.asarray(weights, dtype=float)[order]
    alphas = np.atleast_1d(np.asarray(alphas, dtype=float))
    lo, hi = x[0], x[-1]
    if lo == hi:
        return np.full(alphas.shape, lo)

    bps = np.concatenate([x - kappa, x, x + kappa])
    bps = np.unique(bps[(bps >= lo) & (bps <= hi)])

    cw = np.concatenate([[0.0], np.cumsum(w)])
    cwx = np.concatenate([[0.0], np.cumsum(w * x)])

    def region(a_edge, b_edge):
        # atoms with a_edge <= x < b_edge
        ia = np.searchsorted(x, a_edge, side="left")
        ib = np.searchsorted(x, b_edge, side="left")
        return cw[ib] - cw[ia], cwx[ib] - cwx[ia]

    inf = np.full_like(bps, np.inf)
    w4, x4 = region(bps + kappa, inf)
    w3, x3 = region(bps, bps + kappa)
    w2, x2 = region(bps - kappa, bps)
    w1, x1 = region(-inf, bps - kappa)
    # sums of (x - m) per region
    e4, e3, e2, e1 = x4 - bps * w4, x3 - bps * w3, x2 - bps * w2, x1 - bps * w1
    upper_part = kappa * e4 + (1.0 - kappa * kappa) * w4 + e3 / kappa
    lower_part = e2 / kappa + kappa * e1 + (kappa * kappa - 1.0) * w1

    g = alphas[:, None] * upper_part[None, :] + (1.0 - alphas[:, None]) * lower_part[None, :]
    out = np.empty(alphas.shape)
    for i in range(len(alphas)):
        gi = g[i]
        # g is decreasing in m; last breakpoint with g >= 0
        k = int(np.searchsorted(-gi, 0.0, side="right")) - 1
        if k < 0:
            out[i] = bps[0]
        elif k >= len(bps) - 1 or gi[k] == 0.0:
            out[i] = bps[k]
        else:
            m = bps[k] + gi[k] * (bps[k + 1] - bps[k]) / (gi[k] - gi[k + 1])
            out[i] = min(max(m, bps[k]), bps[k + 1])
    return out


def shortfall_value(d: DiscreteDistribution, alpha: float, kappa: float) -> float:
    """Soft-quantile (shortfall) risk value of ``d``: the unique minimizer of
    ``m -> E[soft_loss(alpha, kappa, x - m)]``."""
    alpha = _check_alpha(alpha, open_interval=True)
    kappa = _check_kappa(kappa)
    return float(shortfall_many(d.values, d.probs, alpha, kappa)[0])


# --------------------------------------------------------------- diagnostics


def wasserstein1(u, v) -> float:
    """Mean absolute difference between two quantile vectors on a shared grid."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape or u.ndim != 1:
        raise LengthMismatch(f"shapes {u.shape} and {v.shape} differ")
    if u.size == 0:
        raise LengthMismatch("empty quantile vectors")
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
        raise NonFiniteInput("quantile vectors must be finite")
    return float(np.mean(np.abs(u - v)))
