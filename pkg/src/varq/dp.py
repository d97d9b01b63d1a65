"""Risk-level discretization and dynamic-programming sweeps.

Tables are numpy arrays indexed ``[s, j, a]`` per time step and
``[t, s, j, a]`` for a full horizon. Risk index ``j`` stands for the level
``j / J``. Each sweep builds, for every pair ``(s, a)``, the mixture of the
``S' * J`` atoms ``r(s, a, s') + gamma * max_a' q(s', j', a')`` with weights
``p(s, a, s') / J`` and reads quantiles (or soft quantiles) off it.
"""

from __future__ import annotations

import io
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    AlphaOutOfRange,
    DataError,
    KappaOutOfRange,
    MonotonicityViolation,
    NonFiniteValue,
    ParamOutOfRange,
    RewardBoundsError,
    ShapeMismatch,
)
from .mdp import Mdp
from .risk import grid_index, quantile_lower_many, quantile_upper_many, shortfall_many

KINDS = ("lower", "upper", "soft", "time_free", "dvar")


@dataclass(frozen=True)
class RiskGrid:
    """Uniform grid ``{0, 1/J, ..., (J-1)/J}`` of risk levels."""

    J: int

    def __post_init__(self):
        if int(self.J) != self.J or self.J < 2:
            raise ParamOutOfRange(f"J must be an integer >= 2, got {self.J!r}")

    def level_of(self, j: int) -> float:
        return j / self.J

    @property
    def levels(self) -> np.ndarray:
        return np.arange(self.J) / self.J

    def index(self, alpha: float) -> int:
        """Cell index ``floor(J * alpha)`` capped at ``J - 1``."""
        if not 0.0 <= alpha <= 1.0:
            raise AlphaOutOfRange(f"alpha must lie in [0, 1], got {alpha!r}")
        return grid_index(alpha, self.J)

    def f_lower(self, alpha: float) -> float:
        return self.index(alpha) / self.J

    def f_upper(self, alpha: float) -> float:
        return (self.index(alpha) + 1) / self.J


@dataclass(frozen=True, eq=False)
class WeightedNorm:
    """Weighted max norm with weight ``2**t`` on time slice ``t``."""

    base: float = 2.0

    def weight_of(self, t):
        return self.base ** np.asarray(t, dtype=float)

    def norm(self, x: np.ndarray) -> float:
        w = self.weight_of(np.arange(x.shape[0])).reshape((-1,) + (1,) * (x.ndim - 1))
        return float(np.max(np.abs(x) / w))


@dataclass(eq=False)
class QTensor:
    """Value table over ``(t, s, j, a)`` (or ``(s, j, a)`` when time-free).

    ``scaled`` marks time-free tables kept in standardized reward units.
    """

    kind: str
    values: np.ndarray
    grid: RiskGrid
    kappa: float | None = None
    scaled: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParamOutOfRange(f"unknown tensor kind {self.kind!r}")
        expected = 3 if self.kind == "time_free" else 4
        if self.values.ndim != expected:
            raise ShapeMismatch(f"{self.kind} tensor needs {expected} axes, got {self.values.shape}")
        if self.values.shape[-2] != self.grid.J:
            raise ShapeMismatch(f"risk axis has {self.values.shape[-2]} entries, grid has J={self.grid.J}")

    @property
    def horizon(self) -> int | None:
        return None if self.kind == "time_free" else self.values.shape[0] - 1

    @property
    def time_free(self) -> bool:
        return self.kind == "time_free"

    def slice(self, t: int) -> np.ndarray:
        """Table ``[s, j, a]`` used at time ``t`` (the same table when time-free)."""
        return self.values if self.time_free else self.values[t]

    def state_values(self, t: int | None = None) -> np.ndarray:
        """``max_a q(t, s, j, a)`` as an ``[s, j]`` array."""
        return self.slice(t).max(axis=-1)


def weighted_norm_dist(x: QTensor | np.ndarray, y: QTensor | np.ndarray, norm: WeightedNorm | None = None) -> float:
    """``max |x - y| / 2**t`` over all cells."""
    xv = x.values if isinstance(x, QTensor) else np.asarray(x)
    yv = y.values if isinstance(y, QTensor) else np.asarray(y)
    if xv.shape != yv.shape:
        raise ShapeMismatch(f"shapes {xv.shape} and {yv.shape} differ")
    return (norm or WeightedNorm()).norm(xv - yv)


# ------------------------------------------------------------------ helpers


def _workers(workers: int | None) -> int:
    if workers is None:
        try:
            workers = int(os.environ.get("QMDP_THREADS", "1"))
        except ValueError:
            workers = 1
        if workers == 0:
            workers = os.cpu_count() or 1
    return max(1, workers)


def _for_pairs(mdp: Mdp, fn, workers: int | None) -> None:
    pairs = [(s, a) for s in range(mdp.n_states) for a in range(mdp.n_actions)]
    n = _workers(workers)
    if n == 1:
        for s, a in pairs:
            fn(s, a)
    else:
        # each pair writes its own output cells, so scheduling cannot change results
        with ThreadPoolExecutor(max_workers=n) as pool:
            list(pool.map(lambda sa: fn(*sa), pairs))


def _check_table(mdp: Mdp, J: int, q: np.ndarray, monotone: bool) -> None:
    if q.shape != (mdp.n_states, J, mdp.n_actions):
        raise ShapeMismatch(f"table shape {q.shape} != {(mdp.n_states, J, mdp.n_actions)}")
    if not np.all(np.isfinite(q)):
        raise NonFiniteValue("table contains non-finite values")
    if monotone and np.any(np.diff(q, axis=1) < 0):
        raise MonotonicityViolation("table is not non-decreasing in the risk index")


def check_reward_bounds(mdp: Mdp) -> None:
    """The boundary values ``t * r_min`` / ``t * r_max`` only bound discounted
    returns when the reward bounds bracket zero (or there is no discounting)."""
    if mdp.gamma < 1.0 and (mdp.r_min > 0.0 or mdp.r_max < 0.0):
        raise RewardBoundsError(
            f"with gamma < 1 the reward bounds must satisfy r_min <= 0 <= r_max, got "
            f"[{mdp.r_min}, {mdp.r_max}]; widen them with Mdp.with_reward_bounds")


def mixture(mdp: Mdp, V: np.ndarray, s: int, a: int):
    """Sorted atoms and weights of ``r + gamma * V(s', j')`` with ``j'`` uniform."""
    idx, p, r = mdp.transitions(s, a)
    J = V.shape[1]
    x = (r[:, None] + mdp.gamma * V[idx]).ravel()
    w = np.repeat(p / J, J)
    order = np.argsort(x, kind="stable")
    return x[order], w[order]


# ------------------------------------------------------------------- sweeps


def bellman_lower_sweep(mdp: Mdp, grid: RiskGrid, q_prev: np.ndarray, *, workers=None) -> np.ndarray:
    """Lower-bound sweep: upper quantile at level ``j/J`` for ``j >= 1``;
    ``r_min + min q_prev(., 0, .)`` at ``j = 0``."""
    J = grid.J
    _check_table(mdp, J, q_prev, monotone=True)
    V = q_prev.max(axis=2)
    out = np.empty_like(q_prev)
    levels = np.arange(1, J) / J

    def one(s, a):
        x, w = mixture(mdp, V, s, a)
        out[s, 1:, a] = quantile_upper_many(x, w, levels)

    _for_pairs(mdp, one, workers)
    out[:, 0, :] = mdp.r_min + q_prev[:, 0, :].min()
    return out


def bellman_upper_sweep(mdp: Mdp, grid: RiskGrid, q_prev: np.ndarray, *, workers=None) -> np.ndarray:
    """Upper-bound sweep: cell ``j`` covers ``[j/J, (j+1)/J)`` and takes the
    lower quantile at ``(j+1)/J``; the last cell is ``r_max + max q_prev(., J-1, .)``."""
    J = grid.J
    _check_table(mdp, J, q_prev, monotone=True)
    V = q_prev.max(axis=2)
    out = np.empty_like(q_prev)
    levels = np.arange(1, J) / J

    def one(s, a):
        x, w = mixture(mdp, V, s, a)
        out[s, :-1, a] = quantile_lower_many(x, w, levels)

    _for_pairs(mdp, one, workers)
    out[:, -1, :] = mdp.r_max + q_prev[:, -1, :].max()
    return out


def bellman_soft_sweep(mdp: Mdp, grid: RiskGrid, kappa: float, q_prev: np.ndarray, t: int, *,
                       workers=None) -> np.ndarray:
    """Soft-quantile sweep producing time slice ``t`` from slice ``t - 1``.

    Cells with ``j = 0`` (and every cell when ``t = 0``) are ``t * r_min``.
    """
    if not 0.0 < kappa <= 1.0:
        raise KappaOutOfRange(f"kappa must lie in (0, 1], got {kappa!r}")
    if t < 0:
        raise ParamOutOfRange(f"t must be >= 0, got {t}")
    J = grid.J
    _check_table(mdp, J, q_prev, monotone=False)
    out = np.empty_like(q_prev)
    if t == 0:
        out[:] = 0.0 * mdp.r_min
        return out
    V = q_prev.max(axis=2)
    levels = np.arange(1, J) / J

    def one(s, a):
        x, w = mixture(mdp, V, s, a)
        out[s, 1:, a] = shortfall_many(x, w, levels, kappa)

    _for_pairs(mdp, one, workers)
    out[:, 0, :] = t * mdp.r_min
    return out


def soft_operator(mdp: Mdp, grid: RiskGrid, kappa: float, q: np.ndarray, *, workers=None) -> np.ndarray:
    """Soft operator applied to every time slice of a ``[t, s, j, a]`` table at once."""
    out = np.empty_like(q)
    out[0] = bellman_soft_sweep(mdp, grid, kappa, q[0], 0, workers=workers)
    for t in range(1, q.shape[0]):
        out[t] = bellman_soft_sweep(mdp, grid, kappa, q[t - 1], t, workers=workers)
    return out


def solve_var_dp(mdp: Mdp, grid: RiskGrid, T: int, kind: str = "lower", kappa: float | None = None, *,
                 workers=None) -> QTensor:
    """Run ``T`` sweeps of the chosen kind from the all-zero table."""
    if T < 1:
        raise ParamOutOfRange(f"T must be >= 1, got {T}")
    check_reward_bounds(mdp)
    shape = (mdp.n_states, grid.J, mdp.n_actions)
    values = np.zeros((T + 1,) + shape)
    for t in range(1, T + 1):
        if kind == "lower":
            values[t] = bellman_lower_sweep(mdp, grid, values[t - 1], workers=workers)
        elif kind == "upper":
            values[t] = bellman_upper_sweep(mdp, grid, values[t - 1], workers=workers)
        elif kind == "soft":
            if kappa is None:
                raise KappaOutOfRange("soft kind needs kappa")
            values[t] = bellman_soft_sweep(mdp, grid, kappa, values[t - 1], t, workers=workers)
        else:
            raise ParamOutOfRange(f"kind must be lower, upper or soft, got {kind!r}")
    return QTensor(kind, values, grid, kappa if kind == "soft" else None)


def solve_stationary_soft(mdp: Mdp, grid: RiskGrid, kappa: float, *, tol: float = 1e-10,
                          max_iter: int = 10_000, workers=None) -> QTensor:
    """Fixed point of the soft sweep without a time index (``gamma < 1``).

    Cells with ``j = 0`` sit at ``r_min / (1 - gamma)``.
    """
    if not mdp.gamma < 1.0:
        raise ParamOutOfRange("a stationary fixed point needs gamma < 1")
    floor = mdp.r_min / (1.0 - mdp.gamma)
    q = np.full((mdp.n_states, grid.J, mdp.n_actions), floor)
    V_levels = np.arange(1, grid.J) / grid.J
    for _ in range(max_iter):
        V = q.max(axis=2)
        nxt = np.empty_like(q)

        def one(s, a):
            x, w = mixture(mdp, V, s, a)
            nxt[s, 1:, a] = shortfall_many(x, w, V_levels, kappa)

        _for_pairs(mdp, one, workers)
        nxt[:, 0, :] = floor
        change = float(np.max(np.abs(nxt - q)))
        q = nxt
        if change <= tol:
            break
    return QTensor("time_free", q, grid, kappa)


# ---------------------------------------------------------------- baselines


def solve_neutral_dp(mdp: Mdp, T: int):
    """Risk-neutral finite-horizon values ``q[t, s, a]`` and greedy rules ``policy[k, s]``.

    ``policy[k]`` is the decision rule at step ``k`` (``T - k`` steps to go).
    """
    if T < 1:
        raise ParamOutOfRange(f"T must be >= 1, got {T}")
    P, R = mdp.dense_p, mdp.dense_r
    q = np.zeros((T + 1, mdp.n_states, mdp.n_actions))
    for t in range(1, T + 1):
        v = q[t - 1].max(axis=1)
        q[t] = (P * (R + mdp.gamma * v[None, None, :])).sum(axis=2)
    if not np.all(np.isfinite(q)):
        raise NonFiniteValue("risk-neutral recursion diverged")
    policy = np.stack([q[T - k].argmax(axis=1) for k in range(T)])
    return q, policy


def _var_of_successors(mdp: Mdp, s: int, a: int, v: np.ndarray, alpha: float) -> float:
    idx, p, r = mdp.transitions(s, a)
    x = r + mdp.gamma * v[idx]
    order = np.argsort(x, kind="stable")
    return float(quantile_upper_many(x[order], p[order], alpha))


def solve_nvar_dp(mdp: Mdp, T: int, alpha0: float):
    """Nested VaR: ``v[t+1](s) = max_a VaR_alpha0[r + gamma * v[t](s')]``.

    Returns values ``v[t, s]`` and greedy rules ``policy[k, s]`` (lowest index on ties).
    """
    if not 0.0 < alpha0 < 1.0:
        raise AlphaOutOfRange(f"alpha0 must lie in (0, 1), got {alpha0!r}")
    if T < 1:
        raise ParamOutOfRange(f"T must be >= 1, got {T}")
    S, A = mdp.n_states, mdp.n_actions
    v = np.zeros((T + 1, S))
    rules = np.zeros((T + 1, S), dtype=np.int64)
    for t in range(1, T + 1):
        for s in range(S):
            vals = [_var_of_successors(mdp, s, a, v[t - 1], alpha0) for a in range(A)]
            best = int(np.argmax(vals))
            rules[t, s] = best
            v[t, s] = vals[best]
    policy = np.stack([rules[T - k] for k in range(T)])
    return v, policy


def dvar_levels(J: int) -> np.ndarray:
    """Cell midpoints ``(2j + 1) / (2J)``."""
    return (2 * np.arange(J) + 1) / (2 * J)


def solve_dvar_dp(mdp: Mdp, grid: RiskGrid, T: int, alpha0: float, *, keep_values: bool = True):
    """Distributional VaR baseline with Markov action selection at ``alpha0``.

    ``q[t+1](s, j, a) = VaR_{alpha_j}[r + gamma * max_a' VaR_alpha0[q[t](s', u, a')]]``
    with ``u`` uniform over the grid and ``alpha_j`` the cell midpoints.
    Returns the tensor (``None`` unless ``keep_values``) and ``policy[k, s]``.
    """
    if not 0.0 < alpha0 < 1.0:
        raise AlphaOutOfRange(f"alpha0 must lie in (0, 1), got {alpha0!r}")
    if T < 1:
        raise ParamOutOfRange(f"T must be >= 1, got {T}")
    S, A, J = mdp.n_states, mdp.n_actions, grid.J
    levels = dvar_levels(J)
    # VaR_alpha0 of a uniform atom set {q(j)}: entry floor(alpha0 * J) of the sorted column
    k0 = grid_index(alpha0, J)
    q_prev = np.zeros((S, J, A))
    stored = np.zeros((T + 1, S, J, A)) if keep_values else None
    rules = np.zeros((T + 1, S), dtype=np.int64)
    for t in range(1, T + 1):
        collapsed = np.sort(q_prev, axis=1)[:, k0, :]  # [s', a']
        w = collapsed.max(axis=1)
        q_next = np.empty_like(q_prev)
        for s in range(S):
            for a in range(A):
                idx, p, r = mdp.transitions(s, a)
                x = r + mdp.gamma * w[idx]
                order = np.argsort(x, kind="stable")
                q_next[s, :, a] = quantile_upper_many(x[order], p[order], levels)
        rules[t] = np.sort(q_next, axis=1)[:, k0, :].argmax(axis=1)
        q_prev = q_next
        if keep_values:
            stored[t] = q_next
    policy = np.stack([rules[T - k] for k in range(T)])
    tensor = QTensor("dvar", stored, grid) if keep_values else None
    return tensor, policy


# ------------------------------------------------------------ serialization


def write_qtensor(q: QTensor, stem) -> tuple[str, str]:
    """Write ``<stem>.csv`` (``t,idstate,j,idaction,value``) and ``<stem>.meta``."""
    stem = os.fspath(stem)
    csv_path, meta_path = stem + ".csv", stem + ".meta"
    vals = q.values if not q.time_free else q.values[None]
    T1, S, J, A = vals.shape
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        fh.write("t,idstate,j,idaction,value\n")
        for t in range(T1):
            for s in range(S):
                for j in range(J):
                    row = vals[t, s, j]
                    fh.write("".join(f"{t},{s},{j},{a},{float(row[a])!r}\n" for a in range(A)))
    with open(meta_path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"kind = {q.kind}\nJ = {J}\n")
        fh.write(f"T = {'' if q.time_free else T1 - 1}\n")
        fh.write(f"kappa = {'' if q.kappa is None else repr(float(q.kappa))}\n")
        fh.write(f"S = {S}\nA = {A}\nscaled = {int(q.scaled)}\n")
    return csv_path, meta_path


def read_qtensor(stem) -> QTensor:
    stem = os.fspath(stem)
    try:
        with open(stem + ".meta", encoding="utf-8") as fh:
            meta = dict(line.split("=", 1) for line in fh.read().splitlines() if "=" in line)
        meta = {k.strip(): v.strip() for k, v in meta.items()}
        kind, J, S, A = meta["kind"], int(meta["J"]), int(meta["S"]), int(meta["A"])
        T1 = 1 if kind == "time_free" else int(meta["T"]) + 1
        kappa = float(meta["kappa"]) if meta.get("kappa") else None
        with open(stem + ".csv", encoding="utf-8") as fh:
            text = fh.read()
    except (KeyError, ValueError) as exc:
        raise DataError(f"malformed tensor metadata at {stem}: {exc}") from None
    lines = text.splitlines()
    if not lines or lines[0].strip() != "t,idstate,j,idaction,value":
        raise DataError(f"bad tensor header in {stem}.csv")
    vals = np.full((T1, S, J, A), np.nan)
    for line in io.StringIO("\n".join(lines[1:])):
        t, s, j, a, v = line.strip().split(",")
        vals[int(t), int(s), int(j), int(a)] = float(v)
    if np.isnan(vals).any():
        raise DataError(f"tensor file {stem}.csv is incomplete")
    if kind == "time_free":
        vals = vals[0]
    return QTensor(kind, vals, RiskGrid(J), kappa, scaled=meta.get("scaled", "0") == "1")
