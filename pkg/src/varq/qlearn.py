"""VaR-Q-learning: stochastic approximation of the soft-quantile sweep.

Only the successor state is sampled. The expectation over the next risk
index ``j'`` is summed exactly, so one update of cell ``(t, s, j, a)`` reads

    q += (beta / J) * sum_j' dloss_{j/J}(r + gamma * max_a' q(t-1, s', j', a') - q)

Cells with ``j = 0`` (or ``t = 0``) relax toward the floor ``t * r_min``.
The time-free variant drops ``t``, works in rewards scaled to ``[0, 1]``
and is unscaled on output.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field

import numpy as np

from .dp import QTensor, RiskGrid, solve_stationary_soft, solve_var_dp
from .errors import (
    BetaOutOfRange,
    GammaOne,
    IndexOutOfRange,
    KappaOutOfRange,
    NonFiniteValue,
    ParamOutOfRange,
    ShapeMismatch,
)
from .mdp import Mdp
from .risk import _soft_grad, huber_loss, pinball_grad, quantile_loss, soft_loss, wasserstein1


@dataclass(frozen=True)
class TrainConfig:
    """Training schedule.

    ``T = None`` selects the time-free variant. ``schedule`` is ``"geometric"``
    (``lr_scale * 0.1 ** (lr_decay * i)``) or ``"harmonic"``
    (``rm_scale / (1 + i)``). ``counter`` keys the occurrence index on the
    pair ``(s, a)`` or on the full cell; under synchronous sweeps both equal
    the sweep number.
    """

    J: int
    T: int | None = None
    kappa: float = 1e-4
    sweeps: int = 20000
    lr_scale: float = 100.0
    lr_decay: float = 0.0003
    seed: int = 0
    scale_rewards: bool = True
    schedule: str = "geometric"
    rm_scale: float = 1.0
    counter: str = "pair"
    s0: int = 0

    def __post_init__(self):
        if int(self.J) != self.J or self.J < 2:
            raise ParamOutOfRange(f"J must be an integer >= 2, got {self.J!r}")
        if self.T is not None and self.T < 1:
            raise ParamOutOfRange(f"T must be >= 1, got {self.T}")
        if self.sweeps < 1:
            raise ParamOutOfRange(f"sweeps must be >= 1, got {self.sweeps}")
        if not 0.0 <= self.kappa <= 1.0:
            raise KappaOutOfRange(f"kappa must lie in [0, 1], got {self.kappa!r}")
        if self.schedule not in ("geometric", "harmonic"):
            raise ParamOutOfRange(f"unknown schedule {self.schedule!r}")
        if self.counter not in ("pair", "cell"):
            raise ParamOutOfRange(f"unknown counter keying {self.counter!r}")

    @property
    def time_free(self) -> bool:
        return self.T is None


@dataclass(frozen=True)
class SampleEvent:
    t: int | None
    s: int
    j: int
    a: int
    s_next: int
    i: int = 0


@dataclass(frozen=True)
class RewardScale:
    """Affine map ``r -> (r - lo) / span`` used by the time-free variant."""

    lo: float = 0.0
    span: float = 1.0

    @classmethod
    def of(cls, mdp: Mdp) -> "RewardScale":
        span = mdp.r_max - mdp.r_min
        return cls(mdp.r_min, span if span > 0 else 1.0)

    def forward(self, r):
        return (r - self.lo) / self.span

    def unscale_values(self, q: np.ndarray, gamma: float) -> np.ndarray:
        return q * self.span + self.lo / (1.0 - gamma)


IDENTITY = RewardScale()


def _scale_of(q: QTensor) -> RewardScale:
    return q.meta.get("reward_scale", IDENTITY) if q.scaled else IDENTITY


def _floor(mdp: Mdp, q: QTensor, t: int | None) -> float:
    """Target of the boundary cells."""
    if q.time_free:
        lo = _scale_of(q).forward(mdp.r_min)
        return lo / (1.0 - mdp.gamma)
    return t * mdp.r_min


def ql_init(mdp: Mdp, cfg: TrainConfig) -> QTensor:
    """``t * r_min`` everywhere (time-indexed) or ``1 / (1 - gamma)`` in scaled units (time-free)."""
    grid = RiskGrid(cfg.J)
    S, A = mdp.n_states, mdp.n_actions
    if not cfg.time_free:
        vals = np.broadcast_to(mdp.r_min * np.arange(cfg.T + 1, dtype=float)[:, None, None, None],
                               (cfg.T + 1, S, cfg.J, A)).copy()
        return QTensor("lower", vals, grid, cfg.kappa)
    if mdp.gamma >= 1.0:
        raise GammaOne("the time-free variant needs gamma < 1")
    if cfg.scale_rewards:
        q = QTensor("time_free", np.full((S, cfg.J, A), 1.0 / (1.0 - mdp.gamma)), grid, cfg.kappa, scaled=True)
        q.meta["reward_scale"] = RewardScale.of(mdp)
        return q
    return QTensor("time_free", np.full((S, cfg.J, A), mdp.r_max / (1.0 - mdp.gamma)), grid, cfg.kappa)


def step_size(i: int, cfg: TrainConfig) -> float:
    if i < 0:
        raise ParamOutOfRange(f"occurrence index must be >= 0, got {i}")
    if cfg.schedule == "harmonic":
        return cfg.rm_scale / (1.0 + i)
    return cfg.lr_scale * 0.1 ** (cfg.lr_decay * i)


def loss_grad(alpha, kappa: float, delta):
    """Soft-quantile loss derivative; the pinball subgradient (0 at 0) when ``kappa == 0``."""
    if kappa == 0.0:
        return pinball_grad(alpha, delta)
    return _soft_grad(alpha, kappa, delta)


def ql_update(q: QTensor, ev: SampleEvent, beta: float, kappa: float, mdp: Mdp) -> float:
    """New value of the cell addressed by ``ev`` (the table is not modified)."""
    J = q.grid.J
    S, A = mdp.n_states, mdp.n_actions
    if not (0 <= ev.s < S and 0 <= ev.a < A and 0 <= ev.j < J and 0 <= ev.s_next < S):
        raise IndexOutOfRange(f"event {ev} outside the table")
    if not q.time_free and not 0 <= ev.t <= q.horizon:
        raise IndexOutOfRange(f"time {ev.t} outside [0, {q.horizon}]")
    table = q.slice(ev.t)
    old = float(table[ev.s, ev.j, ev.a])
    if ev.j == 0 or (not q.time_free and ev.t == 0):
        check_beta(beta)
        return old + beta * (_floor(mdp, q, ev.t) - old)
    r = float(_scale_of(q).forward(mdp.reward(ev.s, ev.a, ev.s_next)))
    prev = q.values if q.time_free else q.values[ev.t - 1]
    target = r + mdp.gamma * prev[ev.s_next].max(axis=1)
    g = loss_grad(ev.j / J, kappa, target - old)
    return old + beta / J * float(np.sum(g))


def check_beta(beta: float) -> None:
    if beta > 1.0:
        raise BetaOutOfRange(f"boundary relaxation needs beta <= 1, got {beta!r}")


# ----------------------------------------------------------------- training


@dataclass
class TrainResult:
    q: QTensor
    diagnostics: list[tuple[int, float]] = field(default_factory=list)

    def diagnostics_csv(self) -> str:
        buf = io.StringIO()
        buf.write("sweep,w1\n")
        for sweep, w in self.diagnostics:
            buf.write(f"{sweep},{w!r}\n")
        return buf.getvalue()


def default_target(mdp: Mdp, cfg: TrainConfig) -> QTensor:
    """Fixed point the diagnostics compare against."""
    grid = RiskGrid(cfg.J)
    if cfg.time_free:
        return solve_stationary_soft(mdp, grid, max(cfg.kappa, 1e-12))
    if cfg.kappa == 0.0:
        return solve_var_dp(mdp, grid, cfg.T, "lower")
    return solve_var_dp(mdp, grid, cfg.T, "soft", cfg.kappa)


def _w1(cur: np.ndarray, target: np.ndarray, s0: int) -> float:
    return wasserstein1(cur[s0].max(axis=1), target[s0].max(axis=1))


def _update_slice(cur: np.ndarray, prev: np.ndarray, mdp: Mdp, kappa: float, beta: float,
                  u: np.ndarray, floor: float, rew_fn) -> np.ndarray:
    """One synchronous pass over an ``[s, j, a]`` slice reading ``prev``."""
    S, J, A = cur.shape
    succ, cdf, rew = mdp.sampling_table
    s_idx = np.arange(S)[:, None, None]
    a_idx = np.arange(A)[None, None, :]
    slot = np.count_nonzero(cdf[s_idx, a_idx] <= u[..., None], axis=-1)  # [s, j, a]
    s_next = succ[s_idx, a_idx, slot]
    r = rew_fn(rew[s_idx, a_idx, slot])
    V = prev.max(axis=2)  # [s', j']
    delta = r[..., None] + mdp.gamma * V[s_next] - cur[..., None]  # [s, j, a, j']
    alphas = (np.arange(J) / J)[None, :, None, None]
    g = loss_grad(alphas, kappa, delta).sum(axis=-1)
    out = cur + beta / J * g
    b = min(beta, 1.0)
    out[:, 0, :] = cur[:, 0, :] + b * (floor - cur[:, 0, :])
    return out


def _sweep(vals, q, mdp, cfg, beta, rng, scale) -> None:
    """One synchronous sweep over the whole table, in place."""
    S, J, A = mdp.n_states, cfg.J, mdp.n_actions
    if cfg.time_free:
        u = rng.random((S, J, A))
        vals[:] = _update_slice(vals, vals.copy(), mdp, cfg.kappa, beta, u, _floor(mdp, q, None),
                                scale.forward)
    else:
        vals[0] += min(beta, 1.0) * (0.0 - vals[0])
        for t in range(1, cfg.T + 1):
            u = rng.random((S, J, A))
            vals[t] = _update_slice(vals[t], vals[t - 1], mdp, cfg.kappa, beta, u, t * mdp.r_min,
                                    scale.forward)


def train(mdp: Mdp, cfg: TrainConfig, target: QTensor | None = None, *,
          record_every: int = 1) -> TrainResult:
    """Synchronous sweeps: every cell receives one update per sweep.

    Time-indexed runs update the slices ``t = 1..T`` in order, each reading
    the already updated slice ``t - 1``. Time-free runs update the whole table
    from a snapshot taken at the start of the sweep. Successor draws come from
    a single generator seeded with ``cfg.seed``, one array per slice.
    """
    q = ql_init(mdp, cfg)
    if target is not None and target.values.shape != q.values.shape:
        raise ShapeMismatch(f"target shape {target.values.shape} != {q.values.shape}")
    if not 0 <= cfg.s0 < mdp.n_states:
        raise IndexOutOfRange(f"diagnostic state {cfg.s0} outside [0, {mdp.n_states})")
    rng = np.random.default_rng(cfg.seed)
    result = TrainResult(q)
    vals = q.values
    scale = _scale_of(q)

    for sweep in range(cfg.sweeps):
        beta = step_size(sweep, cfg)
        with np.errstate(over="ignore", invalid="ignore"):
            _sweep(vals, q, mdp, cfg, beta, rng, scale)
        if not np.isfinite(vals).all():
            raise NonFiniteValue(f"training diverged at sweep {sweep} (step size {beta:g})")
        if target is not None and ((sweep + 1) % record_every == 0 or sweep + 1 == cfg.sweeps):
            result.diagnostics.append((sweep + 1, _w1_of(q, target, mdp, cfg.s0)))
    return result


def _w1_of(q: QTensor, target: QTensor, mdp: Mdp, s0: int) -> float:
    cur = unscaled(q, mdp).values if q.scaled else q.values
    if q.time_free:
        return _w1(cur, target.values, s0)
    return _w1(cur[-1], target.values[-1], s0)


def unscaled(q: QTensor, mdp: Mdp) -> QTensor:
    """Time-free table mapped back to the original reward units."""
    if not q.scaled:
        return q
    vals = _scale_of(q).unscale_values(q.values, mdp.gamma)
    return QTensor(q.kind, vals, q.grid, q.kappa)


def train_output(mdp: Mdp, cfg: TrainConfig, target: QTensor | None = None, **kw) -> TrainResult:
    """:func:`train` followed by unscaling of a time-free table."""
    res = train(mdp, cfg, target, **kw)
    res.q = unscaled(res.q, mdp)
    return res


# -------------------------------------------------------- loss comparators


def _rng(rng) -> np.random.Generator:
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


def _sample_reward(mdp: Mdp, q: QTensor, s: int, a: int, s_next: int) -> float:
    return float(_scale_of(q).forward(mdp.reward(s, a, s_next)))


def risk_sampled_loss(q: QTensor, sample, K: int, K_next: int, kappa: float, rng, mdp: Mdp) -> float:
    """Sampled soft-quantile loss with one greedy next action per sampled next level.

    ``sample = (t, s, a, s')``. Current levels ``tau_k`` below ``1/J`` contribute
    ``(q(t, s, 0, a) - t * r_min)**2`` instead of the quantile loss; both
    terms sit inside the sum over next levels and the total is averaged over ``K``.
    """
    if K < 1 or K_next < 1:
        raise ParamOutOfRange("K and K' must be >= 1")
    t, s, a, s_next = sample
    J = q.grid.J
    g = _rng(rng)
    tau = g.random(K)
    tau_next = g.random(K_next)
    cur, prev = q.slice(t), (q.values if q.time_free else q.values[t - 1])
    j_next = np.minimum((tau_next * J).astype(np.int64), J - 1)
    a_star = prev[s_next, j_next].argmax(axis=1)
    nxt = prev[s_next, j_next, a_star]
    r = _sample_reward(mdp, q, s, a, s_next)
    j_cur = np.minimum((tau * J).astype(np.int64), J - 1)
    total = 0.0
    for k in range(K):
        if tau[k] >= 1.0 / J:
            level = j_cur[k] / J
            delta = r + mdp.gamma * nxt - cur[s, j_cur[k], a]
            terms = quantile_loss(level, delta) if kappa == 0.0 else soft_loss(level, kappa, delta)
            total += float(np.sum(terms))
        else:
            floor = _floor(mdp, q, t)
            total += K_next * (float(cur[s, 0, a]) - floor) ** 2
    return total / K


def iqn_loss(q: QTensor, sample, K: int, K_next: int, h: float, distortion, rng, mdp: Mdp) -> float:
    """Huber quantile loss with a single next action chosen on the distorted mean.

    ``distortion[j]`` weighs risk index ``j``; the total is divided by ``K'``.
    """
    if K < 1 or K_next < 1:
        raise ParamOutOfRange("K and K' must be >= 1")
    J = q.grid.J
    w = np.asarray(distortion, dtype=float)
    if w.shape != (J,):
        raise ShapeMismatch(f"distortion needs {J} weights, got shape {w.shape}")
    t, s, a, s_next = sample
    g = _rng(rng)
    tau = g.random(K)
    tau_next = g.random(K_next)
    cur, prev = q.slice(t), (q.values if q.time_free else q.values[t - 1])
    a_star = int(np.argmax((w[:, None] * prev[s_next]).sum(axis=0) / J))
    j_next = np.minimum((tau_next * J).astype(np.int64), J - 1)
    nxt = prev[s_next, j_next, a_star]
    r = _sample_reward(mdp, q, s, a, s_next)
    j_cur = np.minimum((tau * J).astype(np.int64), J - 1)
    total = 0.0
    for k in range(K):
        delta = r + mdp.gamma * nxt - cur[s, j_cur[k], a]
        total += float(np.sum(huber_loss(tau[k], h, delta)))
    return total / K_next


__all__ = [
    "SampleEvent", "TrainConfig", "TrainResult", "RewardScale", "check_beta", "default_target",
    "iqn_loss", "loss_grad", "ql_init", "ql_update", "risk_sampled_loss", "step_size", "train",
    "train_output", "unscaled",
]
