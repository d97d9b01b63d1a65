"""Policy execution, seeded rollouts and Monte Carlo quantile estimates.

Every episode owns a generator seeded from ``(master_seed, episode_index)``
and consumes exactly one uniform draw per step to pick the successor.
The batched runners advance many episodes in lockstep and reproduce the
single-episode functions draw for draw.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import binom

from .dp import QTensor
from .errors import (
    AlphaOutOfRange,
    GammaZero,
    HorizonMismatch,
    IndexOutOfRange,
    ParamOutOfRange,
    TooFewSamples,
)
from .mdp import Mdp

TAU_EPS = 1e-14
CI_LEVEL = 0.99
MIN_SAMPLES = 20


@dataclass
class EpisodeResult:
    discounted_return: float
    trace: list | None = None  # (t, s, j, a, r) per step when requested


def episode_seed(master: int, index: int) -> int:
    """64-bit seed of episode ``index`` derived from ``master``."""
    ss = np.random.SeedSequence([int(master), int(index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def episode_uniforms(seed: int, T: int) -> np.ndarray:
    return np.random.default_rng(seed).random(T)


def _check_common(mdp: Mdp, s0: int, T: int):
    if T < 1:
        raise ParamOutOfRange(f"T must be >= 1, got {T}")
    if not 0 <= s0 < mdp.n_states:
        raise IndexOutOfRange(f"start state {s0} outside [0, {mdp.n_states})")


def _check_var_inputs(mdp: Mdp, q: QTensor, s0: int, alpha0: float, T: int):
    _check_common(mdp, s0, T)
    if not 0.0 < alpha0 < 1.0:
        raise AlphaOutOfRange(f"alpha0 must lie in (0, 1), got {alpha0!r}")
    if mdp.gamma == 0.0:
        raise GammaZero("the risk-level update divides by gamma")
    if not q.time_free and q.horizon < T:
        raise HorizonMismatch(f"table horizon {q.horizon} is shorter than T={T}")
    if q.values.shape[-3] != mdp.n_states or q.values.shape[-1] != mdp.n_actions:
        raise HorizonMismatch(f"table shape {q.values.shape} does not fit {mdp!r}")


def _next_index(v_next: np.ndarray, tau: float) -> int:
    """Smallest ``j'`` with ``v_next[j'] >= tau - eps |tau|``, else ``J - 1``."""
    hits = np.nonzero(v_next >= tau - TAU_EPS * abs(tau))[0]
    return int(hits[0]) if hits.size else len(v_next) - 1


def exec_var_episode(mdp: Mdp, q: QTensor, s0: int, alpha0: float, T: int, rng_seed: int, *,
                     record: bool = False) -> EpisodeResult:
    """Run one episode of the risk-level tracking policy.

    Start at ``j = floor(J * alpha0)``; act greedily on ``q_t(s, j, .)``; after
    observing ``(r, s')`` carry the residual target ``(q_t(s, j, a) - r) / gamma``
    over to the smallest ``j'`` whose value at ``s'`` still reaches it.
    """
    _check_var_inputs(mdp, q, s0, alpha0, T)
    J = q.grid.J
    u = episode_uniforms(rng_seed, T)
    s, j = s0, q.grid.index(alpha0)
    total, disc = 0.0, 1.0
    trace = [] if record else None
    for k in range(T):
        t = T - k
        row = q.slice(t)[s, j]
        a = int(np.argmax(row))
        s_next, r = mdp.sample(s, a, u[k])
        if record:
            trace.append((t, s, j, a, r))
        total += disc * r
        disc *= mdp.gamma
        if t > 1:
            tau = (float(row[a]) - r) / mdp.gamma
            j = _next_index(q.slice(t - 1)[s_next].max(axis=1), tau)
        assert 0 <= j < J
        s = s_next
    return EpisodeResult(total, trace)


def simulate_markov(mdp: Mdp, policy, s0: int, T: int, rng_seed: int, *, record: bool = False) -> EpisodeResult:
    """Roll out ``policy[k, s]`` for ``T`` steps."""
    _check_common(mdp, s0, T)
    policy = np.asarray(policy)
    if policy.shape[0] < T or policy.shape[1] != mdp.n_states:
        raise HorizonMismatch(f"policy table {policy.shape} cannot drive T={T} steps")
    u = episode_uniforms(rng_seed, T)
    s, total, disc = s0, 0.0, 1.0
    trace = [] if record else None
    for k in range(T):
        a = int(policy[k, s])
        s_next, r = mdp.sample(s, a, u[k])
        if record:
            trace.append((T - k, s, None, a, r))
        total += disc * r
        disc *= mdp.gamma
        s = s_next
    return EpisodeResult(total, trace)


# ------------------------------------------------------------------ batched


def _uniform_matrix(seeds, T: int) -> np.ndarray:
    return np.stack([episode_uniforms(sd, T) for sd in seeds]) if len(seeds) else np.zeros((0, T))


def _step(mdp: Mdp, s: np.ndarray, a: np.ndarray, u: np.ndarray):
    succ, cdf, rew = mdp.sampling_table
    slot = np.count_nonzero(cdf[s, a] <= u[:, None], axis=1)
    return succ[s, a, slot], rew[s, a, slot]


def _next_index_many(V: np.ndarray, s_next: np.ndarray, tau: np.ndarray, monotone: bool) -> np.ndarray:
    J = V.shape[1]
    thr = tau - TAU_EPS * np.abs(tau)
    if monotone:
        out = np.empty(len(s_next), dtype=np.int64)
        for sv in np.unique(s_next):
            m = s_next == sv
            out[m] = np.searchsorted(V[sv], thr[m], side="left")
        out[out >= J] = J - 1
        return out
    hit = V[s_next] >= thr[:, None]
    return np.where(hit.any(axis=1), hit.argmax(axis=1), J - 1)


def exec_var_batch(mdp: Mdp, q: QTensor, s0: int, alpha0: float, T: int, seeds) -> np.ndarray:
    """Discounted returns of :func:`exec_var_episode` for each seed."""
    _check_var_inputs(mdp, q, s0, alpha0, T)
    U = _uniform_matrix(seeds, T)
    n = len(U)
    s = np.full(n, s0, dtype=np.int64)
    j = np.full(n, q.grid.index(alpha0), dtype=np.int64)
    total = np.zeros(n)
    disc = 1.0
    for k in range(T):
        t = T - k
        rows = q.slice(t)[s, j]
        a = rows.argmax(axis=1)
        s_next, r = _step(mdp, s, a, U[:, k])
        total += disc * r
        disc *= mdp.gamma
        if t > 1:
            tau = (rows[np.arange(n), a] - r) / mdp.gamma
            V = q.slice(t - 1).max(axis=2)
            monotone = bool(np.all(np.diff(V, axis=1) >= 0))
            j = _next_index_many(V, s_next, tau, monotone)
        s = s_next
    return total


def simulate_markov_batch(mdp: Mdp, policy, s0: int, T: int, seeds) -> np.ndarray:
    _check_common(mdp, s0, T)
    policy = np.asarray(policy)
    if policy.shape[0] < T or policy.shape[1] != mdp.n_states:
        raise HorizonMismatch(f"policy table {policy.shape} cannot drive T={T} steps")
    U = _uniform_matrix(seeds, T)
    s = np.full(len(U), s0, dtype=np.int64)
    total = np.zeros(len(U))
    disc = 1.0
    for k in range(T):
        s, r = _step(mdp, s, policy[k, s], U[:, k])
        total += disc * r
        disc *= mdp.gamma
    return total


# --------------------------------------------------------------- estimation


def quantile_ci_indices(n: int, alpha: float, level: float = CI_LEVEL) -> tuple[int, int]:
    """Order-statistic indices bracketing the ``alpha`` quantile with coverage ``level``.

    The count of samples below the true quantile is Binomial(n, alpha).
    """
    tail = (1.0 - level) / 2.0
    lo = int(binom.ppf(tail, n, alpha)) - 1
    hi = int(binom.ppf(1.0 - tail, n, alpha))
    point = min(math.floor(alpha * n), n - 1)
    lo = min(max(lo, 0), point)
    hi = max(min(hi, n - 1), point)
    return lo, hi


def mc_quantile(returns, alpha: float):
    """Empirical upper ``alpha`` quantile and its 99% order-statistic interval."""
    x = np.sort(np.asarray(returns, dtype=float))
    n = len(x)
    if n < MIN_SAMPLES:
        raise TooFewSamples(f"need at least {MIN_SAMPLES} samples, got {n}")
    if not 0.0 < alpha < 1.0:
        raise AlphaOutOfRange(f"alpha must lie in (0, 1), got {alpha!r}")
    point = min(math.floor(alpha * n), n - 1)
    lo, hi = quantile_ci_indices(n, alpha)
    return float(x[point]), (float(x[lo]), float(x[hi]))


@dataclass
class EvalRow:
    alpha: float
    point: float
    ci_lo: float
    ci_hi: float
    n: int
    seed: int

    @property
    def half_width(self) -> float:
        return (self.ci_hi - self.ci_lo) / 2.0


@dataclass
class EvalReport:
    rows: list[EvalRow] = field(default_factory=list)

    HEADER = ("alpha", "point", "ci_lo", "ci_hi", "n", "seed")

    def by_alpha(self, alpha: float) -> EvalRow:
        for row in self.rows:
            if row.alpha == alpha:
                return row
        raise KeyError(alpha)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(",".join(self.HEADER) + "\n")
        for r in self.rows:
            buf.write(f"{r.alpha!r},{r.point!r},{r.ci_lo!r},{r.ci_hi!r},{r.n},{r.seed}\n")
        return buf.getvalue()


def episode_seeds(seed: int, episodes: int) -> list[int]:
    return [episode_seed(seed, i) for i in range(episodes)]


def evaluate_policy(mdp: Mdp, policy_kind: str, q_or_table, s0: int, T: int, alphas, episodes: int,
                    seed: int) -> EvalReport:
    """Quantile report over ``alphas``.

    ``policy_kind == "var"`` runs the risk-level tracking policy once per
    ``alpha`` with ``alpha0 = alpha``; ``"markov"`` rolls out one action table
    and reads every quantile off the same returns. Episode ``i`` always uses
    :func:`episode_seed` ``(seed, i)``.
    """
    if episodes < 100:
        raise ParamOutOfRange(f"episodes must be >= 100, got {episodes}")
    seeds = episode_seeds(seed, episodes)
    report = EvalReport()
    if policy_kind == "var":
        for alpha in alphas:
            ret = exec_var_batch(mdp, q_or_table, s0, alpha, T, seeds)
            point, (lo, hi) = mc_quantile(ret, alpha)
            report.rows.append(EvalRow(float(alpha), point, lo, hi, episodes, seed))
    elif policy_kind == "markov":
        ret = simulate_markov_batch(mdp, q_or_table, s0, T, seeds)
        for alpha in alphas:
            point, (lo, hi) = mc_quantile(ret, alpha)
            report.rows.append(EvalRow(float(alpha), point, lo, hi, episodes, seed))
    else:
        raise ParamOutOfRange(f"policy_kind must be 'var' or 'markov', got {policy_kind!r}")
    return report
