"""Finite MDP model, CSV ingestion and seeded domain generators.

Rewards are attached to transitions ``(s, a, s')``; a reward that only
depends on ``(s, a)`` is the special case of equal rewards across successors.
"""

from __future__ import annotations

import csv
import io
import math
import os
from collections import defaultdict
from dataclasses import dataclass, field
from functools import cached_property
from typing import BinaryIO, Iterable, Mapping

import numpy as np

from .errors import (
    BadHeader,
    DanglingIndex,
    DuplicateRewardConflict,
    NonNumericField,
    ParamOutOfRange,
    RowProbabilityNegative,
    StochasticityViolation,
)
from .risk import DiscreteDistribution

CSV_HEADER = ("idstatefrom", "idaction", "idstateto", "probability", "reward")
STOCHASTICITY_TOL = 1e-6
DEFAULT_GAMMA = 0.9


@dataclass(frozen=True, eq=False)
class Mdp:
    """Immutable tabular MDP with a sparse transition kernel.

    ``succ[k]``, ``prob[k]`` and ``rew[k]`` hold the successors, their
    probabilities and the transition rewards of the pair ``k = s * A + a``.
    ``r_min`` / ``r_max`` bound every reward; they default to the table range.
    """

    n_states: int
    n_actions: int
    succ: tuple
    prob: tuple
    rew: tuple
    gamma: float = DEFAULT_GAMMA
    r_min: float | None = None
    r_max: float | None = None
    name: str = field(default="mdp", compare=False)

    def __post_init__(self):
        S, A = self.n_states, self.n_actions
        if S < 1 or A < 1:
            raise ParamOutOfRange("an MDP needs at least one state and one action")
        if len(self.succ) != S * A or len(self.prob) != S * A or len(self.rew) != S * A:
            raise DanglingIndex(f"expected {S * A} (state, action) pairs")
        if not 0.0 <= self.gamma <= 1.0:
            raise ParamOutOfRange(f"gamma must lie in [0, 1], got {self.gamma!r}")
        succ, prob, rew = [], [], []
        for k in range(S * A):
            s, a = divmod(k, A)
            idx = np.asarray(self.succ[k], dtype=np.int64)
            p = np.asarray(self.prob[k], dtype=float)
            r = np.asarray(self.rew[k], dtype=float)
            if idx.size == 0:
                raise DanglingIndex(f"(s={s}, a={a}) has no transitions")
            if np.any(idx < 0) or np.any(idx >= S):
                raise DanglingIndex(f"(s={s}, a={a}) points outside [0, {S})")
            if np.any(p < 0):
                raise RowProbabilityNegative(f"(s={s}, a={a}) has a negative probability")
            if not np.all(np.isfinite(r)):
                raise NonNumericField(k, f"non-finite reward at (s={s}, a={a})")
            total = p.sum()
            if abs(total - 1.0) > STOCHASTICITY_TOL:
                raise StochasticityViolation(s, a, float(total))
            keep = p > 0
            idx, p, r = idx[keep], p[keep] / total, r[keep]
            for arr in (idx, p, r):
                arr.setflags(write=False)
            succ.append(idx)
            prob.append(p)
            rew.append(r)
        object.__setattr__(self, "succ", tuple(succ))
        object.__setattr__(self, "prob", tuple(prob))
        object.__setattr__(self, "rew", tuple(rew))
        lo = min(float(r.min()) for r in rew)
        hi = max(float(r.max()) for r in rew)
        r_min = lo if self.r_min is None else float(self.r_min)
        r_max = hi if self.r_max is None else float(self.r_max)
        if r_min > lo or r_max < hi:
            raise ParamOutOfRange(f"reward bounds [{r_min}, {r_max}] do not cover [{lo}, {hi}]")
        object.__setattr__(self, "r_min", r_min)
        object.__setattr__(self, "r_max", r_max)

    # -- access

    def transitions(self, s: int, a: int):
        """``(successors, probabilities, rewards)`` of the pair ``(s, a)``."""
        k = s * self.n_actions + a
        return self.succ[k], self.prob[k], self.rew[k]

    def reward(self, s: int, a: int, s_next: int) -> float:
        idx, _, r = self.transitions(s, a)
        hit = np.nonzero(idx == s_next)[0]
        if hit.size == 0:
            raise DanglingIndex(f"{s_next} is not a successor of (s={s}, a={a})")
        return float(r[hit[0]])

    @cached_property
    def dense_p(self) -> np.ndarray:
        P = np.zeros((self.n_states, self.n_actions, self.n_states))
        for k in range(len(self.succ)):
            s, a = divmod(k, self.n_actions)
            P[s, a, self.succ[k]] = self.prob[k]
        return P

    @cached_property
    def dense_r(self) -> np.ndarray:
        R = np.zeros((self.n_states, self.n_actions, self.n_states))
        for k in range(len(self.succ)):
            s, a = divmod(k, self.n_actions)
            R[s, a, self.succ[k]] = self.rew[k]
        return R

    @cached_property
    def expected_reward(self) -> np.ndarray:
        return (self.dense_p * self.dense_r).sum(axis=2)

    @cached_property
    def sampling_table(self):
        """Padded ``(succ, cdf, rew)`` arrays of shape ``(S, A, B)``.

        The last real cdf entry is exactly 1 and padding sits at 2, so
        ``(cdf <= u).sum(-1)`` maps ``u in [0, 1)`` to a successor slot.
        """
        S, A = self.n_states, self.n_actions
        B = max(len(i) for i in self.succ)
        succ = np.zeros((S, A, B), dtype=np.int64)
        cdf = np.full((S, A, B), 2.0)
        rew = np.zeros((S, A, B))
        for k in range(S * A):
            s, a = divmod(k, A)
            n = len(self.succ[k])
            succ[s, a, :n] = self.succ[k]
            succ[s, a, n:] = self.succ[k][-1]
            c = np.cumsum(self.prob[k])
            c[-1] = 1.0
            cdf[s, a, :n] = c
            rew[s, a, :n] = self.rew[k]
        return succ, cdf, rew

    def sample(self, s: int, a: int, u: float) -> tuple[int, float]:
        """Successor and reward selected by the uniform draw ``u``."""
        succ, cdf, rew = self.sampling_table
        slot = int(np.count_nonzero(cdf[s, a] <= u))
        return int(succ[s, a, slot]), float(rew[s, a, slot])

    def with_gamma(self, gamma: float) -> "Mdp":
        return Mdp(self.n_states, self.n_actions, self.succ, self.prob, self.rew,
                   gamma, self.r_min, self.r_max, self.name)

    def with_reward_bounds(self, r_min: float, r_max: float) -> "Mdp":
        return Mdp(self.n_states, self.n_actions, self.succ, self.prob, self.rew,
                   self.gamma, r_min, r_max, self.name)

    def equals(self, other: "Mdp", atol: float = 0.0) -> bool:
        if (self.n_states, self.n_actions) != (other.n_states, other.n_actions):
            return False
        if self.gamma != other.gamma or self.r_min != other.r_min or self.r_max != other.r_max:
            return False
        for k in range(len(self.succ)):
            if not np.array_equal(self.succ[k], other.succ[k]):
                return False
            if not np.allclose(self.prob[k], other.prob[k], rtol=0, atol=atol):
                return False
            if not np.array_equal(self.rew[k], other.rew[k]):
                return False
        return True

    def __repr__(self) -> str:
        return f"Mdp({self.name!r}, S={self.n_states}, A={self.n_actions}, gamma={self.gamma})"


def from_rows(rows: Iterable[tuple[int, int, int, float, float]], *, n_states=None, n_actions=None,
              gamma: float = DEFAULT_GAMMA, reward_bounds=None, name: str = "mdp") -> Mdp:
    """Assemble an :class:`Mdp` from ``(s, a, s', p, r)`` rows.

    Duplicate ``(s, a, s')`` rows are merged by summing probabilities; their
    rewards must agree within 1e-9.
    """
    merged: dict[tuple[int, int], dict[int, list[float]]] = defaultdict(dict)
    max_s = max_a = -1
    for s, a, sn, p, r in rows:
        s, a, sn = int(s), int(a), int(sn)
        if s < 0 or a < 0 or sn < 0:
            raise DanglingIndex(f"negative index in row {(s, a, sn)}")
        if p < 0:
            raise RowProbabilityNegative(f"negative probability in row {(s, a, sn, p)}")
        max_s, max_a = max(max_s, s, sn), max(max_a, a)
        slot = merged[(s, a)]
        if sn in slot:
            if abs(slot[sn][1] - r) > 1e-9:
                raise DuplicateRewardConflict(f"rewards {slot[sn][1]} and {r} for {(s, a, sn)}")
            slot[sn][0] += p
        else:
            slot[sn] = [float(p), float(r)]
    S = max_s + 1 if n_states is None else n_states
    A = max_a + 1 if n_actions is None else n_actions
    if S <= 0 or A <= 0:
        raise DanglingIndex("no transitions")
    succ, prob, rew = [], [], []
    for s in range(S):
        for a in range(A):
            slot = merged.get((s, a))
            if not slot:
                raise DanglingIndex(f"(s={s}, a={a}) has no transitions")
            total = sum(v[0] for v in slot.values())
            if abs(total - 1.0) > STOCHASTICITY_TOL:
                raise StochasticityViolation(s, a, total)
            keys = sorted(slot)
            succ.append(keys)
            prob.append([slot[k][0] for k in keys])
            rew.append([slot[k][1] for k in keys])
    lo, hi = (None, None) if reward_bounds is None else reward_bounds
    return Mdp(S, A, tuple(succ), tuple(prob), tuple(rew), gamma, lo, hi, name)


# ---------------------------------------------------------------------- CSV


def _read_text(source) -> str:
    if isinstance(source, (bytes, bytearray)):
        data = bytes(source)
    elif isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as fh:
            data = fh.read()
    else:
        data = source.read()
        if isinstance(data, str):
            return data
    try:
        return data.decode("utf-8-sig")
    except UnicodeDecodeError as exc:
        raise BadHeader(f"input is not UTF-8: {exc}") from None


def load_mdp_csv(source: bytes | BinaryIO | str | os.PathLike, *, gamma: float = DEFAULT_GAMMA,
                 reward_bounds=None, name: str = "csv") -> Mdp:
    """Parse the ``idstatefrom,idaction,idstateto,probability,reward`` format."""
    text = _read_text(source)
    reader = csv.reader(io.StringIO(text, newline=""))
    try:
        header = next(reader)
    except StopIteration:
        raise BadHeader("empty file") from None
    if tuple(h.strip() for h in header) != CSV_HEADER:
        raise BadHeader(f"expected header {','.join(CSV_HEADER)!r}, got {','.join(header)!r}")
    rows = []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 5:
            raise NonNumericField(lineno, f"expected 5 fields, got {len(row)}")
        try:
            s, a, sn = (int(row[i].strip()) for i in range(3))
            p, r = float(row[3]), float(row[4])
        except ValueError:
            raise NonNumericField(lineno, f"cannot parse {row!r}") from None
        if not (math.isfinite(p) and math.isfinite(r)):
            raise NonNumericField(lineno, "non-finite number")
        if p < 0:
            raise RowProbabilityNegative(f"line {lineno}: probability {p}")
        rows.append((s, a, sn, p, r))
    if not rows:
        raise DanglingIndex("file has no transitions")
    return from_rows(rows, gamma=gamma, reward_bounds=reward_bounds, name=name)


def mdp_to_csv(mdp: Mdp) -> str:
    out = io.StringIO()
    out.write(",".join(CSV_HEADER) + "\n")
    for k in range(len(mdp.succ)):
        s, a = divmod(k, mdp.n_actions)
        for sn, p, r in zip(mdp.succ[k], mdp.prob[k], mdp.rew[k]):
            out.write(f"{s},{a},{int(sn)},{float(p)!r},{float(r)!r}\n")
    return out.getvalue()


def write_mdp_csv(mdp: Mdp, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(mdp_to_csv(mdp))


# --------------------------------------------------------------- generators

UP, DOWN, LEFT, RIGHT = range(4)
_MOVES = {UP: (-1, 0), DOWN: (1, 0), LEFT: (0, -1), RIGHT: (0, 1)}
CLIFF_REWARD = -100.0
STEP_REWARD = -1.0


def cliffwalk_start(rows: int = 4, cols: int = 12) -> int:
    """Bottom-left start cell, row-major from the top row."""
    return (rows - 1) * cols


def gen_cliffwalk(rows: int = 4, cols: int = 12, slip: float = 0.1, *, gamma: float = DEFAULT_GAMMA) -> Mdp:
    """Slippery cliff-walking grid.

    The chosen direction is followed with probability ``1 - 3 * slip`` and each
    other direction with probability ``slip``. Bumping into a wall keeps the
    agent in place. Entering a cliff cell costs 100; from a cliff cell every
    action returns the agent to the start at no cost. Every other step costs
    1. The goal is absorbing with reward 0.
    """
    if rows < 2 or cols < 2 or not 0.0 <= slip <= 1.0 / 3.0:
        raise ParamOutOfRange(f"cliffwalk needs rows, cols >= 2 and slip in [0, 1/3]; got {rows}, {cols}, {slip}")
    start = cliffwalk_start(rows, cols)
    goal = rows * cols - 1
    cliff = set(range(start + 1, goal))
    rows_out = []
    for s in range(rows * cols):
        r0, c0 = divmod(s, cols)
        for a in range(4):
            if s == goal:
                rows_out.append((s, a, s, 1.0, 0.0))
                continue
            if s in cliff:
                rows_out.append((s, a, start, 1.0, 0.0))
                continue
            for d in range(4):
                p = 1.0 - 3.0 * slip if d == a else slip
                if p == 0.0:
                    continue
                dr, dc = _MOVES[d]
                r1, c1 = r0 + dr, c0 + dc
                if not (0 <= r1 < rows and 0 <= c1 < cols):
                    r1, c1 = r0, c0
                sn = r1 * cols + c1
                rows_out.append((s, a, sn, p, CLIFF_REWARD if sn in cliff else STEP_REWARD))
    return from_rows(rows_out, n_states=rows * cols, n_actions=4, gamma=gamma, name="cliffwalk")


def gen_gamblers_ruin(capital_max: int = 7, win_prob: float = 0.7, *, gamma: float = DEFAULT_GAMMA) -> Mdp:
    """Gambler's ruin: bet ``b`` from capital ``c`` to reach ``capital_max``.

    Action ``b`` bets ``min(b, c, capital_max - c)``. States 0 and
    ``capital_max`` are absorbing; entering ``capital_max`` pays 1 once.
    """
    if capital_max < 2 or not 0.0 < win_prob < 1.0:
        raise ParamOutOfRange(f"gambler's ruin needs capital_max >= 2 and win_prob in (0, 1); "
                              f"got {capital_max}, {win_prob}")
    n_actions = capital_max // 2 + 1
    rows_out = []
    for c in range(capital_max + 1):
        for b in range(n_actions):
            if c in (0, capital_max):
                rows_out.append((c, b, c, 1.0, 0.0))
                continue
            bet = min(b, c, capital_max - c)
            if bet == 0:
                rows_out.append((c, b, c, 1.0, 0.0))
                continue
            up, down = c + bet, c - bet
            rows_out.append((c, b, up, win_prob, 1.0 if up == capital_max else 0.0))
            rows_out.append((c, b, down, 1.0 - win_prob, 0.0))
    return from_rows(rows_out, n_states=capital_max + 1, n_actions=n_actions, gamma=gamma,
                     name="gamblers_ruin")


def gen_inventory(capacity: int, demand: DiscreteDistribution, prices: Mapping[str, float], *,
                  gamma: float = DEFAULT_GAMMA) -> Mdp:
    """Single-item inventory with lost sales.

    State is the stock level, action the order quantity (capped at the free
    capacity). Reward is ``revenue * sales - cost * ordered - holding * leftover``.
    """
    if capacity < 1:
        raise ParamOutOfRange(f"capacity must be >= 1, got {capacity}")
    for v in demand.values:
        if v < 0 or v != math.floor(v):
            raise ParamOutOfRange(f"demand atoms must be non-negative integers, got {v}")
    missing = {"revenue", "cost", "holding"} - set(prices)
    if missing:
        raise ParamOutOfRange(f"missing prices: {sorted(missing)}")
    revenue, cost, holding = float(prices["revenue"]), float(prices["cost"]), float(prices["holding"])
    rows_out = []
    for stock in range(capacity + 1):
        for order in range(capacity + 1):
            ordered = min(order, capacity - stock)
            level = stock + ordered
            for d, p in zip(demand.values, demand.probs):
                sales = min(level, int(d))
                left = level - sales
                r = revenue * sales - cost * ordered - holding * left
                rows_out.append((stock, order, left, float(p), r))
    return from_rows(rows_out, n_states=capacity + 1, n_actions=capacity + 1, gamma=gamma, name="inventory")


def gen_random_mdp(seed: int, S: int, A: int, branching: int, reward_range=(-1.0, 1.0), *,
                   gamma: float = DEFAULT_GAMMA) -> Mdp:
    """Seeded random MDP with ``branching`` successors per pair and ``r(s, a)`` rewards.

    The declared ``reward_range`` becomes the MDP's reward bounds.
    """
    lo, hi = float(reward_range[0]), float(reward_range[1])
    if S < 1 or A < 1 or not 1 <= branching <= S or lo > hi:
        raise ParamOutOfRange(f"invalid random MDP parameters S={S}, A={A}, branching={branching}, "
                              f"reward_range={reward_range}")
    rng = np.random.Generator(np.random.PCG64(seed))
    succ, prob, rew = [], [], []
    for _ in range(S * A):
        idx = np.sort(rng.choice(S, size=branching, replace=False))
        w = rng.random(branching) + 0.05
        w = w / w.sum()
        r = lo + (hi - lo) * rng.random()
        succ.append(idx)
        prob.append(w)
        rew.append(np.full(branching, r))
    return Mdp(S, A, tuple(succ), tuple(prob), tuple(rew), gamma, lo, hi, name=f"random-{seed}")


@dataclass(frozen=True)
class DomainSpec:
    """Named domain plus its generator parameters."""

    kind: str
    parameters: dict = field(default_factory=dict)
    seed: int = 0

    DEFAULTS = {
        "cliffwalk": {"rows": 4, "cols": 12, "slip": 0.1},
        "gamblers_ruin": {"capital_max": 7, "win_prob": 0.7},
        "inventory": {"capacity": 10, "demand": "0:0.2,1:0.3,2:0.3,3:0.2",
                      "revenue": 3.0, "cost": 1.0, "holding": 0.5},
        "random": {"S": 5, "A": 2, "branching": 2, "reward_lo": -1.0, "reward_hi": 1.0},
        "csv": {"path": None},
    }

    def __post_init__(self):
        if self.kind not in self.DEFAULTS:
            raise ParamOutOfRange(f"unknown domain kind {self.kind!r}")
        allowed = self.DEFAULTS[self.kind]
        unknown = set(self.parameters) - set(allowed)
        if unknown:
            raise ParamOutOfRange(f"parameters {sorted(unknown)} do not apply to {self.kind}")
        merged = {**allowed, **self.parameters}
        missing = [k for k, v in merged.items() if v is None]
        if missing:
            raise ParamOutOfRange(f"{self.kind} requires {missing}")
        object.__setattr__(self, "parameters", merged)

    def build(self, gamma: float = DEFAULT_GAMMA) -> Mdp:
        p = self.parameters
        if self.kind == "cliffwalk":
            return gen_cliffwalk(int(p["rows"]), int(p["cols"]), float(p["slip"]), gamma=gamma)
        if self.kind == "gamblers_ruin":
            return gen_gamblers_ruin(int(p["capital_max"]), float(p["win_prob"]), gamma=gamma)
        if self.kind == "inventory":
            return gen_inventory(int(p["capacity"]), parse_demand(p["demand"]),
                                 {k: p[k] for k in ("revenue", "cost", "holding")}, gamma=gamma)
        if self.kind == "random":
            return gen_random_mdp(self.seed, int(p["S"]), int(p["A"]), int(p["branching"]),
                                  (float(p["reward_lo"]), float(p["reward_hi"])), gamma=gamma)
        return load_mdp_csv(p["path"], gamma=gamma)

    def default_start(self) -> int:
        if self.kind == "cliffwalk":
            return cliffwalk_start(int(self.parameters["rows"]), int(self.parameters["cols"]))
        if self.kind == "gamblers_ruin":
            return min(5, int(self.parameters["capital_max"]) - 1)
        return 0


def parse_demand(text) -> DiscreteDistribution:
    """Parse ``"v:p,v:p,..."`` into a distribution."""
    from .risk import dist_new

    if isinstance(text, DiscreteDistribution):
        return text
    pairs = []
    for chunk in str(text).split(","):
        v, _, p = chunk.partition(":")
        try:
            pairs.append((float(v), float(p)))
        except ValueError:
            raise ParamOutOfRange(f"cannot parse demand atom {chunk!r}") from None
    return dist_new(pairs)
