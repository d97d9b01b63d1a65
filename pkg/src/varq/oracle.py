"""Exact return distributions and brute-force optimal VaR on tiny MDPs.

Everything here enumerates: trajectories for a fixed policy, and for the
optimum every achievable conditional return distribution. Only branches with
positive probability are expanded.
"""

from __future__ import annotations

import itertools
from typing import Callable, Sequence

import numpy as np

from .errors import AlphaOutOfRange, BudgetExceeded, IndexOutOfRange, ParamOutOfRange
from .mdp import Mdp
from .risk import DiscreteDistribution, quantile_upper_many

MERGE_TOL = 1e-12
TRAJECTORY_BUDGET = 10**6
POLICY_BUDGET = 2**22

# a history is (s0, a0, s1, a1, ..., s_k)
HistoryPolicy = Callable[[tuple], int]


def merge_atoms(values, probs, tol: float = MERGE_TOL) -> DiscreteDistribution:
    """Sort atoms and merge neighbours closer than ``tol``."""
    values = np.asarray(values, dtype=float)
    probs = np.asarray(probs, dtype=float)
    order = np.argsort(values, kind="stable")
    values, probs = values[order], probs[order]
    new_group = np.empty(len(values), dtype=bool)
    new_group[0] = True
    new_group[1:] = np.diff(values) > tol
    starts = np.nonzero(new_group)[0]
    v = values[starts]
    p = np.add.reduceat(probs, starts)
    return DiscreteDistribution(v, p / p.sum())


def _check_state(mdp: Mdp, s: int, a: int | None = None):
    if not 0 <= s < mdp.n_states:
        raise IndexOutOfRange(f"state {s} outside [0, {mdp.n_states})")
    if a is not None and not 0 <= a < mdp.n_actions:
        raise IndexOutOfRange(f"action {a} outside [0, {mdp.n_actions})")


def policy_return_distribution(mdp: Mdp, pi: HistoryPolicy, s0: int, T: int, *,
                               budget: int = TRAJECTORY_BUDGET) -> DiscreteDistribution:
    """Distribution of ``sum_k gamma**k r_k`` over ``T`` steps under ``pi``."""
    if T < 1:
        raise ParamOutOfRange(f"T must be >= 1, got {T}")
    _check_state(mdp, s0)
    values, probs = [], []
    # depth-first over (history, discounted return so far, probability)
    stack = [((s0,), 0.0, 1.0)]
    while stack:
        hist, ret, prob = stack.pop()
        k = len(hist) // 2
        if k == T:
            values.append(ret)
            probs.append(prob)
            if len(values) > budget:
                raise BudgetExceeded(f"more than {budget} trajectories")
            continue
        s = hist[-1]
        a = int(pi(hist))
        _check_state(mdp, s, a)
        idx, p, r = mdp.transitions(s, a)
        disc = mdp.gamma ** k
        for sn, pn, rn in zip(idx, p, r):
            stack.append((hist + (a, int(sn)), ret + disc * float(rn), prob * float(pn)))
    return merge_atoms(values, probs)


def markov_policy(rules) -> HistoryPolicy:
    """Wrap a ``rules[k, s]`` action table as a history policy."""
    rules = np.asarray(rules)

    def pi(hist):
        return int(rules[len(hist) // 2, hist[-1]])

    return pi


def _check_alphas(alphas) -> np.ndarray:
    alphas = np.atleast_1d(np.asarray(alphas, dtype=float))
    if np.any(alphas <= 0) or np.any(alphas >= 1):
        raise AlphaOutOfRange("alphas must lie in (0, 1)")
    return alphas


def _var_many(d: DiscreteDistribution, alphas: np.ndarray) -> np.ndarray:
    return quantile_upper_many(d.values, d.probs, alphas)


def achievable_distributions(mdp: Mdp, T: int, s0: int, a0: int, *,
                             budget: int = POLICY_BUDGET) -> list[DiscreteDistribution]:
    """Return distributions of every deterministic history-dependent policy
    that starts with ``a0`` in ``s0``, one entry per distinct policy."""
    if T < 1:
        raise ParamOutOfRange(f"T must be >= 1, got {T}")
    _check_state(mdp, s0, a0)

    # count first so that an oversized problem fails before any enumeration
    counts = {}

    def count(s, k):
        # number of policies for k remaining steps from s
        if k == 0:
            return 1
        if (s, k) not in counts:
            counts[(s, k)] = min(sum(count_action(s, a, k) for a in range(mdp.n_actions)), budget + 1)
        return counts[(s, k)]

    def count_action(s, a, k):
        # saturates at budget + 1 so the counts stay small integers
        n = 1
        for sn in mdp.transitions(s, a)[0]:
            n = min(n * count(int(sn), k - 1), budget + 1)
        return n

    total = count_action(s0, a0, T)
    if total > budget:
        raise BudgetExceeded(f"more than {budget} policies to enumerate")

    memo: dict[tuple[int, int], list[DiscreteDistribution]] = {}

    def with_action(s, a, k):
        idx, p, r = mdp.transitions(s, a)
        branches = [options(int(sn), k - 1) for sn in idx]
        out = []
        for combo in itertools.product(*branches):
            vals = np.concatenate([r[i] + mdp.gamma * d.values for i, d in enumerate(combo)])
            prs = np.concatenate([p[i] * d.probs for i, d in enumerate(combo)])
            out.append(merge_atoms(vals, prs))
        return out

    def options(s, k):
        if k == 0:
            return [DiscreteDistribution(np.zeros(1), np.ones(1))]
        if (s, k) not in memo:
            memo[(s, k)] = [d for a in range(mdp.n_actions) for d in with_action(s, a, k)]
        return memo[(s, k)]

    return with_action(s0, a0, T)


def brute_force_qstar(mdp: Mdp, T: int, s0: int, a0: int, alphas: Sequence[float], *,
                      budget: int = POLICY_BUDGET) -> list[float]:
    """Best VaR over all deterministic history-dependent policies with first action ``a0``."""
    alphas = _check_alphas(alphas)
    best = np.full(len(alphas), -np.inf)
    for d in achievable_distributions(mdp, T, s0, a0, budget=budget):
        np.maximum(best, _var_many(d, alphas), out=best)
    return [float(v) for v in best]


def markov_return_distribution(mdp: Mdp, rules, s0: int, T: int) -> DiscreteDistribution:
    """Return distribution of a Markov policy by forward propagation."""
    rules = np.asarray(rules)
    layer = {(s0, 0.0): 1.0}
    for k in range(T):
        nxt: dict = {}
        disc = mdp.gamma ** k
        for (s, ret), pr in layer.items():
            idx, p, r = mdp.transitions(s, int(rules[k, s]))
            for sn, pn, rn in zip(idx, p, r):
                key = (int(sn), ret + disc * float(rn))
                nxt[key] = nxt.get(key, 0.0) + pr * float(pn)
        layer = nxt
    vals = [ret for (_, ret) in layer]
    return merge_atoms(vals, list(layer.values()))


def best_markov_var(mdp: Mdp, T: int, s0: int, a0: int, alphas: Sequence[float], *,
                    budget: int = POLICY_BUDGET) -> list[float]:
    """Best VaR over deterministic Markov policies ``rules[k, s]`` with ``rules[0, s0] = a0``."""
    alphas = _check_alphas(alphas)
    S, A = mdp.n_states, mdp.n_actions
    free = S * (T - 1)
    if A ** free > budget:
        raise BudgetExceeded(f"{A ** free} Markov policies exceed the budget of {budget}")
    best = np.full(len(alphas), -np.inf)
    rules = np.zeros((T, S), dtype=np.int64)
    rules[0, :] = a0
    for choice in itertools.product(range(A), repeat=free):
        rules[1:] = np.asarray(choice, dtype=np.int64).reshape(T - 1, S)
        d = markov_return_distribution(mdp, rules, s0, T)
        np.maximum(best, _var_many(d, alphas), out=best)
    return [float(v) for v in best]
