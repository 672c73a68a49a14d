"""Exact dynamic-programming oracles and executable error-bound formulas.

Everything here operates on dense (state, action) value tables over an
enumerated model, in the normalized [0, 1] reward scale. Alongside the
classic operators (Bellman backup, value iteration, single-entry tabular
update) it provides the context-induced empirical backup, the three-term
error decomposition, and closed-form error/sample bounds, all of which the
verification suite checks numerically against instrumented runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .envs import MdpSpec
from .features import state_features
from .replay import Context, empirical_next_dist, exact_match_count

MAX_VI_ITERATIONS = 10**6


def raw_reward_model(mdp: MdpSpec) -> MdpSpec:
    """Copy of the model with the raw (unnormalized) rewards in the reward slot."""
    return MdpSpec(mdp.n_states, mdp.n_actions, mdp.transition,
                   mdp.reward_raw.copy(), mdp.reward_raw.copy(), mdp.terminal, mdp.gamma)


def bellman_apply(Q: np.ndarray, mdp: MdpSpec, gamma: Optional[float] = None) -> np.ndarray:
    """One exact backup: (TQ)(s,a) = r(s,a) + gamma * E[max_a' Q(s',a')]."""
    g = mdp.gamma if gamma is None else gamma
    Q = np.asarray(Q, dtype=float)
    if Q.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError(f"table shape {Q.shape} does not match model")
    vmax = Q.max(axis=1)
    out = np.empty_like(Q)
    for s in range(mdp.n_states):
        for a in range(mdp.n_actions):
            out[s, a] = mdp.reward[s, a] + g * sum(p * vmax[ns] for ns, p in mdp.transition[s][a])
    return out


def value_iteration(mdp: MdpSpec, gamma: Optional[float] = None, tol: float = 1e-10) -> np.ndarray:
    """Iterate the backup until the residual ||TQ - Q||_inf drops below tol.

    The contraction property turns the residual into a true-error bound:
    stopping at residual tol*(1-gamma)/gamma guarantees ||Q - Q*|| <= tol.
    """
    if tol <= 0:
        raise ValueError("tol must be > 0")
    g = mdp.gamma if gamma is None else gamma
    if not (0.0 < g < 1.0):
        raise ValueError(f"gamma must lie strictly inside (0,1), got {g}")
    P = mdp.kernel_matrix()
    Q = np.zeros((mdp.n_states, mdp.n_actions))
    for _ in range(MAX_VI_ITERATIONS):
        TQ = mdp.reward + g * P @ Q.max(axis=1)
        if np.max(np.abs(TQ - Q)) <= tol:
            return TQ
        Q = TQ
    raise RuntimeError("value iteration did not converge within the iteration cap")


def tabular_q_update(Q: np.ndarray, s: int, a: int, r: float, s_next: int,
                     alpha: float, gamma: float) -> np.ndarray:
    """Single stochastic-approximation update of entry (s, a)."""
    if not (0.0 <= alpha <= 1.0):
        raise ValueError("alpha must lie in [0,1]")
    out = np.array(Q, dtype=float, copy=True)
    out[s, a] = (1.0 - alpha) * Q[s, a] + alpha * (r + gamma * np.max(Q[s_next]))
    return out


def greedy_actions(Q: np.ndarray) -> np.ndarray:
    """Argmax per state with the lowest action index winning ties."""
    return np.argmax(Q, axis=1)


def _next_value_queries(env, Q: np.ndarray, timestep: int):
    a_star = greedy_actions(Q)
    rows = np.array(
        [
            state_features(env, env.state_from_index(s, timestep)) for s in range(Q.shape[0])
        ],
        dtype=float,
    )
    c = len(env.state_components(env.state_from_index(0)))
    full = np.empty((Q.shape[0], rows.shape[1] + 1))
    full[:, :c] = rows[:, :c]
    full[:, c] = a_star
    full[:, c + 1:] = rows[:, c:]
    return full


def empirical_bellman_apply(
    Q: np.ndarray,
    context: Context,
    regressor,
    env,
    rewards: np.ndarray,
    gamma: float,
    m_min: int = 1,
    query_timestep: int = 0,
) -> np.ndarray:
    """Context-induced backup: empirical next-state law plus in-context values.

    For each pair, the true kernel is replaced by the context's empirical
    next-state distribution and the max-value term by the regressor's
    prediction at the greedy-under-Q action of each next state.
    """
    Q = np.asarray(Q, dtype=float)
    S, A = Q.shape
    queries = _next_value_queries(env, Q, query_timestep)
    next_vals = regressor.predict(context, queries)
    out = np.empty_like(Q)
    for s in range(S):
        st = env.state_from_index(s, query_timestep)
        if env.is_terminal(st):
            # terminal states keep the enumerated self-loop convention
            for a in range(A):
                out[s, a] = rewards[s, a] + gamma * next_vals[s]
            continue
        for a in range(A):
            dist = empirical_next_dist(context, env, st, a, m_min)
            exp_next = sum(w * next_vals[ns.discrete_index] for ns, w in dist)
            out[s, a] = rewards[s, a] + gamma * exp_next
    return out


def error_decompose(
    Q_t: np.ndarray,
    Q_next: np.ndarray,
    Q_star: np.ndarray,
    context: Context,
    regressor,
    env,
    mdp: MdpSpec,
    gamma: float,
    m_min: int = 1,
):
    """Split Q_next - Q_star into contraction, statistical, and inference terms.

    Returns (term_contraction, term_stat, term_icl); because the optimal
    table is the backup's fixed point, the three sum to Q_next - Q_star
    entrywise, exactly.
    """
    for tbl in (Q_t, Q_next, Q_star):
        if np.asarray(tbl).shape != (mdp.n_states, mdp.n_actions):
            raise ValueError("table dimensions do not match the model")
    TQ_t = bellman_apply(Q_t, mdp, gamma)
    TQ_star = bellman_apply(Q_star, mdp, gamma)
    That_Q_t = empirical_bellman_apply(Q_t, context, regressor, env, mdp.reward, gamma, m_min)
    return TQ_t - TQ_star, That_Q_t - TQ_t, Q_next - That_Q_t


def error_recursion_bound(
    t: int,
    initial_err: float,
    eps_icl_series,
    eps_stat_series,
    gamma: float,
) -> float:
    """Unrolled contraction bound on the value error after t inference steps.

    gamma^t * initial_err + sum_tau gamma^(t-1-tau) * (eps_icl + eps_stat),
    the form the recursion produces step by step, so an instrumented run
    with measured per-step errors must satisfy it at every step.
    """
    if len(eps_icl_series) < t or len(eps_stat_series) < t:
        raise ValueError("series shorter than t")
    total = gamma**t * initial_err
    for tau in range(t):
        total += gamma ** (t - 1 - tau) * (eps_icl_series[tau] + eps_stat_series[tau])
    return float(total)


def stat_error_bound(gamma: float, n_states: int, n_actions: int, delta: float,
                     m: int, eps_label: float) -> float:
    """High-probability bound on the empirical-kernel backup error.

    gamma/(1-gamma) * sqrt(2 log(|S||A|/delta) / m) + eps_label, valid on
    the normalized [0, 1] reward scale.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    if not (0.0 < delta < 1.0):
        raise ValueError("delta must lie in (0,1)")
    if not (0.0 < gamma < 1.0):
        raise ValueError("gamma must lie in (0,1)")
    return gamma / (1.0 - gamma) * math.sqrt(
        2.0 * math.log(n_states * n_actions / delta) / m
    ) + eps_label


def sample_complexity(gamma: float, epsilon: float, n_states: int, n_actions: int,
                      delta: float, c_visit: float = 1.0) -> float:
    """Interaction count sufficient for an epsilon-accurate value table.

    First term: per-query revisitation cost scaled by the visitation
    constant; second: the contraction horizon. Conditional on the model
    and teacher errors each being at most (1-gamma)*epsilon/3, which the
    caller must check separately.
    """
    if not (0.0 < gamma < 1.0):
        raise ValueError("gamma must lie in (0,1)")
    if epsilon <= 0:
        raise ValueError("epsilon must be > 0")
    if not (0.0 < delta < 1.0):
        raise ValueError("delta must lie in (0,1)")
    first = c_visit * 18.0 * gamma**2 / ((1.0 - gamma) ** 4 * epsilon**2) * math.log(
        n_states * n_actions / delta
    )
    horizon = max(0, math.ceil(math.log(3.0 / ((1.0 - gamma) * epsilon)) / math.log(1.0 / gamma)))
    total = first + horizon
    if not math.isfinite(total):
        return math.inf
    return total


def asymptotic_suboptimality(eps_icl: float, eps_label: float, gamma: float,
                             n_states: int, n_actions: int, delta: float,
                             m_min: int) -> float:
    """Limiting policy suboptimality: irreducible bias plus a vanishing residual.

    2*gamma*(eps_icl+eps_label)/(1-gamma)^2
    + 2*gamma^2/(1-gamma)^3 * sqrt(2 log(|S||A|/delta)/m_min).
    """
    if not (0.0 < gamma < 1.0):
        raise ValueError("gamma must lie in (0,1)")
    if not (0.0 < delta < 1.0):
        raise ValueError("delta must lie in (0,1)")
    if m_min < 1:
        raise ValueError("m_min must be >= 1")
    bias = 2.0 * gamma * (eps_icl + eps_label) / (1.0 - gamma) ** 2
    residual = 2.0 * gamma**2 / (1.0 - gamma) ** 3 * math.sqrt(
        2.0 * math.log(n_states * n_actions / delta) / m_min
    )
    total = bias + residual
    if not math.isfinite(total):
        return math.inf
    return total


def predict_all(context: Context, regressor, env, n_states: int, n_actions: int,
                timestep: int = 0) -> np.ndarray:
    """Regressor predictions for every (state, action) pair as a dense table."""
    base = np.array(
        [state_features(env, env.state_from_index(s, timestep)) for s in range(n_states)],
        dtype=float,
    )
    c = len(env.state_components(env.state_from_index(0)))
    rep = np.repeat(base, n_actions, axis=0)
    queries = np.empty((n_states * n_actions, base.shape[1] + 1))
    queries[:, :c] = rep[:, :c]
    queries[:, c] = np.tile(np.arange(n_actions, dtype=float), n_states)
    queries[:, c + 1:] = rep[:, c:]
    return regressor.predict(context, queries).reshape(n_states, n_actions)


def min_match_count(context: Context, env, n_states: int, n_actions: int,
                    m_min: int = 1) -> int:
    """Smallest per-pair revisitation count; nearest-neighbor fallback counts m_min."""
    best = None
    for s in range(n_states):
        st = env.state_from_index(s)
        for a in range(n_actions):
            m = exact_match_count(context, env, st, a)
            if m == 0:
                m = m_min
            best = m if best is None else min(best, m)
    return best if best is not None else m_min


@dataclass
class ErrorLedger:
    """Per-step measured error components of an instrumented inference run."""

    eps_label: float = 0.0
    initial_err: float = 0.0
    steps: List[int] = field(default_factory=list)        # global env step
    eps_icl: List[float] = field(default_factory=list)
    eps_stat: List[float] = field(default_factory=list)
    m_t: List[int] = field(default_factory=list)
    sup_error: List[float] = field(default_factory=list)  # ||Q_tfm_t - Q*||_inf
    bound_rhs: List[float] = field(default_factory=list)

    def record(self, step: int, eps_icl: float, eps_stat: float, m_t: int,
               sup_error: float, bound_rhs: float) -> None:
        for v in (eps_icl, eps_stat, sup_error, bound_rhs):
            if v < 0:
                raise ValueError("ledger entries must be nonnegative")
        self.steps.append(step)
        self.eps_icl.append(eps_icl)
        self.eps_stat.append(eps_stat)
        self.m_t.append(m_t)
        self.sup_error.append(sup_error)
        self.bound_rhs.append(bound_rhs)

    def __len__(self) -> int:
        return len(self.steps)


def random_mdp(rng, n_states: int = 4, n_actions: int = 2,
               gamma: float = 0.9) -> MdpSpec:
    """Random dense-kernel model with rewards already in [0, 1]."""
    transition = []
    raw = rng.uniform(0.0, 1.0, size=(n_states, n_actions))
    for s in range(n_states):
        row = []
        for a in range(n_actions):
            w = rng.uniform(0.1, 1.0, size=n_states)
            w /= w.sum()
            # renormalize exactly so the model invariant holds bit-for-bit
            w[-1] = 1.0 - w[:-1].sum()
            row.append([(ns, float(p)) for ns, p in enumerate(w)])
        transition.append(row)
    return MdpSpec(n_states, n_actions, transition, raw.copy(), raw.copy(),
                   frozenset(), gamma)


