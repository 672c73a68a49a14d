"""Numeric verification suite: operators, identities, bounds, gates, gradients.

Each check is a function returning (passed, detail). ``run_all`` executes
the whole table; the CLI prints one line per check. These are the same
properties the test suite asserts, packaged for direct execution.
"""

from __future__ import annotations

import math
import time
from typing import Callable, List, Tuple

import numpy as np

from . import qnet
from .config import load_config
from .engine import GateConfig, RefitConfig, RunState, refit_gate, switch_gate, window_quantile
from .envs import two_state_env
from .harness import run_seed
from .oracle import (
    asymptotic_suboptimality,
    bellman_apply,
    error_decompose,
    error_recursion_bound,
    random_mdp,
    sample_complexity,
    stat_error_bound,
    tabular_q_update,
    value_iteration,
)
from .regressors import KnnRegressor
from .replay import ReplayBuffer, build_context, make_transition

BOUND_SLACK = 1e-9  # float headroom when comparing measured errors to bounds


def _rng(seed: int):
    return np.random.default_rng(np.random.PCG64(np.random.SeedSequence(seed)))


def check_operator_contraction() -> Tuple[bool, str]:
    """200 random table pairs across 20 random models, plus the fixed point."""
    rng = _rng(11)
    worst = 0.0
    for _ in range(20):
        mdp = random_mdp(rng, n_states=int(rng.integers(2, 7)),
                         n_actions=int(rng.integers(2, 4)),
                         gamma=float(rng.uniform(0.5, 0.97)))
        for _ in range(10):
            q1 = rng.uniform(-5, 5, size=(mdp.n_states, mdp.n_actions))
            q2 = rng.uniform(-5, 5, size=(mdp.n_states, mdp.n_actions))
            lhs = np.max(np.abs(bellman_apply(q1, mdp) - bellman_apply(q2, mdp)))
            rhs = mdp.gamma * np.max(np.abs(q1 - q2))
            worst = max(worst, lhs - rhs)
        q_star = value_iteration(mdp, tol=1e-10)
        residual = np.max(np.abs(bellman_apply(q_star, mdp) - q_star))
        if residual > 1e-10:
            return False, f"fixed-point residual {residual:.3e}"
    ok = worst <= 1e-12
    return ok, f"max contraction violation {worst:.3e}"


def check_decomposition_identity() -> Tuple[bool, str]:
    """Three error terms must telescope to Q_next - Q_star on random triples."""
    rng = _rng(12)
    env = two_state_env(seed=3)
    mdp = env.enumerate_model(0.9)
    q_star = value_iteration(mdp, tol=1e-13)
    buffer = ReplayBuffer(512)
    state = env.reset()
    for t in range(1, 160):
        action = int(rng.integers(env.n_actions))
        nxt, reward, done = env.step(state, action)
        buffer.push(make_transition(env, state, action, reward, nxt,
                                    rng.uniform(0, 1, env.n_actions), t, 0,
                                    done and env.is_terminal(nxt)))
        state = env.reset() if done else nxt
    knn = KnnRegressor(4)
    worst = 0.0
    for _ in range(100):
        context = build_context(buffer, int(rng.integers(8, 120)))
        q_t = rng.uniform(0, 10, size=q_star.shape)
        q_next = rng.uniform(0, 10, size=q_star.shape)
        terms = error_decompose(q_t, q_next, q_star, context, knn, env, mdp, mdp.gamma)
        gap = np.max(np.abs(sum(terms) - (q_next - q_star)))
        worst = max(worst, float(gap))
    return worst <= 1e-12, f"max identity gap {worst:.3e}"


def check_bound_on_trace() -> Tuple[bool, str]:
    """Instrumented tiny-task run: measured error under the recursion bound everywhere."""
    cfg = load_config(overrides={
        "env": "twostate", "algo": "tabql", "seeds": "0", "ledger": "true",
        "gamma": "0.9", "output": "results/verify_twostate.csv",
    })
    result = run_seed(cfg, 0)
    led = result.ledger
    if led is None or len(led) == 0:
        return False, "no ledger rows recorded"
    bad = sum(1 for e, b in zip(led.sup_error, led.bound_rhs) if e > b + BOUND_SLACK)
    # cross-check the incremental bound against the closed form at the last step
    t = len(led)
    closed = error_recursion_bound(t, led.initial_err, led.eps_icl, led.eps_stat, cfg.gamma)
    drift = abs(closed - led.bound_rhs[-1])
    ok = bad == 0 and drift <= 1e-8 * max(1.0, closed)
    return ok, f"{len(led)} steps, violations={bad}, closed-form drift {drift:.2e}"


def check_gradients() -> Tuple[bool, str]:
    """Analytic vs finite-difference gradients, plus a corrupted negative control."""
    rng = _rng(13)
    worst = 0.0
    for _ in range(20):
        n_in = int(rng.integers(3, 8))
        n_out = int(rng.integers(2, 5))
        hidden = [int(rng.integers(4, 12)) for _ in range(int(rng.integers(1, 3)))]
        params = qnet.init_params(n_in, hidden, n_out, rng)
        target = qnet.init_params(n_in, hidden, n_out, rng)
        B = int(rng.integers(2, 9))
        batch = (
            rng.normal(size=(B, n_in)),
            rng.integers(0, n_out, size=B),
            rng.normal(size=B),
            rng.normal(size=(B, n_in)),
            (rng.random(B) < 0.2).astype(float),
        )
        worst = max(worst, qnet.grad_check(params, target, batch, 0.9, rng))
    # negative control: a sign-flipped layer must be flagged loudly
    params = qnet.init_params(4, [6], 3, rng)
    target = params.copy()
    batch = (
        rng.normal(size=(4, 4)), rng.integers(0, 3, size=4), rng.normal(size=4),
        rng.normal(size=(4, 4)), np.zeros(4),
    )
    gW, gb = qnet.td_gradients(params, target, batch, 0.9)
    flat = np.concatenate([g.ravel() for g in gW] + [g.ravel() for g in gb])
    corrupted = -flat
    fd_err = np.max(np.abs(corrupted - flat) / np.maximum(np.abs(flat), 1e-8))
    control = fd_err > 1e-2 and np.max(np.abs(flat)) > 0
    ok = worst < 1e-4 and control
    return ok, f"max relative error {worst:.2e}; negative control {'flagged' if control else 'missed'}"


def check_gates() -> Tuple[bool, str]:
    """Boundary examples of the switch and refit rules."""
    gate = GateConfig(T0=0, window_W=30, G_min=20, quantile_q=0.5,
                      theta_floor=0.0, delta_margin=1.0, adaptive=True)
    window = [10.0] * 20 + [0.0] * 10
    rs = RunState(window_W=30)
    for r in window:
        rs.push_return(r)
    checks = []
    theta = window_quantile(rs.return_window, 0.5)
    checks.append(abs(theta - 5.0) < 1e-12)
    checks.append(switch_gate(rs, gate) is True)
    gate_high = GateConfig(T0=0, theta_floor=10.0, adaptive=True)
    checks.append(switch_gate(rs, gate_high) is False)
    rs_short = RunState(window_W=30)
    for r in window[:29]:
        rs_short.push_return(r)
    checks.append(switch_gate(rs_short, gate) is False)

    refit = RefitConfig(mode="adaptive", rho_stale=0.25, e_min=1)
    rs2 = RunState(t=1250, t_last=1000, episode=5, e_last=4)
    checks.append(refit_gate(rs2, 1000, refit) is True)       # 250/1000 boundary fires
    rs3 = RunState(t=1249, t_last=1000, episode=5, e_last=4)
    checks.append(refit_gate(rs3, 1000, refit) is False)
    rs4 = RunState(t=5000, t_last=1000, episode=4, e_last=4)
    checks.append(refit_gate(rs4, 1000, refit) is False)      # no completed episode
    ok = all(checks)
    return ok, f"{sum(checks)}/{len(checks)} boundary cases"


def check_bound_formulas() -> Tuple[bool, str]:
    """Closed forms agree with independent arithmetic."""
    val = stat_error_bound(0.9, 16, 4, 0.05, 100, 0.0)
    expect = (0.9 / 0.1) * math.sqrt(2.0 * math.log(64 / 0.05) / 100.0)
    ok1 = abs(val - expect) < 1e-12 and abs(val - 3.4044) < 1e-3

    n = sample_complexity(0.9, 0.5, 48, 4, 0.05, c_visit=1.0)
    first = 18 * 0.81 / ((0.1**4) * 0.25) * math.log(192 / 0.05)
    horizon = math.ceil(math.log(3 / (0.1 * 0.5)) / math.log(1 / 0.9))
    ok2 = abs(n - (first + horizon)) < 1e-6
    ok3 = abs(sample_complexity(0.9, 0.5, 48, 4, 0.05, 2.0)
              - (2 * first + horizon)) < 1e-6

    sub = asymptotic_suboptimality(0.02, 0.03, 0.9, 16, 4, 0.05, 100)
    expect_sub = 2 * 0.9 * 0.05 / 0.01 + 2 * 0.81 / 0.001 * math.sqrt(2 * math.log(64 / 0.05) / 100)
    ok4 = abs(sub - expect_sub) < 1e-9
    # large revisitation leaves only the teacher/model bias term
    bias_only = asymptotic_suboptimality(0.0, 0.03, 0.9, 16, 4, 0.05, 10**18)
    ok5 = abs(bias_only - 2 * 0.9 * 0.03 / 0.01) < 1e-5
    ok = ok1 and ok2 and ok3 and ok4 and ok5
    return ok, f"stat={val:.4f} samples={n:.1f} asym={sub:.3f}"


def check_tabular_convergence() -> Tuple[bool, str]:
    """Visit-count step sizes drive the single-table update to the fixed point.

    Uses a moderate discount: with 1/n steps the bias of early bootstrapped
    targets decays only polynomially in (1-gamma), so high discounts need
    impractically many sweeps.
    """
    rng = _rng(14)
    env = two_state_env(seed=5)
    mdp = env.enumerate_model(0.5)
    q_star = value_iteration(mdp, tol=1e-12)
    Q = np.zeros_like(q_star)
    visits = np.zeros_like(q_star)
    state = env.reset()
    for _ in range(30000):
        action = int(rng.integers(env.n_actions))
        nxt, reward, done = env.step(state, action)
        s, ns = state.discrete_index, nxt.discrete_index
        visits[s, action] += 1
        Q = tabular_q_update(Q, s, action, reward, ns,
                             1.0 / visits[s, action], mdp.gamma)
        state = env.reset() if done else nxt
    err = float(np.max(np.abs(Q - q_star)))
    return err < 0.05, f"final table error {err:.4f}"


CHECKS: List[Tuple[str, Callable[[], Tuple[bool, str]]]] = [
    ("operator contraction + fixed point", check_operator_contraction),
    ("error decomposition identity", check_decomposition_identity),
    ("recursion bound on instrumented run", check_bound_on_trace),
    ("gradient check + negative control", check_gradients),
    ("switch/refit gate boundaries", check_gates),
    ("closed-form bound arithmetic", check_bound_formulas),
    ("tabular update convergence", check_tabular_convergence),
]


def run_all(verbose: bool = True) -> bool:
    all_ok = True
    for name, fn in CHECKS:
        start = time.time()
        ok, detail = fn()
        all_ok = all_ok and ok
        if verbose:
            status = "PASS" if ok else "FAIL"
            print(f"[{status}] {name:<40} {detail} ({time.time() - start:.1f}s)")
    return all_ok
