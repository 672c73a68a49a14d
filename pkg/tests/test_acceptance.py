"""Acceptance suite: one test per exit criterion, tolerances pinned.

Each test prints a single PASS line on success (run pytest with -s to see
them); failures carry the measured values. The heavy comparative studies
(criteria 6-9) run real experiments and dominate the suite's runtime;
everything is seeded and deterministic, so a green run is reproducible
bit for bit.
"""

import time

import numpy as np
import pytest

from tabql import qnet
from tabql.config import load_config
from tabql.engine import GateConfig, RefitConfig, RunState, refit_gate, switch_gate, window_quantile
from tabql.envs import two_state_env
from tabql.harness import (
    cross_seed_generalization,
    final_means,
    optimal_greedy_return,
    run_experiment,
    run_seed,
    sweep,
)
from tabql.oracle import (
    bellman_apply,
    error_decompose,
    error_recursion_bound,
    random_mdp,
    value_iteration,
)
from tabql.regressors import KnnRegressor
from tabql.replay import ReplayBuffer, build_context, make_transition

BOUND_SLACK = 1e-9


def _report(name: str, detail: str, started: float) -> None:
    print(f"\nACCEPT {name}: PASS ({detail}; {time.time() - started:.1f}s)")


def _rng(seed):
    return np.random.default_rng(np.random.PCG64(np.random.SeedSequence(seed)))


def test_01_operator_suite():
    started = time.time()
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
            violation = lhs - mdp.gamma * np.max(np.abs(q1 - q2))
            worst = max(worst, float(violation))
        q_star = value_iteration(mdp, tol=1e-10)
        residual = float(np.max(np.abs(bellman_apply(q_star, mdp) - q_star)))
        assert residual <= 1e-10
    assert worst <= 1e-12
    assert time.time() - started < 10.0
    _report("1 operator suite", f"200 pairs, max violation {worst:.2e}", started)


def test_02_decomposition_identity():
    started = time.time()
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
        worst = max(worst, float(np.max(np.abs(sum(terms) - (q_next - q_star)))))
    assert worst <= 1e-12
    assert time.time() - started < 10.0
    _report("2 decomposition identity", f"100 triples, max gap {worst:.2e}", started)


def test_03_error_bound_on_trace():
    started = time.time()
    cfg = load_config(overrides={
        "env": "twostate", "algo": "tabql", "seeds": "0", "ledger": "true",
        "gamma": "0.9", "output": "results/accept_twostate.csv",
    })
    result = run_seed(cfg, 0)
    led = result.ledger
    assert led is not None and len(led) >= 500
    violations = sum(1 for e, b in zip(led.sup_error, led.bound_rhs)
                     if e > b + BOUND_SLACK)
    assert violations == 0
    t = len(led)
    closed = error_recursion_bound(t, led.initial_err, led.eps_icl, led.eps_stat, cfg.gamma)
    assert abs(closed - led.bound_rhs[-1]) <= 1e-8 * max(1.0, closed)
    assert time.time() - started < 30.0
    _report("3 error bound on trace",
            f"{t} steps, 0 violations, teacher bias {led.eps_label:.3f}", started)


def test_04_gradient_check():
    started = time.time()
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
    assert worst < 1e-4
    # negative control: corrupt the analytic gradient, re-run the comparison
    params = qnet.init_params(4, [6], 3, rng)
    target = params.copy()
    batch = (rng.normal(size=(4, 4)), rng.integers(0, 3, size=4),
             rng.normal(size=4), rng.normal(size=(4, 4)), np.zeros(4))
    gW, _ = qnet.td_gradients(params, target, batch, 0.9)
    h = 1e-5
    W = params.weights[0]
    orig = W[0, 0]
    W[0, 0] = orig + h
    lp = qnet.td_loss(params, target, batch, 0.9)
    W[0, 0] = orig - h
    lm = qnet.td_loss(params, target, batch, 0.9)
    W[0, 0] = orig
    fd = (lp - lm) / (2 * h)
    corrupted = -gW[0][0, 0]
    assert abs(fd) > 1e-8
    assert abs(corrupted - fd) / max(abs(corrupted), abs(fd)) > 1e-2
    assert time.time() - started < 30.0
    _report("4 gradient check", f"20 configs, max rel err {worst:.2e}, control flagged", started)


def test_05_gate_unit_suite():
    started = time.time()
    window = [10.0] * 20 + [0.0] * 10
    rs = RunState(window_W=30)
    for r in window:
        rs.push_return(r)
    assert window_quantile(rs.return_window, 0.5) == pytest.approx(5.0)
    gate = GateConfig(T0=0, window_W=30, G_min=20, quantile_q=0.5,
                      theta_floor=0.0, delta_margin=1.0, adaptive=True)
    assert switch_gate(rs, gate) is True
    assert switch_gate(rs, GateConfig(T0=0, theta_floor=10.0, adaptive=True)) is False
    short = RunState(window_W=30)
    for r in window[:29]:
        short.push_return(r)
    assert switch_gate(short, gate) is False
    # failure-floor example from the sparse-reward family: returns at -200
    floor_gate = GateConfig(T0=0, window_W=30, G_min=20, quantile_q=0.75,
                            theta_floor=-200.0, delta_margin=1.0, adaptive=True)
    stuck = RunState(window_W=30)
    for _ in range(30):
        stuck.push_return(-200.0)
    assert switch_gate(stuck, floor_gate) is False  # theta at the floor never clears it

    refit = RefitConfig(mode="adaptive", rho_stale=0.25, e_min=1)
    assert refit_gate(RunState(t=1250, t_last=1000, episode=5, e_last=4), 1000, refit) is True
    assert refit_gate(RunState(t=1249, t_last=1000, episode=5, e_last=4), 1000, refit) is False
    assert refit_gate(RunState(t=5000, t_last=1000, episode=4, e_last=4), 1000, refit) is False
    assert time.time() - started < 1.0
    _report("5 gate unit suite", "all boundary cases", started)


@pytest.mark.slow
def test_06_comparative_study(tmp_path):
    started = time.time()
    seeds = "0,1,2,3,4"
    base = {"env": "cliffwalking", "gamma": "0.99", "seeds": seeds}
    tab_cfg = load_config(overrides={**base, "algo": "tabql",
                                     "output": str(tmp_path / "cliff_tabql.csv")})
    tab_results = run_experiment(tab_cfg, quiet=True)
    dqn_cfg = load_config(overrides={**base, "algo": "dqn",
                                     "output": str(tmp_path / "cliff_dqn.csv")})
    dqn_results = run_experiment(dqn_cfg, quiet=True)
    optimal = optimal_greedy_return(tab_cfg)
    assert optimal == -13.0
    tab_means = final_means(tab_cfg, tab_results)
    dqn_means = final_means(dqn_cfg, dqn_results)
    overall = float(np.mean(list(tab_means.values())))
    assert overall >= -20.0
    wins = sum(tab_means[s] >= dqn_means[s] for s in tab_cfg.seeds)
    assert wins >= 4
    assert time.time() - started < 300.0
    _report("6 comparative study",
            f"tabql mean {overall:.2f} (optimal {optimal}), wins {wins}/5", started)


@pytest.mark.slow
def test_07_switch_threshold(tmp_path):
    started = time.time()
    cfg = load_config(overrides={
        "env": "frozenlake4", "algo": "tabql", "seeds": "0,1,2,3,4",
        "output": str(tmp_path / "lake.csv"),
    })
    results = sweep(cfg, "t0", [100, 5000, 30000], quiet=True)
    arm_mean = {
        v: float(np.mean(list(final_means(cfg, results[v]).values())))
        for v in (100, 5000, 30000)
    }
    # frozenlake returns are already normalized to [0, 1]
    assert arm_mean[100] < arm_mean[5000]
    assert arm_mean[100] < arm_mean[30000]
    assert abs(arm_mean[5000] - arm_mean[30000]) <= 0.1
    assert time.time() - started < 600.0
    _report("7 switch threshold",
            f"arms {arm_mean[100]:.3f} / {arm_mean[5000]:.3f} / {arm_mean[30000]:.3f}",
            started)


@pytest.mark.slow
def test_08_context_size_saturation(tmp_path):
    started = time.time()
    cfg = load_config(overrides={
        "env": "cliffwalking", "algo": "tabql", "seeds": "0,1,2,3,4",
        "output": str(tmp_path / "cliffk.csv"),
    })
    results = sweep(cfg, "context_k", [200, 1000, 2000], quiet=True)
    arm_mean = {
        v: float(np.mean(list(final_means(cfg, results[v]).values())))
        for v in (200, 1000, 2000)
    }
    for v, m in arm_mean.items():
        assert m >= -25.0, f"K={v} mean {m}"
    first_gain = arm_mean[1000] - arm_mean[200]
    second_gain = arm_mean[2000] - arm_mean[1000]
    assert second_gain <= first_gain + 1e-9
    assert time.time() - started < 600.0
    _report("8 context-size saturation",
            f"means {arm_mean[200]:.2f} / {arm_mean[1000]:.2f} / {arm_mean[2000]:.2f}",
            started)


@pytest.mark.slow
def test_09_generalization_trend(tmp_path):
    started = time.time()
    cfg = load_config(overrides={"env": "taxi", "output": str(tmp_path / "gen.csv")})
    rows = cross_seed_generalization(
        cfg, n_train_conditions=50, context_counts=(5, 40),
        n_test_conditions=5, repetitions=5, train_steps=15000, seed=0,
    )
    mean_small = float(np.mean([r["mean_return"] for r in rows if r["n_context"] == 5]))
    mean_large = float(np.mean([r["mean_return"] for r in rows if r["n_context"] == 40]))
    assert mean_large >= mean_small
    assert time.time() - started < 1200.0
    _report("9 generalization trend",
            f"held-out mean {mean_small:.2f} @5 -> {mean_large:.2f} @40", started)


def test_10_determinism(tmp_path):
    started = time.time()
    overrides = {
        "env": "twostate", "algo": "tabql", "seeds": "0,1", "t0": "200",
        "total_steps": "900", "output": str(tmp_path / "det_a.csv"),
    }
    cfg_a = load_config(overrides=overrides)
    run_experiment(cfg_a, quiet=True)
    cfg_b = load_config(overrides={**overrides, "output": str(tmp_path / "det_b.csv")})
    run_experiment(cfg_b, quiet=True)
    from pathlib import Path as _P

    a = _P(cfg_a.output_path).read_bytes()
    b = _P(cfg_b.output_path).read_bytes()
    assert a == b
    _report("10 determinism", f"{len(a)} CSV bytes identical", started)
