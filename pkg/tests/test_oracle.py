"""Operator properties, decomposition identity, and closed-form bounds."""

import math

import numpy as np
import pytest

from tabql.envs import enumerate_model, make_env, two_state_env
from tabql.oracle import (
    asymptotic_suboptimality,
    bellman_apply,
    empirical_bellman_apply,
    error_decompose,
    error_recursion_bound,
    predict_all,
    random_mdp,
    raw_reward_model,
    sample_complexity,
    stat_error_bound,
    tabular_q_update,
    value_iteration,
)
from tabql.regressors import ExactTableRegressor, KnnRegressor, table_decoder
from tabql.replay import ReplayBuffer, build_context, make_transition


def _rng(seed=0):
    return np.random.default_rng(seed)


def _single_state_mdp(r=1.0, gamma=0.5):
    from tabql.envs import MdpSpec

    return MdpSpec(1, 1, [[[(0, 1.0)]]], np.array([[r]]), np.array([[r]]),
                   frozenset(), gamma)


def test_bellman_gamma_zero_returns_rewards():
    mdp = random_mdp(_rng(1), 4, 2, 0.9)
    Q = _rng(2).normal(size=(4, 2))
    assert np.allclose(bellman_apply(Q, mdp, gamma=0.0), mdp.reward)


def test_bellman_single_state_geometric_fixed_point():
    mdp = _single_state_mdp(r=1.0, gamma=0.5)
    assert bellman_apply(np.zeros((1, 1)), mdp)[0, 0] == pytest.approx(1.0)
    q_star = value_iteration(mdp, tol=1e-13)
    assert q_star[0, 0] == pytest.approx(2.0, abs=1e-10)  # 1/(1-gamma)


def test_bellman_matches_brute_force_double_loop():
    rng = _rng(3)
    mdp = random_mdp(rng, 5, 3, 0.85)
    Q = rng.normal(size=(5, 3))
    out = bellman_apply(Q, mdp)
    # independent reimplementation
    ref = np.zeros_like(Q)
    for s in range(5):
        for a in range(3):
            acc = 0.0
            for ns, p in mdp.transition[s][a]:
                best = max(Q[ns, aa] for aa in range(3))
                acc += p * best
            ref[s, a] = mdp.reward[s, a] + 0.85 * acc
    assert np.max(np.abs(out - ref)) <= 1e-12


def test_contraction_on_random_pairs():
    rng = _rng(4)
    for _ in range(20):
        mdp = random_mdp(rng, int(rng.integers(2, 7)), int(rng.integers(2, 4)),
                         float(rng.uniform(0.5, 0.97)))
        for _ in range(10):
            q1 = rng.uniform(-4, 4, size=(mdp.n_states, mdp.n_actions))
            q2 = rng.uniform(-4, 4, size=(mdp.n_states, mdp.n_actions))
            lhs = np.max(np.abs(bellman_apply(q1, mdp) - bellman_apply(q2, mdp)))
            assert lhs <= mdp.gamma * np.max(np.abs(q1 - q2)) + 1e-12


def test_value_iteration_residual_contract():
    mdp = random_mdp(_rng(5), 6, 3, 0.9)
    q = value_iteration(mdp, tol=1e-9)
    assert np.max(np.abs(bellman_apply(q, mdp) - q)) <= 1e-9


def test_value_iteration_frozenlake_shortest_path():
    mdp = enumerate_model("frozenlake4", 0.99)
    q_star = value_iteration(mdp, tol=1e-12)
    # greedy rollout reaches the goal; start value is gamma^(path_length - 1)
    env = make_env("frozenlake4", 0)
    state = env.reset()
    steps = 0
    done = False
    while not done:
        state, r, done = env.step(state, int(np.argmax(q_star[state.discrete_index])))
        steps += 1
    assert r == 1.0
    assert np.max(q_star[0]) == pytest.approx(0.99 ** (steps - 1), abs=1e-9)
    assert steps == 6


def test_value_iteration_terminal_only():
    from tabql.envs import MdpSpec

    transition = [[[(1, 1.0)]], [[(1, 1.0)]]]
    reward = np.array([[0.7], [0.0]])
    mdp = MdpSpec(2, 1, transition, reward, reward.copy(), frozenset([1]), 0.9)
    q = value_iteration(mdp, tol=1e-13)
    assert q[0, 0] == pytest.approx(0.7, abs=1e-10)


def test_gamma_one_rejected():
    mdp = enumerate_model("cliffwalking", 0.99)
    with pytest.raises(ValueError):
        value_iteration(mdp, gamma=1.0)


def test_tabular_update_cases():
    Q = np.zeros((2, 2))
    assert np.array_equal(tabular_q_update(Q, 0, 0, 1.0, 1, 0.0, 0.9), Q * 0 + np.array([[0, 0], [0, 0]]))
    out = tabular_q_update(Q, 0, 0, 1.0, 1, 1.0, 0.9)
    assert out[0, 0] == pytest.approx(1.0)
    Q2 = np.array([[2.0, 0.0], [2.0, 1.0]])
    out2 = tabular_q_update(Q2, 0, 0, 1.0, 1, 0.5, 0.9)
    assert out2[0, 0] == pytest.approx(0.5 * 2.0 + 0.5 * (1.0 + 0.9 * 2.0))
    assert out2[1, 0] == 2.0  # only the touched entry changes


def _covered_context(env, mdp, labels_from):
    buf = ReplayBuffer(1000)
    t = 0
    for s in range(mdp.n_states):
        if s in mdp.terminal:
            continue
        for a in range(mdp.n_actions):
            for ns, p in mdp.transition[s][a]:
                t += 1
                buf.push(make_transition(env, env.state_from_index(s), a,
                                         float(mdp.reward[s, a]), env.state_from_index(ns),
                                         labels_from[s], t, 0, False))
    return build_context(buf, t)


def test_empirical_bellman_fixed_point_at_oracle():
    """Full coverage + exact lookups: the empirical backup fixes the optimum."""
    env = make_env("frozenlake4", 0)
    mdp = env.enumerate_model(0.9)
    q_star = value_iteration(mdp, tol=1e-13)
    ctx = _covered_context(env, mdp, q_star)
    reg = ExactTableRegressor(q_star, table_decoder(env))
    out = empirical_bellman_apply(q_star, ctx, reg, env, mdp.reward, 0.9)
    assert np.max(np.abs(out - q_star)) <= 1e-10


def test_empirical_bellman_gamma_zero_is_reward():
    env = two_state_env(0)
    mdp = env.enumerate_model(0.9)
    ctx = _covered_context(env, mdp, np.zeros((2, 2)))
    reg = KnnRegressor(2)
    out = empirical_bellman_apply(np.zeros((2, 2)), ctx, reg, env, mdp.reward, 0.0)
    assert np.allclose(out, mdp.reward)


def test_empirical_bellman_matches_hand_expansion():
    """Two-state chain with a partial context, expanded by hand."""
    env = two_state_env(0)
    mdp = env.enumerate_model(0.9)
    buf = ReplayBuffer(10)
    # two transitions at (0, a=1): next states 1 and 0
    buf.push(make_transition(env, env.state_from_index(0), 1, 0.3,
                             env.state_from_index(1), np.array([0.5, 1.5]), 1, 0, False))
    buf.push(make_transition(env, env.state_from_index(0), 1, 0.3,
                             env.state_from_index(0), np.array([0.5, 1.5]), 2, 0, False))
    ctx = build_context(buf, 10)
    q_table = np.array([[1.0, 2.0], [3.0, 1.0]])
    reg = ExactTableRegressor(q_table, table_decoder(env))
    out = empirical_bellman_apply(q_table, ctx, reg, env, mdp.reward, 0.9)
    # greedy actions under q_table: state 0 -> 1, state 1 -> 0
    expected_01 = mdp.reward[0, 1] + 0.9 * (0.5 * q_table[1, 0] + 0.5 * q_table[0, 1])
    assert out[0, 1] == pytest.approx(expected_01, abs=1e-12)


def test_error_decomposition_zero_at_fixed_point():
    env = make_env("frozenlake4", 0)
    mdp = env.enumerate_model(0.9)
    q_star = value_iteration(mdp, tol=1e-13)
    ctx = _covered_context(env, mdp, q_star)
    reg = ExactTableRegressor(q_star, table_decoder(env))
    terms = error_decompose(q_star, q_star, q_star, ctx, reg, env, mdp, 0.9)
    for term in terms:
        assert np.max(np.abs(term)) <= 1e-10


def test_error_decomposition_identity_random():
    rng = _rng(7)
    env = two_state_env(1)
    mdp = env.enumerate_model(0.9)
    q_star = value_iteration(mdp, tol=1e-13)
    buf = ReplayBuffer(200)
    state = env.reset()
    for t in range(1, 120):
        a = int(rng.integers(2))
        nxt, r, done = env.step(state, a)
        buf.push(make_transition(env, state, a, r, nxt, rng.normal(size=2), t, 0, False))
        state = env.reset() if done else nxt
    knn = KnnRegressor(3)
    for _ in range(100):
        ctx = build_context(buf, int(rng.integers(5, 100)))
        q_t = rng.uniform(-3, 9, size=(2, 2))
        q_next = rng.uniform(-3, 9, size=(2, 2))
        terms = error_decompose(q_t, q_next, q_star, ctx, knn, env, mdp, 0.9)
        assert np.max(np.abs(sum(terms) - (q_next - q_star))) <= 1e-12


def test_recursion_bound_edge_cases():
    assert error_recursion_bound(0, 3.5, [], [], 0.9) == pytest.approx(3.5)
    # one step at gamma=0: only the tau = t-1 term survives with weight 1
    assert error_recursion_bound(1, 5.0, [0.2], [0.3], 0.0) == pytest.approx(0.5)
    # constant errors approach the geometric limit
    n = 4000
    val = error_recursion_bound(n, 1.0, [0.1] * n, [0.05] * n, 0.9)
    assert val == pytest.approx(0.15 / 0.1, rel=1e-6)


def test_stat_error_bound_values():
    v = stat_error_bound(0.9, 16, 4, 0.05, 100, 0.0)
    assert v == pytest.approx(9 * math.sqrt(2 * math.log(1280) / 100), abs=1e-12)
    assert v == pytest.approx(3.404, abs=1e-3)
    assert stat_error_bound(0.9, 16, 4, 0.05, 10**14, 0.3) == pytest.approx(0.3, abs=1e-4)
    big, small = stat_error_bound(0.9, 16, 4, 0.05, 10, 0.0), stat_error_bound(0.9, 16, 4, 0.05, 1000, 0.0)
    assert big > small
    with pytest.raises(ValueError):
        stat_error_bound(0.9, 16, 4, 0.05, 0, 0.0)
    with pytest.raises(ValueError):
        stat_error_bound(0.9, 16, 4, 1.5, 10, 0.0)


def test_sample_complexity_structure():
    n1 = sample_complexity(0.9, 0.5, 48, 4, 0.05, c_visit=1.0)
    n2 = sample_complexity(0.9, 0.5, 48, 4, 0.05, c_visit=2.0)
    horizon = math.ceil(math.log(3 / (0.1 * 0.5)) / math.log(1 / 0.9))
    assert n2 - horizon == pytest.approx(2 * (n1 - horizon), rel=1e-12)
    # monotone: looser accuracy targets need fewer interactions
    assert sample_complexity(0.9, 1.0, 48, 4, 0.05) < n1
    assert sample_complexity(0.9, 2.0, 48, 4, 0.05) < sample_complexity(0.9, 1.0, 48, 4, 0.05)
    with pytest.raises(ValueError):
        sample_complexity(1.0, 0.5, 48, 4, 0.05)


def test_asymptotic_suboptimality_limits():
    assert asymptotic_suboptimality(0.0, 0.0, 0.9, 16, 4, 0.05, 10**18) == pytest.approx(0.0, abs=1e-5)
    bias = asymptotic_suboptimality(0.0, 0.25, 0.9, 16, 4, 0.05, 10**18)
    assert bias == pytest.approx(2 * 0.9 * 0.25 / 0.01, abs=1e-4)
    v = asymptotic_suboptimality(0.02, 0.03, 0.9, 16, 4, 0.05, 100)
    expect = 2 * 0.9 * 0.05 / (0.1**2) + 2 * 0.9**2 / (0.1**3) * math.sqrt(2 * math.log(64 / 0.05) / 100)
    assert v == pytest.approx(expect, rel=1e-12)


def test_predict_all_shape_and_exact_lookup():
    env = two_state_env(0)
    mdp = env.enumerate_model(0.9)
    q = value_iteration(mdp, tol=1e-10)
    ctx = _covered_context(env, mdp, q)
    reg = ExactTableRegressor(q, table_decoder(env))
    table = predict_all(ctx, reg, env, 2, 2)
    assert np.allclose(table, q)


def test_raw_reward_model_swaps_scale():
    mdp = enumerate_model("cliffwalking", 0.99)
    raw = raw_reward_model(mdp)
    assert raw.reward[36, 1] == pytest.approx(-100.0)
    assert mdp.reward[36, 1] == pytest.approx(0.0)  # -100 normalizes to 0
