"""Surrogate regressor contracts: interpolation, invariances, oracle lookups."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tabql.envs import make_env, two_state_env
from tabql.features import state_features
from tabql.oracle import value_iteration
from tabql.regressors import (
    ExactTableRegressor,
    KernelRegressor,
    KnnRegressor,
    RegressorKind,
    greedy_action,
    make_regressor,
    table_decoder,
)
from tabql.replay import ArrayContext, ReplayBuffer, build_context, make_transition


def _context_from_arrays(features, labels):
    return ArrayContext(np.asarray(features, dtype=float), np.asarray(labels, dtype=float))


def test_exact_match_returns_that_label():
    ctx = _context_from_arrays([[0.0, 0.0], [1.0, 1.0], [2.0, 0.0]], [5.0, 7.0, 9.0])
    for k in (1, 2, 3):
        knn = KnnRegressor(k)
        assert knn.predict(ctx, np.array([[1.0, 1.0]]))[0] == pytest.approx(7.0)


def test_constant_labels_predict_constant():
    rng = np.random.default_rng(0)
    ctx = _context_from_arrays(rng.normal(size=(20, 3)), np.full(20, 4.25))
    queries = rng.normal(size=(7, 3))
    assert np.allclose(KnnRegressor(5).predict(ctx, queries), 4.25)
    assert np.allclose(KernelRegressor(0.7).predict(ctx, queries), 4.25)


def test_equidistant_pair_averages():
    # two points at standardized distance 1 on each side of the query
    ctx = _context_from_arrays([[-1.0], [1.0]], [2.0, 4.0])
    pred = KnnRegressor(2).predict(ctx, np.array([[0.0]]))[0]
    assert pred == pytest.approx(3.0, abs=1e-12)


def test_zero_distance_ties_average_only_those():
    ctx = _context_from_arrays([[0.0], [0.0], [5.0]], [1.0, 3.0, 100.0])
    pred = KnnRegressor(3).predict(ctx, np.array([[0.0]]))[0]
    assert pred == pytest.approx(2.0)


def test_empty_context_rejected():
    knn = KnnRegressor(2)
    empty = _context_from_arrays(np.zeros((0, 2)), np.zeros(0))
    with pytest.raises(ValueError):
        knn.predict(empty, np.zeros((1, 2)))


def test_dimension_mismatch_rejected():
    ctx = _context_from_arrays([[0.0, 1.0]], [1.0])
    with pytest.raises(ValueError):
        KnnRegressor(1).predict(ctx, np.zeros((1, 3)))


def test_predictions_bit_identical_and_stateless():
    rng = np.random.default_rng(1)
    ctx = _context_from_arrays(rng.normal(size=(30, 4)), rng.normal(size=30))
    queries = rng.normal(size=(10, 4))
    for reg in (KnnRegressor(4), KernelRegressor(1.3)):
        a = reg.predict(ctx, queries)
        b = reg.predict(ctx, queries)
        assert a.tobytes() == b.tobytes()


@given(st.integers(min_value=1, max_value=12), st.integers(min_value=0, max_value=10**6))
@settings(max_examples=30, deadline=None)
def test_range_preservation(k, seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 25))
    ctx = _context_from_arrays(rng.normal(size=(n, 3)), rng.normal(size=n))
    labels = ctx.labels()
    queries = rng.normal(size=(5, 3))
    for reg in (KnnRegressor(k), KernelRegressor(float(rng.uniform(0.2, 3.0)))):
        preds = reg.predict(ctx, queries)
        assert np.all(preds >= labels.min() - 1e-12)
        assert np.all(preds <= labels.max() + 1e-12)


@given(st.integers(min_value=0, max_value=10**6))
@settings(max_examples=25, deadline=None)
def test_permutation_invariance_via_context_rows(seed):
    """Transition-order shuffles leave canonical-order predictions unchanged."""
    rng = np.random.default_rng(seed)
    env = make_env("frozenlake4", 1)
    trs = []
    state = env.reset()
    for t in range(1, 21):
        a = int(rng.integers(4))
        nxt, r, done = env.step(state, a)
        trs.append(make_transition(env, state, a, r, nxt,
                                   rng.normal(size=4), t, 0, done and env.is_terminal(nxt)))
        state = env.reset() if done else nxt
    buf1 = ReplayBuffer(50)
    for tr in trs:
        buf1.push(tr)
    ctx1 = build_context(buf1, 20)
    # rebuild from a shuffled copy: the context sorts sources by timestep
    shuffled = list(trs)
    rng.shuffle(shuffled)
    from tabql.replay import context_from_transitions

    ctx2 = context_from_transitions(shuffled)
    queries = rng.normal(size=(6, ctx1.feature_matrix().shape[1]))
    for reg in (KnnRegressor(3), KernelRegressor(0.9)):
        assert reg.predict(ctx1, queries).tobytes() == reg.predict(ctx2, queries).tobytes()


def test_exact_table_regressor_and_greedy_action():
    env = two_state_env(0)
    mdp = env.enumerate_model(0.9)
    q_star = value_iteration(mdp, tol=1e-10)
    reg = ExactTableRegressor(q_star, table_decoder(env))
    ctx = _context_from_arrays([[0.0, 0.0, 0.0]], [0.0])
    state = env.state_from_index(0)
    a = greedy_action(reg, ctx, state, env.n_actions,
                      lambda s, act: state_features(env, s)[:1] + (float(act),) + state_features(env, s)[1:])
    assert a == int(np.argmax(q_star[0]))


def test_greedy_action_tie_breaks_low_index():
    ctx = _context_from_arrays([[0.0, 0.0]], [1.0])
    reg = KernelRegressor(1.0)  # constant labels: every action ties
    env = two_state_env(0)
    state = env.state_from_index(0)
    a = greedy_action(reg, ctx, state, 2, lambda s, act: (0.0, float(act)))
    assert a == 0


def test_greedy_action_separated_clusters():
    """Labels dominating for one action make it the argmax."""
    rows, labels = [], []
    for t in range(10):
        rows.append((float(t % 3), 0.0, float(t)))
        labels.append(10.0)
        rows.append((float(t % 3), 1.0, float(t)))
        labels.append(-10.0)
    ctx = _context_from_arrays(rows, labels)
    env = two_state_env(0)
    state = env.state_from_index(1)
    a = greedy_action(KnnRegressor(4), ctx, state, 2,
                      lambda s, act: (float(s.discrete_index), float(act), 0.0))
    assert a == 0


def test_regressor_kind_validation_and_factory():
    with pytest.raises(ValueError):
        RegressorKind(kind="forest")
    with pytest.raises(ValueError):
        RegressorKind(knn_k=0)
    with pytest.raises(ValueError):
        RegressorKind(kernel_bandwidth=0.0)
    assert isinstance(make_regressor(RegressorKind(kind="knn")), KnnRegressor)
    assert isinstance(make_regressor(RegressorKind(kind="kernel")), KernelRegressor)
    with pytest.raises(ValueError):
        make_regressor(RegressorKind(kind="exact_table"))
