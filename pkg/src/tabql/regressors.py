"""Frozen in-context regressors: the pluggable value-inference backends.

All backends share one contract: ``predict(context, queries)`` is a pure
function of its inputs (no internal state is fitted or mutated), so two
identical calls return bit-identical results. The built-in surrogates are
local regressors over z-scored features; ``exact_table`` looks answers up
in a provided value table and is meant for tests and oracles; ``bridge``
forwards to an external model server over the wire protocol.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .bridge_client import BridgeClient
from .features import FeatureRow
from .replay import Context


@dataclass
class RegressorKind:
    """Declarative regressor choice, as it appears in experiment configs."""

    kind: str = "knn"
    knn_k: int = 8
    kernel_bandwidth: float = 1.0
    bridge_endpoint: str = ""

    def __post_init__(self):
        if self.kind not in ("knn", "kernel", "bridge", "exact_table"):
            raise ValueError(f"unknown regressor kind {self.kind!r}")
        if self.knn_k < 1:
            raise ValueError("knn_k must be >= 1")
        if self.kernel_bandwidth <= 0:
            raise ValueError("kernel_bandwidth must be > 0")


def _query_matrix(queries) -> np.ndarray:
    if isinstance(queries, np.ndarray):
        return np.asarray(queries, dtype=float)
    rows = []
    for q in queries:
        rows.append(q.features if isinstance(q, FeatureRow) else tuple(q))
    return np.array(rows, dtype=float)


def _check(context: Context, Q: np.ndarray) -> None:
    if len(context) == 0:
        raise ValueError("context is empty")
    if Q.shape[1] != context.feature_matrix().shape[1]:
        raise ValueError(
            f"query feature length {Q.shape[1]} does not match context "
            f"rows of length {context.feature_matrix().shape[1]}"
        )


def _zscored(context: Context, Q: np.ndarray):
    mean, std = context.standardization()
    Z = context.zscored_matrix() if hasattr(context, "zscored_matrix") else (
        (context.feature_matrix() - mean) / std
    )
    return Z, (Q - mean) / std


def _k_nearest(d: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k smallest distances, ties resolved by row order.

    Equivalent to a full (distance, row) lexsort truncated at k, but O(n):
    partition for the k smallest, then order every row tied with the k-th.
    """
    n = d.shape[0]
    if k >= n:
        cand = np.arange(n)
    else:
        kth_value = d[np.argpartition(d, k - 1)[:k]].max()
        cand = np.flatnonzero(d <= kth_value)
    return cand[np.lexsort((cand, d[cand]))][:k]


class KnnRegressor:
    """Inverse-distance-weighted mean of the k nearest labels.

    Zero-distance rows (exact feature matches) short-circuit the weighting:
    their labels are averaged and everything else is ignored, which removes
    the division singularity. Neighbor order is fixed by (distance, row) in
    canonical row order, so predictions are permutation invariant.
    """

    def __init__(self, k: int = 8):
        if k < 1:
            raise ValueError("k must be >= 1")
        self.k = k

    def predict(self, context: Context, queries) -> np.ndarray:
        Q = _query_matrix(queries)
        _check(context, Q)
        Z, Zq = _zscored(context, Q)
        labels = context.labels()
        k = min(self.k, Z.shape[0])
        out = np.empty(Q.shape[0])
        # chunk the query block so the (m, n, f) distance temporary stays small
        chunk = max(1, 4_000_000 // (Z.shape[0] * Z.shape[1] + 1))
        for start in range(0, Q.shape[0], chunk):
            block = Zq[start:start + chunk]
            diff = block[:, None, :] - Z[None, :, :]
            D = np.sqrt(np.einsum("mij,mij->mi", diff, diff))
            for i, d in enumerate(D):
                zero = d == 0.0
                if zero.any():
                    out[start + i] = labels[zero].mean()
                    continue
                order = _k_nearest(d, k)
                w = 1.0 / d[order]
                out[start + i] = float(w @ labels[order] / w.sum())
        return out


class KernelRegressor:
    """Gaussian-kernel weighted mean over every context label."""

    def __init__(self, bandwidth: float = 1.0):
        if bandwidth <= 0:
            raise ValueError("bandwidth must be > 0")
        self.bandwidth = bandwidth

    def predict(self, context: Context, queries) -> np.ndarray:
        Q = _query_matrix(queries)
        _check(context, Q)
        Z, Zq = _zscored(context, Q)
        labels = context.labels()
        out = np.empty(Q.shape[0])
        inv = 1.0 / (2.0 * self.bandwidth**2)
        for i, q in enumerate(Zq):
            d2 = np.sum((Z - q) ** 2, axis=1)
            # subtracting the min keeps the weights from underflowing to all-zero
            w = np.exp(-(d2 - d2.min()) * inv)
            out[i] = float(w @ labels / w.sum())
        return out


class ExactTableRegressor:
    """Test-only oracle: answers queries by exact lookup in a value table.

    ``decoder`` maps a feature row back to a (state, action) index pair;
    feature dimensions beyond the state components and action (timestep,
    initial tag) are ignored.
    """

    def __init__(self, q_table: np.ndarray, decoder: Callable[[np.ndarray], tuple]):
        self.q_table = np.asarray(q_table, dtype=float)
        self.decoder = decoder

    def predict(self, context: Context, queries) -> np.ndarray:
        Q = _query_matrix(queries)
        if len(context) == 0:
            raise ValueError("context is empty")
        out = np.empty(Q.shape[0])
        for i, row in enumerate(Q):
            s, a = self.decoder(row)
            out[i] = self.q_table[s, a]
        return out


class BridgeRegressor:
    """Forward queries to an external model server over the wire protocol.

    The session context is re-sent only when the context object changes,
    so repeated queries against one context cost one round trip each.
    """

    def __init__(self, endpoint: str, client: Optional[BridgeClient] = None):
        self.client = client if client is not None else BridgeClient(endpoint)
        self._sent_context: Optional[int] = None

    def predict(self, context: Context, queries) -> np.ndarray:
        Q = _query_matrix(queries)
        _check(context, Q)
        if self._sent_context != id(context):
            self.client.set_context(context.feature_matrix(), context.labels())
            self._sent_context = id(context)
        return self.client.query(Q)


def table_decoder(env, n_components: Optional[int] = None) -> Callable[[np.ndarray], tuple]:
    """Build an exact-table feature decoder for a discrete environment."""
    c = n_components
    if c is None:
        c = len(env.state_components(env.reset()))

    def decode(row: np.ndarray) -> tuple:
        return env.index_from_components(row[:c]), int(round(row[c]))

    return decode


def make_regressor(kind: RegressorKind, env=None, q_table=None):
    """Instantiate the configured regressor backend."""
    if kind.kind == "knn":
        return KnnRegressor(kind.knn_k)
    if kind.kind == "kernel":
        return KernelRegressor(kind.kernel_bandwidth)
    if kind.kind == "bridge":
        return BridgeRegressor(kind.bridge_endpoint)
    if kind.kind == "exact_table":
        if env is None or q_table is None:
            raise ValueError("exact_table needs an environment and a value table")
        return ExactTableRegressor(q_table, table_decoder(env))
    raise ValueError(f"unknown regressor kind {kind.kind!r}")


def predict(regressor, context: Context, queries) -> np.ndarray:
    """Functional form of the backend contract."""
    return regressor.predict(context, queries)


def greedy_action(regressor, context: Context, state, n_actions: int, encode) -> int:
    """Argmax action under the regressor, lowest index winning ties.

    ``encode(state, action)`` must produce the query feature tuple for one
    action; one query row is built per action.
    """
    rows = np.array([encode(state, a) for a in range(n_actions)], dtype=float)
    values = regressor.predict(context, rows)
    return int(np.argmax(values))
