"""Regression backends served by the bridge.

``EchoModel`` is the built-in test double: a 1-nearest-neighbor regressor
over per-column z-scored features, with zero-distance rows averaged and
ties at equal distance resolved toward the lowest row index. It is wire-
compatible and numerically identical to a k=1 inverse-distance regressor,
which makes cross-implementation equivalence directly testable.

The TabPFN / TabDPT backends load the real pretrained models when their
packages are installed. Features and labels are handed to each library
as-is (library-default preprocessing); predictions are passed back
unmodified.
"""

from __future__ import annotations

import numpy as np


class ModelError(Exception):
    """Backend failed to fit or predict."""


class EchoModel:
    name = "echo"
    info = "echo preprocessing=zscore-columns metric=euclidean k=1"

    def predict(self, context_x: np.ndarray, context_y: np.ndarray,
                queries: np.ndarray) -> np.ndarray:
        mean = context_x.mean(axis=0)
        std = context_x.std(axis=0)
        std[std == 0.0] = 1.0
        Z = (context_x - mean) / std
        Zq = (queries - mean) / std
        n = Z.shape[0]
        out = np.empty(queries.shape[0])
        for i, q in enumerate(Zq):
            diff = Z - q
            d = np.sqrt(np.einsum("ij,ij->i", diff, diff))
            zero = d == 0.0
            if zero.any():
                out[i] = context_y[zero].mean()
                continue
            best = np.lexsort((np.arange(n), d))[0]
            out[i] = context_y[best]
        return out


class _SupervisedAdapter:
    """Wrap fit/predict regressors (TabPFN, TabDPT) behind the bridge surface."""

    def __init__(self, name: str, regressor_factory):
        self.name = name
        self.info = f"{name} preprocessing=library-default"
        self._factory = regressor_factory

    def predict(self, context_x, context_y, queries):
        try:
            reg = self._factory()
            reg.fit(context_x, context_y)
            return np.asarray(reg.predict(queries), dtype=float).reshape(-1)
        except Exception as exc:  # pragma: no cover - depends on optional libs
            raise ModelError(str(exc)) from exc


def load_model(choice: str):
    if choice == "echo":
        return EchoModel()
    if choice == "tabpfn":
        try:
            from tabpfn import TabPFNRegressor
        except ImportError as exc:
            raise ModelError("tabpfn is not installed") from exc
        return _SupervisedAdapter("tabpfn", TabPFNRegressor)
    if choice == "tabdpt":
        try:
            from tabdpt import TabDPTRegressor
        except ImportError as exc:
            raise ModelError("tabdpt is not installed") from exc
        return _SupervisedAdapter("tabdpt", TabDPTRegressor)
    raise ModelError(f"unknown model {choice!r}")
