"""Warm-up Q-network: rectifier MLP with hand-written gradients, plain SGD.

The network maps a state encoding to one value per action. Updates
minimize the mean squared TD error against a separately held target
parameter set; ``grad_check`` validates the analytic gradients against
central finite differences.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

_MAGIC = b"TQNETV1\x00"


@dataclass
class SgdConfig:
    learning_rate: float = 0.01
    batch_size: int = 32
    target_sync_period: int = 500
    eps_start: float = 1.0
    eps_end: float = 0.01
    eps_decay_steps: int = 10000

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.eps_end > self.eps_start:
            raise ValueError("eps_end must be <= eps_start")
        if self.eps_decay_steps < 1:
            raise ValueError("eps_decay_steps must be >= 1")


class QNetParams:
    """Weights and biases of the value MLP; wholly finite, shape-consistent."""

    def __init__(self, weights: List[np.ndarray], biases: List[np.ndarray],
                 validate: bool = True):
        if validate:
            for W, b in zip(weights, biases):
                if W.shape[1] != b.shape[0]:
                    raise ValueError("bias shape does not match weight columns")
            for Wa, Wb in zip(weights, weights[1:]):
                if Wa.shape[1] != Wb.shape[0]:
                    raise ValueError("layer shapes are not chained")
            if not all(np.all(np.isfinite(W)) for W in weights + biases):
                raise ValueError("parameters must be finite")
        self.weights = weights
        self.biases = biases

    @property
    def n_inputs(self) -> int:
        return self.weights[0].shape[0]

    @property
    def n_outputs(self) -> int:
        return self.weights[-1].shape[1]

    def copy(self) -> "QNetParams":
        return QNetParams([W.copy() for W in self.weights], [b.copy() for b in self.biases])


def init_params(n_inputs: int, hidden: Sequence[int], n_outputs: int, rng) -> QNetParams:
    """Symmetric uniform fan-in initialization from the given stream."""
    sizes = [n_inputs, *hidden, n_outputs]
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes, sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return QNetParams(weights, biases)


def forward(params: QNetParams, x: np.ndarray) -> np.ndarray:
    """Value vector(s) for a state encoding; accepts a single row or a batch."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    h = x[None, :] if single else x
    if h.shape[1] != params.n_inputs:
        raise ValueError(f"expected {params.n_inputs} input features, got {h.shape[1]}")
    last = len(params.weights) - 1
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        h = h @ W + b
        if i != last:
            h = np.maximum(h, 0.0)
    return h[0] if single else h


def _forward_cached(params: QNetParams, X: np.ndarray):
    acts = [X]
    h = X
    last = len(params.weights) - 1
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ W + b
        h = np.maximum(z, 0.0) if i != last else z
        acts.append(h)
    return h, acts


def td_targets(target_params: QNetParams, batch, gamma: float) -> np.ndarray:
    X, actions, rewards, X_next, terminal = batch
    q_next = forward(target_params, X_next)
    boot = np.max(q_next, axis=1) * (1.0 - np.asarray(terminal, dtype=float))
    return np.asarray(rewards, dtype=float) + gamma * boot


def td_loss(params: QNetParams, target_params: QNetParams, batch, gamma: float) -> float:
    X, actions, _, _, _ = batch
    q = forward(params, X)[np.arange(len(actions)), actions]
    err = q - td_targets(target_params, batch, gamma)
    return float(np.mean(err * err))


def td_gradients(params: QNetParams, target_params: QNetParams, batch, gamma: float):
    """Analytic gradient of the mean squared TD error wrt every parameter."""
    X, actions, _, _, _ = batch
    B = len(actions)
    y = td_targets(target_params, batch, gamma)
    out, acts = _forward_cached(params, np.asarray(X, dtype=float))
    G = np.zeros_like(out)
    rows = np.arange(B)
    G[rows, actions] = 2.0 * (out[rows, actions] - y) / B
    grads_W, grads_b = [], []
    delta = G
    for i in range(len(params.weights) - 1, -1, -1):
        h_prev = acts[i]
        grads_W.append(h_prev.T @ delta)
        grads_b.append(delta.sum(axis=0))
        if i > 0:
            delta = (delta @ params.weights[i].T) * (acts[i] > 0.0)
    grads_W.reverse()
    grads_b.reverse()
    return grads_W, grads_b


def td_update(params: QNetParams, target_params: QNetParams, batch, gamma: float,
              cfg: SgdConfig) -> QNetParams:
    """One SGD step on the batch TD loss; returns fresh parameters."""
    if len(batch[1]) == 0:
        raise ValueError("empty batch")
    gW, gb = td_gradients(params, target_params, batch, gamma)
    lr = cfg.learning_rate
    # shapes are consistent by construction on this hot path
    return QNetParams(
        [W - lr * g for W, g in zip(params.weights, gW)],
        [b - lr * g for b, g in zip(params.biases, gb)],
        validate=False,
    )


def grad_check(params: QNetParams, target_params: QNetParams, batch, gamma: float,
               rng, n_coords: int = 30, h: float = 1e-5) -> float:
    """Max relative disagreement between analytic and central-difference gradients."""
    gW, gb = td_gradients(params, target_params, batch, gamma)
    flat_analytic = np.concatenate([g.ravel() for g in gW] + [g.ravel() for g in gb])
    arrays = params.weights + params.biases
    sizes = [a.size for a in arrays]
    total = sum(sizes)
    coords = rng.choice(total, size=min(n_coords, total), replace=False)
    offsets = np.cumsum([0] + sizes)
    worst = 0.0
    for c in coords:
        ai = int(np.searchsorted(offsets, c, side="right") - 1)
        flat_index = int(c - offsets[ai])
        arr = arrays[ai]
        orig = arr.flat[flat_index]
        arr.flat[flat_index] = orig + h
        lp = td_loss(params, target_params, batch, gamma)
        arr.flat[flat_index] = orig - h
        lm = td_loss(params, target_params, batch, gamma)
        arr.flat[flat_index] = orig
        fd = (lp - lm) / (2 * h)
        an = flat_analytic[c]
        scale = max(abs(fd), abs(an))
        if scale < 1e-10:
            continue  # both effectively zero: error defined as 0
        worst = max(worst, abs(fd - an) / max(scale, 1e-8))
    return worst


def epsilon_at(step: int, cfg: SgdConfig) -> float:
    frac = min(1.0, max(0.0, step / cfg.eps_decay_steps))
    return cfg.eps_start + frac * (cfg.eps_end - cfg.eps_start)


def epsilon_action(n_actions: int, step: int, cfg: SgdConfig, rng) -> Optional[int]:
    """Exploring branch of the epsilon-greedy rule; None means exploit.

    Split out so callers with expensive value estimates can skip computing
    them on exploration steps; the stream consumption is identical to
    :func:`epsilon_greedy` (one uniform draw, plus one integer draw only
    when exploring).
    """
    if rng.random() < epsilon_at(step, cfg):
        return int(rng.integers(n_actions))
    return None


def epsilon_greedy(q_values: np.ndarray, step: int, cfg: SgdConfig, rng) -> int:
    """Exploring action choice; exploits via argmax with lowest-index tie-break."""
    q_values = np.asarray(q_values, dtype=float)
    if q_values.size == 0:
        raise ValueError("q_values must be nonempty")
    action = epsilon_action(q_values.size, step, cfg, rng)
    return int(np.argmax(q_values)) if action is None else action


def save_params(params: QNetParams, path: str) -> None:
    """Flat binary checkpoint: magic, shape header, little-endian float64."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(params.weights)))
        for W in params.weights:
            fh.write(struct.pack("<II", *W.shape))
        for W, b in zip(params.weights, params.biases):
            fh.write(W.astype("<f8").tobytes())
            fh.write(b.astype("<f8").tobytes())


def load_params(path: str) -> QNetParams:
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ValueError("not a parameter checkpoint")
        (n_layers,) = struct.unpack("<I", fh.read(4))
        shapes = [struct.unpack("<II", fh.read(8)) for _ in range(n_layers)]
        weights, biases = [], []
        for n_in, n_out in shapes:
            W = np.frombuffer(fh.read(8 * n_in * n_out), dtype="<f8").reshape(n_in, n_out)
            b = np.frombuffer(fh.read(8 * n_out), dtype="<f8")
            weights.append(W.copy())
            biases.append(b.copy())
    return QNetParams(weights, biases)
