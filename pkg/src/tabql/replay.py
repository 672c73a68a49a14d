"""Replay buffer, context construction, quality gate, empirical next-state law.

A stored transition is richer than the classic 4-tuple: it carries the
teacher Q-network's value estimates for *all* actions at its state, taken
at collection time, so each buffered state expands into one labeled
context row per action. Contexts are immutable snapshots with cached
feature matrices; the canonical compute order (timestep ascending, action
ascending) makes every downstream weighted sum permutation-invariant and
bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .envs import EnvState
from .features import FeatureRow


@dataclass
class Transition:
    """One augmented experience record.

    ``q_labels[a]`` is the teacher's estimate for (state, a) at push time;
    the label of the classic single-Q view is ``q_labels[action_taken]``.
    ``comps``/``suffix`` cache the decoded feature pieces so contexts can be
    assembled without re-decoding (full row = comps + (action,) + suffix).
    """

    state: EnvState
    action_taken: int
    reward: float
    next_state: EnvState
    q_labels: np.ndarray
    timestep: int
    episode_id: int
    terminal: bool
    state_key: object
    next_state_key: object
    comps: tuple
    suffix: tuple
    episode_return: Optional[float] = None


def make_transition(
    env,
    state: EnvState,
    action: int,
    reward: float,
    next_state: EnvState,
    q_labels: np.ndarray,
    timestep: int,
    episode_id: int,
    terminal: bool,
    include_initial_tag: bool = False,
) -> Transition:
    comps = env.state_components(state)
    suffix = (float(state.episode_step),)
    if include_initial_tag:
        suffix = suffix + env.tag_components(state.initial_state_tag)
    q = np.asarray(q_labels, dtype=float)
    if q.shape != (env.n_actions,):
        raise ValueError(f"q_labels must have length {env.n_actions}, got {q.shape}")
    return Transition(
        state, action, float(reward), next_state, q, timestep, episode_id,
        terminal, env.state_key(state), env.state_key(next_state), comps, suffix,
    )


class ReplayBuffer:
    """Bounded FIFO of transitions; eviction removes exactly the oldest entry.

    Backed by a ring so both ``push`` and positional access (needed for
    minibatch sampling) are O(1). Position 0 is the oldest surviving entry.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._data: list = []
        self._head = 0
        self._last_timestep = None

    def __len__(self) -> int:
        return len(self._data)

    def __getitem__(self, i: int) -> Transition:
        n = len(self._data)
        if not -n <= i < n:
            raise IndexError(i)
        return self._data[(self._head + (i % n)) % n]

    @property
    def entries(self) -> list:
        """Snapshot in insertion order, oldest first."""
        return [self[i] for i in range(len(self))]

    def push(self, transition: Transition) -> None:
        if self._last_timestep is not None and transition.timestep <= self._last_timestep:
            raise ValueError("timesteps must strictly increase across pushes")
        self._last_timestep = transition.timestep
        if len(self._data) < self.capacity:
            self._data.append(transition)
        else:
            self._data[self._head] = transition
            self._head = (self._head + 1) % self.capacity


@dataclass
class Context:
    """Immutable window of transitions expanded into per-action labeled rows."""

    source_transitions: list  # ascending timestep
    size_K: int
    n_actions: int
    n_components: int
    _matrix: Optional[np.ndarray] = field(default=None, repr=False)
    _labels: Optional[np.ndarray] = field(default=None, repr=False)
    _mean: Optional[np.ndarray] = field(default=None, repr=False)
    _std: Optional[np.ndarray] = field(default=None, repr=False)
    _zscored: Optional[np.ndarray] = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.source_transitions)

    @property
    def rows(self) -> list:
        """Labeled rows ordered by descending recency (action ascending within)."""
        out = []
        for tr in reversed(self.source_transitions):
            for a in range(self.n_actions):
                feats = tr.comps + (float(a),) + tr.suffix
                out.append(FeatureRow(feats, float(tr.q_labels[a])))
        return out

    def _build(self) -> None:
        n = len(self.source_transitions)
        base = np.array([tr.comps + tr.suffix for tr in self.source_transitions], dtype=float)
        c = self.n_components
        A = self.n_actions
        mat = np.empty((n * A, base.shape[1] + 1))
        rep = np.repeat(base, A, axis=0)
        mat[:, :c] = rep[:, :c]
        mat[:, c] = np.tile(np.arange(A, dtype=float), n)
        mat[:, c + 1:] = rep[:, c:]
        self._matrix = mat
        self._labels = np.concatenate([tr.q_labels for tr in self.source_transitions]).astype(float)
        self._mean = mat.mean(axis=0)
        std = mat.std(axis=0)
        std[std == 0.0] = 1.0  # zero-variance dimensions keep unit scale
        self._std = std

    def feature_matrix(self) -> np.ndarray:
        """Rows in canonical order: timestep ascending, action ascending."""
        if self._matrix is None:
            self._build()
        return self._matrix

    def labels(self) -> np.ndarray:
        if self._labels is None:
            self._build()
        return self._labels

    def standardization(self) -> tuple:
        if self._mean is None:
            self._build()
        return self._mean, self._std


class ArrayContext:
    """Bare feature-matrix context for batch fitting paths.

    Satisfies the regressor-facing surface of :class:`Context` (matrix,
    labels, standardization) without transition bookkeeping; used where a
    regression set is constructed directly, as in batch value iteration
    over a fixed dataset.
    """

    def __init__(self, matrix: np.ndarray, labels: np.ndarray):
        self._matrix = np.asarray(matrix, dtype=float)
        self._labels = np.asarray(labels, dtype=float)
        if self._matrix.shape[0] != self._labels.shape[0]:
            raise ValueError("matrix and labels disagree on row count")
        if self._matrix.shape[0] == 0:
            self._mean = np.zeros(self._matrix.shape[1])
            self._std = np.ones(self._matrix.shape[1])
            self._zscored = None
            return
        self._mean = self._matrix.mean(axis=0)
        std = self._matrix.std(axis=0)
        std[std == 0.0] = 1.0
        self._std = std
        self._zscored = None

    def __len__(self) -> int:
        return self._matrix.shape[0]

    def feature_matrix(self) -> np.ndarray:
        return self._matrix

    def labels(self) -> np.ndarray:
        return self._labels

    def standardization(self) -> tuple:
        return self._mean, self._std

    def zscored_matrix(self) -> np.ndarray:
        if self._zscored is None:
            self._zscored = (self._matrix - self._mean) / self._std
        return self._zscored


def context_from_transitions(transitions: list, K: Optional[int] = None) -> Context:
    """Context over an explicit transition list (pooled or replayed)."""
    if not transitions:
        raise ValueError("no transitions given")
    return _new_context(list(transitions), K if K is not None else len(transitions))


def _new_context(transitions: list, K: int) -> Context:
    ordered = sorted(transitions, key=lambda tr: tr.timestep)
    n_actions = len(ordered[0].q_labels)
    return Context(ordered, K, n_actions, len(ordered[0].comps))


def build_context(buffer: ReplayBuffer, K: int, strategy: str = "recent", rng=None) -> Context:
    """Select up to K transitions from the buffer and expand them into rows.

    ``recent`` takes the latest K by timestep (the default and the only
    strategy used by the learning loop); ``uniform`` draws K distinct
    entries uniformly, for ablations.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    n = len(buffer)
    if n == 0:
        raise ValueError("cannot build a context from an empty buffer")
    if strategy == "recent":
        chosen = [buffer[i] for i in range(max(0, n - K), n)]
    elif strategy == "uniform":
        if rng is None:
            raise ValueError("uniform strategy needs an rng")
        idx = rng.choice(n, size=min(K, n), replace=False)
        chosen = [buffer[i] for i in sorted(idx)]
    else:
        raise ValueError(f"unknown strategy {strategy!r}")
    return _new_context(chosen, K)


def quality_filter(
    context: Context,
    current_q_labels_fn: Callable[[EnvState], np.ndarray],
    tau: Optional[float],
    theta: Optional[float],
    gamma: float,
) -> Context:
    """Drop low-quality transitions before they reach the regressor.

    A transition is dropped when its episode's return is known and at or
    below the floor ``theta``, or when its stored labels have drifted from
    the teacher's current estimates by more than ``tau`` times the value
    range 1/(1-gamma). Either clause can be disabled with ``None``. The
    result may be empty; callers fall back to the unfiltered context.
    """
    if tau is not None and tau < 0:
        raise ValueError("tau must be >= 0")
    value_range = 1.0 / (1.0 - gamma)
    kept = []
    for tr in context.source_transitions:
        if theta is not None and tr.episode_return is not None and tr.episode_return <= theta:
            continue
        if tau is not None:
            drift = np.max(np.abs(tr.q_labels - np.asarray(current_q_labels_fn(tr.state), dtype=float)))
            if drift > tau * value_range:
                continue
        kept.append(tr)
    if not kept:
        return Context([], context.size_K, context.n_actions, context.n_components)
    return _new_context(kept, context.size_K)


def empirical_next_dist(
    context: Context,
    env,
    query_state: EnvState,
    query_action: int,
    m_min: int = 1,
    metric: str = "standardized",
):
    """Empirical next-state distribution at a query pair.

    Exact matches on (state, action) give uniform weight over their
    observed next states; with no exact match, the ``m_min`` nearest
    transitions under the z-scored (components, action) metric are used,
    again with uniform weights. Returns a list of (next_state, weight)
    with weights summing to 1.
    """
    if metric != "standardized":
        raise ValueError(f"unknown metric {metric!r}")
    if m_min < 1:
        raise ValueError("m_min must be >= 1")
    trs = context.source_transitions
    if not trs:
        raise ValueError("context is empty")
    qkey = env.state_key(query_state)
    exact = [tr for tr in trs if tr.state_key == qkey and tr.action_taken == query_action]
    if exact:
        chosen = exact
    else:
        pts = np.array([tr.comps + (float(tr.action_taken),) for tr in trs], dtype=float)
        mean = pts.mean(axis=0)
        std = pts.std(axis=0)
        std[std == 0.0] = 1.0
        q = (np.array(env.state_components(query_state) + (float(query_action),)) - mean) / std
        d = np.linalg.norm((pts - mean) / std - q, axis=1)
        order = np.lexsort((np.arange(len(trs)), d))
        chosen = [trs[i] for i in order[: min(m_min, len(trs))]]
    w = 1.0 / len(chosen)
    acc: dict = {}
    for tr in chosen:
        key = tr.next_state_key
        if key in acc:
            acc[key] = (acc[key][0], acc[key][1] + w)
        else:
            acc[key] = (tr.next_state, w)
    return [(st, weight) for st, weight in acc.values()]


def exact_match_count(context: Context, env, query_state: EnvState, query_action: int) -> int:
    """How many context transitions share the query (state, action) exactly."""
    qkey = env.state_key(query_state)
    return sum(
        1 for tr in context.source_transitions
        if tr.state_key == qkey and tr.action_taken == query_action
    )
