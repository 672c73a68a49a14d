"""Tabularized feature rows: decoded state components, action, timestep.

Discrete state indices are decoded back into their structured components
(grid row/column; the taxi 4-tuple) rather than fed to regressors as raw
indices. The episode timestep is always appended; the episode's initial
state can optionally be appended (decoded the same way) so experience
gathered under different reset conditions stays distinguishable when
pooled into one context.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .envs import EnvState


@dataclass(frozen=True)
class FeatureRow:
    """One regression row: fixed-length features plus an optional label."""

    features: tuple
    label: Optional[float] = None


def state_features(env, state: EnvState, include_initial_tag: bool = False) -> tuple:
    """Everything in a feature row except the action id.

    Layout matches :func:`encode_features` with the action removed, so a
    full row is ``components + (action,) + state_features[len(components):]``.
    """
    comps = env.state_components(state)
    feats = comps + (float(state.episode_step),)
    if include_initial_tag:
        feats = feats + env.tag_components(state.initial_state_tag)
    return feats


def encode_features(
    env,
    state: EnvState,
    action: int,
    include_initial_tag: bool = False,
    label: Optional[float] = None,
) -> FeatureRow:
    """Encode one (state, action) pair as a feature row.

    Layout: decoded state components, action id, episode timestep, then the
    decoded initial-state tag when requested.
    """
    comps = env.state_components(state)
    feats = comps + (float(action), float(state.episode_step))
    if include_initial_tag:
        feats = feats + env.tag_components(state.initial_state_tag)
    return FeatureRow(feats, label)


def feature_length(env, include_initial_tag: bool = False) -> int:
    dummy = env.reset()
    return len(encode_features(env, dummy, 0, include_initial_tag).features)


def insert_action_column(base: np.ndarray, n_components: int, actions: np.ndarray) -> np.ndarray:
    """Vectorized row assembly: splice an action column into stacked state features.

    ``base`` is (n, f-1) rows of :func:`state_features`; the action column is
    inserted at index ``n_components`` to match :func:`encode_features`.
    """
    n = base.shape[0]
    out = np.empty((n, base.shape[1] + 1), dtype=float)
    out[:, :n_components] = base[:, :n_components]
    out[:, n_components] = actions
    out[:, n_components + 1:] = base[:, n_components:]
    return out
