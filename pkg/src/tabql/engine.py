"""The TabQL loop: warm-up, quality-gated switch, in-context inference, refits.

A run interacts with one environment for a fixed number of steps. The
warm-up phase acts epsilon-greedily on the teacher Q-network while
populating the replay buffer with label-augmented transitions. Control
hands over to in-context inference exactly once, either unconditionally at
the configured step (fixed mode) or when the episode-return quality gate
arms and fires (adaptive mode). After the switch, actions come from the
frozen regressor conditioned on the active context window, the teacher
keeps training and labeling new transitions, and the context is rebuilt
whenever the refit rule triggers.

On small enumerable tasks the run can carry a full error ledger: dense
prediction tables are rebuilt every post-switch step and the measured
error components are checked against the contraction recursion bound.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from . import qnet
from .envs import make_env
from .features import state_features
from .oracle import (
    ErrorLedger,
    bellman_apply,
    empirical_bellman_apply,
    min_match_count,
    predict_all,
    value_iteration,
)
from .regressors import make_regressor
from .replay import Context, ReplayBuffer, build_context, make_transition, quality_filter


@dataclass
class GateConfig:
    """Quality-gated switching rule constants.

    ``adaptive`` False means the phase flips unconditionally at step ``T0``;
    True arms the gate at ``T0`` and fires only once the recent episode
    returns clear the quality criterion.
    """

    T0: int = 20000
    window_W: int = 30
    G_min: int = 20
    quantile_q: float = 0.5
    theta_floor: float = -math.inf
    delta_margin: float = 1.0
    adaptive: bool = False

    def __post_init__(self):
        if self.G_min > self.window_W:
            raise ValueError("G_min must not exceed window_W")
        if not (0.0 < self.quantile_q < 1.0):
            raise ValueError("quantile_q must lie in (0,1)")


@dataclass
class RefitConfig:
    """Context rebuild cadence: every completed episode, or staleness-based."""

    mode: str = "episode"  # episode | adaptive
    rho_stale: float = 0.25
    e_min: int = 1

    def __post_init__(self):
        if self.mode not in ("episode", "adaptive"):
            raise ValueError(f"unknown refit mode {self.mode!r}")
        if not (0.0 < self.rho_stale <= 1.0):
            raise ValueError("rho_stale must lie in (0,1]")
        if self.e_min < 1:
            raise ValueError("e_min must be >= 1")


@dataclass
class RunState:
    """Mutable bookkeeping of one run; the phase flips warmup->icl at most once."""

    phase: str = "warmup"
    t: int = 0
    episode: int = 0
    return_window: List[float] = field(default_factory=list)
    window_W: int = 30
    t_last: int = 0
    e_last: int = 0
    active_context: Optional[Context] = None
    switch_step: Optional[int] = None

    def push_return(self, value: float) -> None:
        self.return_window.append(value)
        if len(self.return_window) > self.window_W:
            del self.return_window[0]


def window_quantile(values, q: float) -> float:
    """Quantile with linear interpolation over the *distinct* sorted values.

    Interpolating over distinct values (midpoint between the two central
    ones at even counts) keeps the threshold strictly inside the value
    range whenever the window is not constant; a mass-based quantile would
    sit on the majority value and make the strict above-threshold count
    unattainable for any window dominated by one return level.
    """
    distinct = sorted(set(values))
    if len(distinct) == 1:
        return float(distinct[0])
    pos = q * (len(distinct) - 1)
    lo = int(math.floor(pos))
    hi = int(math.ceil(pos))
    frac = pos - lo
    return float(distinct[lo] * (1.0 - frac) + distinct[hi] * frac)


def switch_gate(run_state: RunState, cfg: GateConfig) -> bool:
    """True when the warm-up handoff should fire (window full + quality met)."""
    window = run_state.return_window
    if len(window) < cfg.window_W:
        return False
    theta = window_quantile(window, cfg.quantile_q)
    g = sum(1 for r in window if r > theta)
    return g >= cfg.G_min and theta > cfg.theta_floor + cfg.delta_margin


def refit_gate(run_state: RunState, K: int, cfg: RefitConfig) -> bool:
    """True when the active context is stale: enough turnover and a new episode."""
    rho = (run_state.t - run_state.t_last) / K
    return rho >= cfg.rho_stale and (run_state.episode - run_state.e_last) >= cfg.e_min


@dataclass
class EpisodeRow:
    episode: int
    end_step: int
    ret: float
    phase: str


@dataclass
class RunResult:
    rows: List[EpisodeRow]
    switch_step: Optional[int]
    ledger: Optional[ErrorLedger]
    params: qnet.QNetParams
    refit_steps: List[int]


class TabQLRun:
    """One seeded run; all stochastic streams derive from the single seed."""

    def __init__(self, cfg, seed: int):
        self.cfg = cfg
        self.seed = seed
        sub = np.random.SeedSequence(seed).generate_state(8)

        def stream(i):
            return np.random.default_rng(np.random.PCG64(np.random.SeedSequence(int(sub[i]))))

        self.env = make_env(cfg.env_id, seed=int(sub[0]), slippery=cfg.slippery)
        self.rng_init = stream(1)
        self.rng_explore = stream(2)
        self.rng_batch = stream(3)
        self.rng_misc = stream(4)

        if self.env.n_states is not None:
            self._eye = np.eye(self.env.n_states)
            n_inputs = self.env.n_states
        else:
            self._eye = None
            n_inputs = len(self.env.state_components(self.env.reset()))
        self.params = qnet.init_params(n_inputs, cfg.hidden, self.env.n_actions, self.rng_init)
        self.target = self.params.copy()
        self.updates = 0
        self.buffer = ReplayBuffer(cfg.buffer_w)
        # numpy mirror of the buffer for O(1) vectorized minibatch assembly
        W = cfg.buffer_w
        dim = n_inputs if self._eye is None else 1
        self._ring_x = np.zeros((W, dim))
        self._ring_xn = np.zeros((W, dim))
        self._ring_a = np.zeros(W, dtype=np.int64)
        self._ring_r = np.zeros(W)
        self._ring_term = np.zeros(W)
        self._ring_pos = 0
        self._ring_len = 0
        self.state = RunState(window_W=cfg.gate.window_W)
        self.icl_enabled = cfg.algo == "tabql"
        self.refit_steps: List[int] = []

        self.regressor = None
        if self.icl_enabled:
            self.regressor = self._make_regressor()

        self.ledger: Optional[ErrorLedger] = None
        self._oracle = None
        if getattr(cfg, "ledger", False):
            self._init_ledger()

    # -- helpers --------------------------------------------------------
    def _make_regressor(self):
        kind = self.cfg.regressor
        if kind.kind == "exact_table":
            from .oracle import raw_reward_model

            model = self.env.enumerate_model(self.cfg.gamma)
            q_star = value_iteration(raw_reward_model(model), tol=1e-10)
            return make_regressor(kind, env=self.env, q_table=q_star)
        return make_regressor(kind)

    def _init_ledger(self):
        if self.env.n_states is None:
            raise ValueError("the error ledger needs an enumerable environment")
        if tuple(self.env.reward_range) != (0.0, 1.0):
            raise ValueError("the error ledger needs rewards natively in [0, 1]")
        if self.cfg.include_initial_tag:
            raise ValueError("the error ledger does not support initial-tag features")
        model = self.env.enumerate_model(self.cfg.gamma)
        q_star = value_iteration(model, tol=1e-12)
        self._oracle = {"model": model, "q_star": q_star}
        self.ledger = ErrorLedger()

    def _net_input(self, state) -> np.ndarray:
        if self._eye is not None:
            return self._eye[state.discrete_index]
        return np.asarray(state.continuous, dtype=float)

    def _q_labels(self, state) -> np.ndarray:
        return qnet.forward(self.params, self._net_input(state))

    def _query_rows(self, state) -> np.ndarray:
        comps = self.env.state_components(state)
        base = state_features(self.env, state, self.cfg.include_initial_tag)
        c = len(comps)
        A = self.env.n_actions
        rows = np.empty((A, len(base) + 1))
        rows[:, :c] = np.asarray(base[:c])
        rows[:, c] = np.arange(A, dtype=float)
        rows[:, c + 1:] = np.asarray(base[c:])
        return rows

    def _ring_push(self, tr) -> None:
        i = self._ring_pos
        if self._eye is not None:
            self._ring_x[i, 0] = tr.state.discrete_index
            self._ring_xn[i, 0] = tr.next_state.discrete_index
        else:
            self._ring_x[i] = tr.state.continuous
            self._ring_xn[i] = tr.next_state.continuous
        self._ring_a[i] = tr.action_taken
        self._ring_r[i] = tr.reward
        self._ring_term[i] = 1.0 if tr.terminal else 0.0
        self._ring_pos = (i + 1) % self.cfg.buffer_w
        self._ring_len = min(self._ring_len + 1, self.cfg.buffer_w)

    def _sample_batch(self):
        idx = self.rng_batch.integers(0, self._ring_len, size=self.cfg.sgd.batch_size)
        if self._ring_len == self.cfg.buffer_w:  # ring full: position 0 moved
            idx = (self._ring_pos + idx) % self.cfg.buffer_w
        if self._eye is not None:
            X = self._eye[self._ring_x[idx, 0].astype(np.int64)]
            Xn = self._eye[self._ring_xn[idx, 0].astype(np.int64)]
        else:
            X = self._ring_x[idx]
            Xn = self._ring_xn[idx]
        return X, self._ring_a[idx], self._ring_r[idx], Xn, self._ring_term[idx]

    def _build_active_context(self) -> Context:
        ctx = build_context(self.buffer, self.cfg.context_k, self.cfg.strategy, self.rng_misc)
        filtered = quality_filter(
            ctx, self._q_labels, self.cfg.filter_tau, self.cfg.filter_theta, self.cfg.gamma
        )
        return filtered if len(filtered) > 0 else ctx

    def _switch(self):
        self.state.phase = "icl"
        self.state.switch_step = self.state.t
        self.state.t_last = self.state.t
        self.state.e_last = self.state.episode
        self.state.active_context = self._build_active_context()
        if self.ledger is not None:
            self._start_ledger()

    def _refit(self):
        self.state.active_context = self._build_active_context()
        self.state.t_last = self.state.t
        self.state.e_last = self.state.episode
        self.refit_steps.append(self.state.t)

    # -- ledger instrumentation ------------------------------------------
    def _dqn_table(self) -> np.ndarray:
        return qnet.forward(self.params, self._eye)

    def _start_ledger(self):
        env, S, A = self.env, self.env.n_states, self.env.n_actions
        q_star = self._oracle["q_star"]
        ts = self._cur_state.episode_step
        table = predict_all(self.state.active_context, self.regressor, env, S, A, ts)
        self.ledger.eps_label = float(np.max(np.abs(self._dqn_table() - q_star)))
        self.ledger.initial_err = float(np.max(np.abs(table - q_star)))
        self._led_prev_table = table
        self._led_prev_context = self.state.active_context
        self._led_prev_ts = ts
        self._led_rhs = self.ledger.initial_err

    def _ledger_step(self):
        env, S, A = self.env, self.env.n_states, self.env.n_actions
        model = self._oracle["model"]
        q_star = self._oracle["q_star"]
        gamma = self.cfg.gamma
        ts = self._cur_state.episode_step
        table = predict_all(self.state.active_context, self.regressor, env, S, A, ts)
        t_hat = empirical_bellman_apply(
            self._led_prev_table, self._led_prev_context, self.regressor, env,
            model.reward, gamma, self.cfg.m_min, self._led_prev_ts,
        )
        t_true = bellman_apply(self._led_prev_table, model)
        eps_stat = float(np.max(np.abs(t_hat - t_true)))
        eps_icl = float(np.max(np.abs(table - t_hat)))
        self._led_rhs = gamma * self._led_rhs + eps_icl + eps_stat
        self.ledger.record(
            self.state.t,
            eps_icl,
            eps_stat,
            min_match_count(self._led_prev_context, env, S, A, self.cfg.m_min),
            float(np.max(np.abs(table - q_star))),
            self._led_rhs,
        )
        self._led_prev_table = table
        self._led_prev_context = self.state.active_context
        self._led_prev_ts = ts

    # -- phase steps ------------------------------------------------------
    def warmup_step(self) -> None:
        q = self._q_labels(self._cur_state)
        action = qnet.epsilon_greedy(q, self.state.t, self.cfg.sgd, self.rng_explore)
        self._advance(action, q)

    def icl_step(self) -> None:
        action = qnet.epsilon_action(self.env.n_actions, self.state.t, self.cfg.sgd,
                                     self.rng_explore)
        if action is None:
            values = self.regressor.predict(self.state.active_context,
                                            self._query_rows(self._cur_state))
            action = int(np.argmax(values))
        self._advance(action, self._q_labels(self._cur_state))

    def _advance(self, action: int, q_labels: np.ndarray) -> None:
        env, cfg, rs = self.env, self.cfg, self.state
        nxt, reward, done = env.step(self._cur_state, action)
        terminal = done and env.is_terminal(nxt)
        rs.t += 1
        tr = make_transition(
            env, self._cur_state, action, reward, nxt, q_labels,
            rs.t, rs.episode, terminal, cfg.include_initial_tag,
        )
        self.buffer.push(tr)
        self._ring_push(tr)
        self._episode_transitions.append(tr)
        self._episode_return += reward

        if len(self.buffer) >= cfg.sgd.batch_size and cfg.sgd.learning_rate > 0:
            self.params = qnet.td_update(self.params, self.target, self._sample_batch(),
                                         cfg.gamma, cfg.sgd)
            self.updates += 1
            if self.updates % cfg.sgd.target_sync_period == 0:
                self.target = self.params.copy()

        if done:
            rs.episode += 1
            for etr in self._episode_transitions:
                etr.episode_return = self._episode_return
            self.rows.append(EpisodeRow(rs.episode, rs.t, self._episode_return, rs.phase))
            rs.push_return(self._episode_return)
            self._episode_transitions = []
            self._episode_return = 0.0
            if rs.phase == "warmup":
                if (self.icl_enabled and cfg.gate.adaptive and rs.t >= cfg.gate.T0
                        and switch_gate(rs, cfg.gate)):
                    self._switch()
            elif cfg.refit.mode == "episode" and rs.episode - rs.e_last >= cfg.refit.e_min:
                self._refit()
            self._cur_state = env.reset()
        else:
            self._cur_state = nxt

        if rs.phase == "warmup" and self.icl_enabled and not cfg.gate.adaptive and rs.t >= cfg.gate.T0:
            self._switch()
        elif rs.phase == "icl" and cfg.refit.mode == "adaptive" and refit_gate(rs, cfg.context_k, cfg.refit):
            self._refit()

        if rs.phase == "icl" and self.ledger is not None and rs.switch_step != rs.t:
            self._ledger_step()

    def run(self) -> RunResult:
        self.rows: List[EpisodeRow] = []
        self._episode_transitions: list = []
        self._episode_return = 0.0
        self._cur_state = self.env.reset()
        while self.state.t < self.cfg.total_steps:
            if self.state.phase == "warmup":
                self.warmup_step()
            else:
                self.icl_step()
        return RunResult(self.rows, self.state.switch_step, self.ledger,
                         self.params, self.refit_steps)


def run(cfg, seed: int) -> RunResult:
    """Execute one fully deterministic run of the configured algorithm."""
    return TabQLRun(cfg, seed).run()
