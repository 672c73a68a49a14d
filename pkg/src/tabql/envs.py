"""Discrete benchmark environments, CartPole, and exact model enumeration.

Environments are deliberately self-contained reimplementations of the
standard Gymnasium dynamics (CliffWalking, FrozenLake 4x4/8x8, Taxi,
CartPole) so that every discrete environment can also be enumerated into
an exact transition model for dynamic-programming oracles.

Conventions
-----------
- States are passed in and out of ``step`` explicitly (``EnvState``); the
  environment object owns only its PRNG stream.
- ``step`` returns raw rewards exactly as the standard benchmark defines
  them. Normalized rewards (affinely rescaled to [0, 1]) live only in the
  enumerated ``MdpSpec``.
- Terminal states self-loop with reward 0 in the enumerated model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

ENV_IDS = ("cliffwalking", "frozenlake4", "frozenlake8", "taxi", "cartpole")

# actions: gymnasium orderings
CLIFF_ACTIONS = 4   # 0=up 1=right 2=down 3=left
LAKE_ACTIONS = 4    # 0=left 1=down 2=right 3=up
TAXI_ACTIONS = 6    # 0=south 1=north 2=east 3=west 4=pickup 5=dropoff

FROZEN_MAPS = {
    4: ["SFFF", "FHFH", "FFFH", "HFFG"],
    8: [
        "SFFFFFFF",
        "FFFFFFFF",
        "FFFHFFFF",
        "FFFFFHFF",
        "FFFHFFFF",
        "FHHFFFHF",
        "FHFFHFHF",
        "FFFHFFFG",
    ],
}

TAXI_LOCS = ((0, 0), (0, 4), (4, 0), (4, 3))  # R, G, Y, B

# vertical walls: (row, col) meaning a wall between col and col+1 in row
TAXI_WALLS = {(0, 1), (1, 1), (3, 0), (3, 2), (4, 0), (4, 2)}


class EnvError(ValueError):
    """Invalid environment id, action, initial condition, or step-after-done."""


@dataclass(frozen=True)
class EnvState:
    """Snapshot of an environment at one decision point.

    Exactly one of ``discrete_index`` / ``continuous`` is set, matching the
    environment kind. ``initial_state_tag`` identifies the episode's reset
    state (a discrete index, or a quantized tuple for continuous states).
    """

    env_id: str
    discrete_index: Optional[int]
    continuous: Optional[tuple]
    episode_step: int
    initial_state_tag: object


@dataclass
class MdpSpec:
    """Exact finite model: transition kernel, rewards, terminal set, discount.

    ``reward`` holds expected immediate rewards affinely rescaled to [0, 1]
    using the environment's documented per-step reward range; ``reward_raw``
    keeps the unscaled expectation. Terminal states self-loop with reward 0.
    """

    n_states: int
    n_actions: int
    # transition[s][a] = list of (next_state, probability)
    transition: list
    reward: np.ndarray      # (S, A), normalized to [0, 1]
    reward_raw: np.ndarray  # (S, A), raw scale
    terminal: frozenset
    gamma: float

    def __post_init__(self):
        if not (0.0 < self.gamma < 1.0):
            raise ValueError(f"gamma must lie strictly inside (0,1), got {self.gamma}")
        for s in range(self.n_states):
            for a in range(self.n_actions):
                total = sum(p for _, p in self.transition[s][a])
                if abs(total - 1.0) > 1e-12:
                    raise ValueError(f"probabilities at ({s},{a}) sum to {total}")
        for s in self.terminal:
            for a in range(self.n_actions):
                if self.transition[s][a] != [(s, 1.0)] or self.reward_raw[s, a] != 0.0:
                    raise ValueError(f"terminal state {s} must self-loop with reward 0")

    def kernel_matrix(self) -> np.ndarray:
        """Dense (S, A, S) kernel; convenient for vectorized operators."""
        P = np.zeros((self.n_states, self.n_actions, self.n_states))
        for s in range(self.n_states):
            for a in range(self.n_actions):
                for ns, p in self.transition[s][a]:
                    P[s, a, ns] += p
        return P


def _normalize_rewards(raw: np.ndarray, reward_range: tuple, terminal: frozenset) -> np.ndarray:
    lo, hi = reward_range
    if hi <= lo:
        raise ValueError("degenerate reward range")
    norm = (raw - lo) / (hi - lo)
    for s in terminal:
        norm[s, :] = 0.0
    return norm


class BaseEnv:
    """Shared machinery: horizon handling, tag bookkeeping, model assembly."""

    env_id: str = ""
    n_actions: int = 0
    n_states: Optional[int] = None
    horizon: int = 0
    reward_range: tuple = (0.0, 1.0)

    def __init__(self, seed: int = 0):
        self.rng = np.random.default_rng(np.random.PCG64(np.random.SeedSequence(seed)))

    # -- per-env hooks -------------------------------------------------
    def _initial_index(self) -> int:
        raise NotImplementedError

    def _outcomes(self, s: int, a: int):
        """Enumerate (probability, next_state, raw_reward, done) for one pair."""
        raise NotImplementedError

    def _sample_outcome(self, s: int, a: int):
        outs = self._outcomes(s, a)
        if len(outs) == 1:
            return outs[0]
        probs = [o[0] for o in outs]
        i = self.rng.choice(len(outs), p=probs)
        return outs[i]

    def _terminal_index(self, s: int) -> bool:
        raise NotImplementedError

    def state_components(self, state: EnvState) -> tuple:
        raise NotImplementedError

    # -- common api ----------------------------------------------------
    def valid_initial_condition(self, cond) -> bool:
        return (
            isinstance(cond, (int, np.integer))
            and 0 <= int(cond) < self.n_states
            and not self._terminal_index(int(cond))
        )

    def reset(self, initial_condition=None) -> EnvState:
        if initial_condition is None:
            idx = self._initial_index()
        else:
            if not self.valid_initial_condition(initial_condition):
                raise EnvError(f"invalid initial condition {initial_condition!r} for {self.env_id}")
            idx = int(initial_condition)
        return EnvState(self.env_id, idx, None, 0, idx)

    def is_terminal(self, state: EnvState) -> bool:
        return self._terminal_index(state.discrete_index)

    def _done(self, state: EnvState) -> bool:
        return self.is_terminal(state) or state.episode_step >= self.horizon

    def step(self, state: EnvState, action: int):
        if not (0 <= action < self.n_actions):
            raise EnvError(f"action {action} out of range [0,{self.n_actions})")
        if self._done(state):
            raise EnvError("step called on a finished episode")
        _, ns, reward, terminal = self._sample_outcome(state.discrete_index, action)
        nxt = EnvState(self.env_id, ns, None, state.episode_step + 1, state.initial_state_tag)
        done = terminal or nxt.episode_step >= self.horizon
        return nxt, float(reward), done

    def state_key(self, state: EnvState):
        return state.discrete_index

    def tag_components(self, tag) -> tuple:
        return self._index_components(int(tag))

    def _index_components(self, idx: int) -> tuple:
        raise NotImplementedError

    def index_from_components(self, comps) -> int:
        raise NotImplementedError

    def state_from_index(self, idx: int, episode_step: int = 0) -> EnvState:
        return EnvState(self.env_id, int(idx), None, episode_step, int(idx))

    def enumerate_model(self, gamma: float) -> MdpSpec:
        S, A = self.n_states, self.n_actions
        transition = [[[] for _ in range(A)] for _ in range(S)]
        raw = np.zeros((S, A))
        terminal = frozenset(s for s in range(S) if self._terminal_index(s))
        for s in range(S):
            for a in range(A):
                if s in terminal:
                    transition[s][a] = [(s, 1.0)]
                    continue
                acc = {}
                for p, ns, r, _ in self._outcomes(s, a):
                    acc[ns] = acc.get(ns, 0.0) + p
                    raw[s, a] += p * r
                transition[s][a] = sorted(acc.items())
        reward = _normalize_rewards(raw.copy(), self.reward_range, terminal)
        return MdpSpec(S, A, transition, reward, raw, terminal, gamma)


class CliffWalking(BaseEnv):
    """4x12 cliff grid: per-move reward -1, cliff cells -100 and reset to start.

    Entering a cliff cell does not end the episode; only the goal cell is
    terminal. Start is (3, 0) = index 36, goal (3, 11) = index 47.
    """

    env_id = "cliffwalking"
    n_actions = CLIFF_ACTIONS
    n_states = 48
    horizon = 200
    reward_range = (-100.0, -1.0)
    _ROWS, _COLS = 4, 12
    START, GOAL = 36, 47

    def _cliff(self, idx: int) -> bool:
        r, c = divmod(idx, self._COLS)
        return r == 3 and 1 <= c <= 10

    def _move(self, idx: int, a: int) -> int:
        r, c = divmod(idx, self._COLS)
        if a == 0:
            r = max(0, r - 1)
        elif a == 1:
            c = min(self._COLS - 1, c + 1)
        elif a == 2:
            r = min(self._ROWS - 1, r + 1)
        else:
            c = max(0, c - 1)
        return r * self._COLS + c

    def _initial_index(self) -> int:
        return self.START

    def _terminal_index(self, s: int) -> bool:
        return s == self.GOAL

    def _outcomes(self, s, a):
        ns = self._move(s, a)
        if self._cliff(ns):
            return [(1.0, self.START, -100.0, False)]
        return [(1.0, ns, -1.0, ns == self.GOAL)]

    def _index_components(self, idx: int) -> tuple:
        return tuple(float(x) for x in divmod(idx, self._COLS))

    def index_from_components(self, comps) -> int:
        return int(round(comps[0])) * self._COLS + int(round(comps[1]))

    def state_components(self, state: EnvState) -> tuple:
        return self._index_components(state.discrete_index)


class FrozenLake(BaseEnv):
    """Frozen lake grid: reward 1 for reaching G, holes terminate with 0.

    ``slippery`` replaces each intended move by one of the two perpendicular
    moves or itself, each with probability 1/3.
    """

    n_actions = LAKE_ACTIONS
    horizon = 100
    reward_range = (0.0, 1.0)

    def __init__(self, size: int = 4, slippery: bool = False, seed: int = 0):
        super().__init__(seed)
        self.size = size
        self.slippery = slippery
        self.env_id = f"frozenlake{size}"
        self.desc = FROZEN_MAPS[size]
        self.n_states = size * size

    def _cell(self, idx: int) -> str:
        r, c = divmod(idx, self.size)
        return self.desc[r][c]

    def _move(self, idx: int, a: int) -> int:
        r, c = divmod(idx, self.size)
        if a == 0:
            c = max(0, c - 1)
        elif a == 1:
            r = min(self.size - 1, r + 1)
        elif a == 2:
            c = min(self.size - 1, c + 1)
        else:
            r = max(0, r - 1)
        return r * self.size + c

    def _initial_index(self) -> int:
        return 0

    def _terminal_index(self, s: int) -> bool:
        return self._cell(s) in "GH"

    def _outcomes(self, s, a):
        subactions = ((a - 1) % 4, a, (a + 1) % 4) if self.slippery else (a,)
        p = 1.0 / len(subactions)
        outs = []
        for sub in subactions:
            ns = self._move(s, sub)
            cell = self._cell(ns)
            outs.append((p, ns, 1.0 if cell == "G" else 0.0, cell in "GH"))
        return outs

    def _index_components(self, idx: int) -> tuple:
        return tuple(float(x) for x in divmod(idx, self.size))

    def index_from_components(self, comps) -> int:
        return int(round(comps[0])) * self.size + int(round(comps[1]))

    def state_components(self, state: EnvState) -> tuple:
        return self._index_components(state.discrete_index)


class Taxi(BaseEnv):
    """5x5 taxi: pick up a passenger at one landmark, drop at the destination.

    State index packs (taxi_row, taxi_col, passenger_loc, destination) as
    ``((row*5 + col)*5 + pass)*4 + dest``; passenger_loc 4 means in the taxi.
    Moves cost -1 (walls block east/west), illegal pickup/dropoff -10,
    successful dropoff +20 and terminates.
    """

    env_id = "taxi"
    n_actions = TAXI_ACTIONS
    n_states = 500
    horizon = 200
    reward_range = (-10.0, 20.0)

    @staticmethod
    def decode(idx: int) -> tuple:
        dest = idx % 4
        idx //= 4
        pas = idx % 5
        idx //= 5
        col = idx % 5
        row = idx // 5
        return row, col, pas, dest

    @staticmethod
    def encode(row: int, col: int, pas: int, dest: int) -> int:
        return ((row * 5 + col) * 5 + pas) * 4 + dest

    def _initial_index(self) -> int:
        conds = self.initial_conditions()
        return int(conds[self.rng.integers(len(conds))])

    def initial_conditions(self) -> list:
        out = []
        for row in range(5):
            for col in range(5):
                for pas in range(4):
                    for dest in range(4):
                        if pas != dest:
                            out.append(self.encode(row, col, pas, dest))
        return out

    def _terminal_index(self, s: int) -> bool:
        row, col, pas, dest = self.decode(s)
        return pas < 4 and pas == dest

    def valid_initial_condition(self, cond) -> bool:
        if not isinstance(cond, (int, np.integer)) or not 0 <= int(cond) < 500:
            return False
        row, col, pas, dest = self.decode(int(cond))
        return pas < 4 and pas != dest

    def _outcomes(self, s, a):
        row, col, pas, dest = self.decode(s)
        reward, done = -1.0, False
        nrow, ncol, npas = row, col, pas
        if a == 0:
            nrow = min(4, row + 1)
        elif a == 1:
            nrow = max(0, row - 1)
        elif a == 2:
            if (row, col) not in TAXI_WALLS:
                ncol = min(4, col + 1)
        elif a == 3:
            if (row, col - 1) not in TAXI_WALLS:
                ncol = max(0, col - 1)
        elif a == 4:  # pickup
            if pas < 4 and (row, col) == TAXI_LOCS[pas]:
                npas = 4
            else:
                reward = -10.0
        else:  # dropoff
            if pas == 4 and (row, col) == TAXI_LOCS[dest]:
                npas = dest
                reward = 20.0
                done = True
            elif pas == 4 and (row, col) in TAXI_LOCS:
                npas = TAXI_LOCS.index((row, col))
            else:
                reward = -10.0
        return [(1.0, self.encode(nrow, ncol, npas, dest), reward, done)]

    def _index_components(self, idx: int) -> tuple:
        return tuple(float(x) for x in self.decode(idx))

    def index_from_components(self, comps) -> int:
        return self.encode(*(int(round(c)) for c in comps))

    def state_components(self, state: EnvState) -> tuple:
        return self._index_components(state.discrete_index)


class CartPole:
    """Cart-pole balancing with the canonical Euler-integrated physics.

    Observation (x, x_dot, theta, theta_dot); force +-10 N; dt = 0.02 s;
    failure at |x| > 2.4 or |theta| > 12 degrees; reward 1 per step.
    """

    env_id = "cartpole"
    n_actions = 2
    n_states = None
    horizon = 500
    reward_range = (0.0, 1.0)

    GRAVITY = 9.8
    MASS_CART = 1.0
    MASS_POLE = 0.1
    LENGTH = 0.5
    FORCE_MAG = 10.0
    DT = 0.02
    THETA_LIMIT = 12 * 2 * math.pi / 360
    X_LIMIT = 2.4

    def __init__(self, seed: int = 0):
        self.rng = np.random.default_rng(np.random.PCG64(np.random.SeedSequence(seed)))

    def valid_initial_condition(self, cond) -> bool:
        try:
            vec = tuple(float(v) for v in cond)
        except TypeError:
            return False
        return len(vec) == 4 and all(math.isfinite(v) for v in vec)

    def reset(self, initial_condition=None) -> EnvState:
        if initial_condition is None:
            vec = tuple(self.rng.uniform(-0.05, 0.05, size=4))
        else:
            if not self.valid_initial_condition(initial_condition):
                raise EnvError(f"invalid initial condition {initial_condition!r} for cartpole")
            vec = tuple(float(v) for v in initial_condition)
        tag = tuple(round(v, 2) for v in vec)
        return EnvState("cartpole", None, vec, 0, tag)

    def is_terminal(self, state: EnvState) -> bool:
        x, _, theta, _ = state.continuous
        return abs(x) > self.X_LIMIT or abs(theta) > self.THETA_LIMIT

    def _done(self, state: EnvState) -> bool:
        return self.is_terminal(state) or state.episode_step >= self.horizon

    def step(self, state: EnvState, action: int):
        if action not in (0, 1):
            raise EnvError(f"action {action} out of range [0,2)")
        if self._done(state):
            raise EnvError("step called on a finished episode")
        x, x_dot, theta, theta_dot = state.continuous
        force = self.FORCE_MAG if action == 1 else -self.FORCE_MAG
        total_mass = self.MASS_CART + self.MASS_POLE
        pml = self.MASS_POLE * self.LENGTH
        cos_t, sin_t = math.cos(theta), math.sin(theta)
        temp = (force + pml * theta_dot**2 * sin_t) / total_mass
        theta_acc = (self.GRAVITY * sin_t - cos_t * temp) / (
            self.LENGTH * (4.0 / 3.0 - self.MASS_POLE * cos_t**2 / total_mass)
        )
        x_acc = temp - pml * theta_acc * cos_t / total_mass
        x += self.DT * x_dot
        x_dot += self.DT * x_acc
        theta += self.DT * theta_dot
        theta_dot += self.DT * theta_acc
        nxt = EnvState(
            "cartpole", None, (x, x_dot, theta, theta_dot),
            state.episode_step + 1, state.initial_state_tag,
        )
        done = self.is_terminal(nxt) or nxt.episode_step >= self.horizon
        return nxt, 1.0, done

    def state_key(self, state: EnvState):
        return tuple(round(v, 9) for v in state.continuous)

    def state_components(self, state: EnvState) -> tuple:
        return tuple(float(v) for v in state.continuous)

    def tag_components(self, tag) -> tuple:
        return tuple(float(v) for v in tag)

    def enumerate_model(self, gamma: float):
        raise EnvError("cartpole is continuous and cannot be enumerated")


class EnumeratedEnv(BaseEnv):
    """Environment driven by an explicit finite model (raw-reward scale).

    Useful for running the full learning stack on tiny synthetic problems
    where the exact model, and hence every dynamic-programming quantity,
    is available. ``table[s][a]`` is a list of (prob, next_state, reward,
    done) outcomes.
    """

    def __init__(
        self,
        table: list,
        start_states: Sequence[int],
        horizon: int,
        reward_range: tuple,
        env_id: str = "custom",
        seed: int = 0,
    ):
        super().__init__(seed)
        self.table = table
        self.n_states = len(table)
        self.n_actions = len(table[0])
        self.start_states = list(start_states)
        self.horizon = horizon
        self.reward_range = reward_range
        self.env_id = env_id
        self._terminal = frozenset(
            s for s in range(self.n_states)
            if all(out[3] for a in range(self.n_actions) for out in table[s][a])
            and all(out[1] == s and out[2] == 0.0 for a in range(self.n_actions) for out in table[s][a])
        )

    def _initial_index(self) -> int:
        if len(self.start_states) == 1:
            return self.start_states[0]
        return int(self.start_states[self.rng.integers(len(self.start_states))])

    def _terminal_index(self, s: int) -> bool:
        return s in self._terminal

    def _outcomes(self, s, a):
        return self.table[s][a]

    def _index_components(self, idx: int) -> tuple:
        return (float(idx),)

    def index_from_components(self, comps) -> int:
        return int(round(comps[0]))

    def state_components(self, state: EnvState) -> tuple:
        return self._index_components(state.discrete_index)


def two_state_env(seed: int = 0, horizon: int = 50) -> EnumeratedEnv:
    """Tiny 2-state, 2-action continuing task with rewards in [0, 1].

    Action 0 tends to keep the agent in its state for a small reward;
    action 1 tends to move it for a state-dependent reward. Raw rewards
    are already normalized, so learning-scale and oracle-scale agree.
    """
    table = [
        [  # state 0
            [(0.9, 0, 0.1, False), (0.1, 1, 0.1, False)],   # stay-ish, low reward
            [(0.2, 0, 0.3, False), (0.8, 1, 0.3, False)],   # move-ish, medium reward
        ],
        [  # state 1
            [(0.8, 1, 1.0, False), (0.2, 0, 1.0, False)],   # stay-ish, high reward
            [(0.7, 0, 0.0, False), (0.3, 1, 0.0, False)],   # move-ish, zero reward
        ],
    ]
    return EnumeratedEnv(table, [0], horizon, (0.0, 1.0), env_id="twostate", seed=seed)


def make_env(env_id: str, seed: int = 0, slippery: bool = False):
    """Construct an environment by id with its own PRNG stream."""
    if env_id == "cliffwalking":
        return CliffWalking(seed)
    if env_id == "frozenlake4":
        return FrozenLake(4, slippery, seed)
    if env_id == "frozenlake8":
        return FrozenLake(8, slippery, seed)
    if env_id == "taxi":
        return Taxi(seed)
    if env_id == "cartpole":
        return CartPole(seed)
    if env_id == "twostate":
        return two_state_env(seed)
    raise EnvError(f"unknown env id {env_id!r}")


def reset(env_id: str, seed: int, initial_condition=None) -> EnvState:
    """Deterministic reset: same (env_id, seed, initial_condition) gives the same state."""
    return make_env(env_id, seed).reset(initial_condition)


def enumerate_model(env_id: str, gamma: float = 0.99, slippery: bool = False) -> MdpSpec:
    """Exhaustively enumerate a discrete environment into an exact model."""
    env = make_env(env_id, seed=0, slippery=slippery)
    return env.enumerate_model(gamma)
