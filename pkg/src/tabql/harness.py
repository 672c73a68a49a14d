"""Experiment runner: seeded runs, baselines, sweeps, generalization studies.

Every experiment writes a learning-curve CSV with the fixed header
``seed,episode,end_step,return,phase`` (floats as shortest round-trip
decimals) plus a resolved-config sidecar; re-running from the sidecar
reproduces the CSV byte for byte. Seeds are fully independent: each run
derives all of its randomness from its own seed.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence

import numpy as np

from . import engine, qnet
from .config import ExperimentConfig, write_sidecar
from .envs import make_env
from .features import insert_action_column, state_features
from .oracle import raw_reward_model, value_iteration
from .regressors import KnnRegressor, make_regressor
from .replay import ArrayContext, context_from_transitions, make_transition

CURVE_HEADER = "seed,episode,end_step,return,phase"
LEDGER_HEADER = "seed,t,eps_icl,eps_stat,eps_label,m_t,sup_error,bound_rhs"


def _fmt(x: float) -> str:
    return repr(float(x))


# ---------------------------------------------------------------------------
# baselines
# ---------------------------------------------------------------------------

def run_tabular_q(cfg: ExperimentConfig, seed: int) -> engine.RunResult:
    """Classic single-table control with the configured exploration schedule."""
    sub = np.random.SeedSequence(seed).generate_state(8)
    env = make_env(cfg.env_id, seed=int(sub[0]), slippery=cfg.slippery)
    rng_explore = np.random.default_rng(np.random.PCG64(np.random.SeedSequence(int(sub[2]))))
    Q = np.zeros((env.n_states, env.n_actions))
    rows: List[engine.EpisodeRow] = []
    state = env.reset()
    episode_return, episode = 0.0, 0
    alpha, gamma = cfg.tabular_alpha, cfg.gamma
    for t in range(1, cfg.total_steps + 1):
        action = qnet.epsilon_greedy(Q[state.discrete_index], t - 1, cfg.sgd, rng_explore)
        nxt, reward, done = env.step(state, action)
        terminal = done and env.is_terminal(nxt)
        boot = 0.0 if terminal else gamma * np.max(Q[nxt.discrete_index])
        s, a = state.discrete_index, action
        Q[s, a] = (1 - alpha) * Q[s, a] + alpha * (reward + boot)
        episode_return += reward
        if done:
            episode += 1
            rows.append(engine.EpisodeRow(episode, t, episode_return, "warmup"))
            episode_return = 0.0
            state = env.reset()
        else:
            state = nxt
    return engine.RunResult(rows, None, None, None, [])


@dataclass
class FqiResult:
    eval_returns: List[float]
    dataset_size: int


def collect_dataset(cfg: ExperimentConfig, seed: int, n_steps: Optional[int] = None) -> list:
    """Buffer dump from a uniform-random behavior policy."""
    sub = np.random.SeedSequence(seed).generate_state(8)
    env = make_env(cfg.env_id, seed=int(sub[0]), slippery=cfg.slippery)
    rng = np.random.default_rng(np.random.PCG64(np.random.SeedSequence(int(sub[2]))))
    zeros = np.zeros(env.n_actions)
    out = []
    state = env.reset()
    for t in range(1, (n_steps or cfg.total_steps) + 1):
        action = int(rng.integers(env.n_actions))
        nxt, reward, done = env.step(state, action)
        terminal = done and env.is_terminal(nxt)
        out.append(make_transition(env, state, action, reward, nxt, zeros, t, 0, terminal))
        state = env.reset() if done else nxt
    return out


def baseline_fqi(cfg: ExperimentConfig, dataset: list, seed: int = 0,
                 eval_episodes: int = 20) -> FqiResult:
    """Batch value iteration over a fixed dataset with the configured fitter.

    Each sweep refits the regressor to one-step lookahead targets computed
    from the previous iterate; the resulting greedy policy is then rolled
    out for evaluation. No learning curve is produced.
    """
    if not dataset:
        raise ValueError("empty dataset")
    sub = np.random.SeedSequence(seed).generate_state(8)
    env = make_env(cfg.env_id, seed=int(sub[1]), slippery=cfg.slippery)
    gamma = cfg.gamma
    A = env.n_actions

    if cfg.regressor.kind == "exact_table":
        q = np.zeros((env.n_states, env.n_actions))
        sa_groups: dict = {}
        for tr in dataset:
            sa_groups.setdefault((tr.state.discrete_index, tr.action_taken), []).append(tr)
        for _ in range(cfg.fqi_iterations):
            new = q.copy()
            for (s, a), trs in sa_groups.items():
                targets = [
                    tr.reward + (0.0 if tr.terminal else gamma * np.max(q[tr.next_state.discrete_index]))
                    for tr in trs
                ]
                new[s, a] = float(np.mean(targets))
            q = new
        regressor = make_regressor(cfg.regressor, env=env, q_table=q)
        fitted = ArrayContext(np.zeros((1, 1)), np.zeros(1))  # lookups ignore the context
    else:
        n_comp = len(env.state_components(dataset[0].state))
        rows_sa = np.array(
            [tr.comps + (float(tr.action_taken),) + tr.suffix for tr in dataset]
        )
        next_base = np.array(
            [env.state_components(tr.next_state) + (float(tr.next_state.episode_step),) for tr in dataset]
        )
        rewards = np.array([tr.reward for tr in dataset])
        alive = np.array([0.0 if tr.terminal else 1.0 for tr in dataset])
        next_q_rows = np.vstack([
            insert_action_column(next_base, n_comp, np.full(len(dataset), float(a)))
            for a in range(A)
        ])
        regressor = make_regressor(cfg.regressor)
        y = rewards.copy()
        fitted = ArrayContext(rows_sa, y)
        for _ in range(cfg.fqi_iterations):
            nxt_vals = regressor.predict(fitted, next_q_rows).reshape(A, len(dataset))
            y = rewards + gamma * alive * nxt_vals.max(axis=0)
            fitted = ArrayContext(rows_sa, y)

    def greedy(state):
        base = np.array([state_features(env, state)])
        queries = np.vstack([
            insert_action_column(base, len(env.state_components(state)), np.array([float(a)]))
            for a in range(A)
        ])
        return int(np.argmax(regressor.predict(fitted, queries)))

    returns = []
    for _ in range(eval_episodes):
        state = env.reset()
        total, done = 0.0, False
        while not done:
            state, r, done = env.step(state, greedy(state))
            total += r
        returns.append(total)
    return FqiResult(returns, len(dataset))


# ---------------------------------------------------------------------------
# experiment driver
# ---------------------------------------------------------------------------

def run_seed(cfg: ExperimentConfig, seed: int) -> engine.RunResult:
    if cfg.algo in ("tabql", "dqn"):
        return engine.run(cfg, seed)
    if cfg.algo == "tabular_q":
        return run_tabular_q(cfg, seed)
    raise ValueError(f"run_seed does not handle algo {cfg.algo!r}")


def curve_lines(seed: int, result: engine.RunResult) -> List[str]:
    return [
        f"{seed},{row.episode},{row.end_step},{_fmt(row.ret)},{row.phase}"
        for row in result.rows
    ]


def ledger_lines(seed: int, result: engine.RunResult) -> List[str]:
    led = result.ledger
    if led is None:
        return []
    return [
        f"{seed},{led.steps[i]},{_fmt(led.eps_icl[i])},{_fmt(led.eps_stat[i])},"
        f"{_fmt(led.eps_label)},{led.m_t[i]},{_fmt(led.sup_error[i])},{_fmt(led.bound_rhs[i])}"
        for i in range(len(led))
    ]


def run_experiment(cfg: ExperimentConfig, quiet: bool = False) -> dict:
    """One run per configured seed; writes curve CSV, optional ledger CSV, sidecar."""
    if cfg.algo == "fqi":
        return _run_fqi_experiment(cfg)
    out_dir = os.path.dirname(cfg.output_path)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    results = {}
    curve = [CURVE_HEADER]
    ledger_rows = [LEDGER_HEADER]
    for seed in cfg.seeds:
        result = run_seed(cfg, seed)
        results[seed] = result
        curve.extend(curve_lines(seed, result))
        ledger_rows.extend(ledger_lines(seed, result))
        if not quiet:
            tail = summarize_result(cfg, result)
            print(f"seed {seed}: episodes={len(result.rows)} final_mean={tail:.3f} "
                  f"switch_step={result.switch_step}")
    with open(cfg.output_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(curve) + "\n")
    write_sidecar(cfg, sidecar_path(cfg.output_path))
    if cfg.ledger and len(ledger_rows) > 1:
        with open(ledger_path(cfg.output_path), "w", encoding="utf-8") as fh:
            fh.write("\n".join(ledger_rows) + "\n")
    return results


def _run_fqi_experiment(cfg: ExperimentConfig) -> dict:
    out_dir = os.path.dirname(cfg.output_path)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
    results = {}
    lines = [CURVE_HEADER]
    for seed in cfg.seeds:
        dataset = collect_dataset(cfg, seed)
        res = baseline_fqi(cfg, dataset, seed)
        results[seed] = res
        for i, ret in enumerate(res.eval_returns, 1):
            lines.append(f"{seed},{i},{res.dataset_size + i},{_fmt(ret)},eval")
    with open(cfg.output_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    write_sidecar(cfg, sidecar_path(cfg.output_path))
    return results


def sidecar_path(output_path: str) -> str:
    root, _ = os.path.splitext(output_path)
    return root + ".config"


def ledger_path(output_path: str) -> str:
    root, _ = os.path.splitext(output_path)
    return root + "_ledger.csv"


def summarize_result(cfg: ExperimentConfig, result: engine.RunResult) -> float:
    """Mean return over the final window of episodes (NaN when empty)."""
    rets = [row.ret for row in result.rows[-cfg.final_window:]]
    return float(np.mean(rets)) if rets else float("nan")


def final_means(cfg: ExperimentConfig, results: dict) -> dict:
    return {seed: summarize_result(cfg, res) for seed, res in results.items()}


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------

def sweep(cfg: ExperimentConfig, param: str, values: Sequence[int],
          quiet: bool = False) -> dict:
    """Repeat the experiment across values of T0 or the context size.

    T0 sweeps force fixed-step switching so the sweep value alone moves the
    handoff; everything else is held constant. Outputs are tagged by value.
    """
    if param not in ("t0", "context_k"):
        raise ValueError("sweep param must be t0 or context_k")
    if not values:
        raise ValueError("sweep needs at least one value")
    root, ext = os.path.splitext(cfg.output_path)
    out = {}
    for value in values:
        if param == "t0":
            arm = replace(cfg, gate=replace(cfg.gate, T0=int(value), adaptive=False))
        else:
            arm = replace(cfg, context_k=int(value))
        arm = replace(arm, output_path=f"{root}_{param}_{value}{ext or '.csv'}")
        out[int(value)] = run_experiment(arm, quiet=quiet)
        if not quiet:
            means = final_means(arm, out[int(value)])
            print(f"{param}={value}: mean final return {np.mean(list(means.values())):.3f}")
    return out


# ---------------------------------------------------------------------------
# pooled-context generalization across initial conditions
# ---------------------------------------------------------------------------

@dataclass
class TrainedCondition:
    condition: int
    transitions: list   # greedy trajectory, labels from the trained table
    q_table: np.ndarray


def _train_condition_agent(cfg: ExperimentConfig, env, condition: int, rng,
                           steps: int, alpha: float = 0.2) -> TrainedCondition:
    """Single-table learner restricted to one reset condition, then its greedy pass."""
    Q = np.zeros((env.n_states, env.n_actions))
    state = env.reset(condition)
    for t in range(steps):
        eps = max(0.05, 1.0 - t / (0.8 * steps))
        if rng.random() < eps:
            action = int(rng.integers(env.n_actions))
        else:
            action = int(np.argmax(Q[state.discrete_index]))
        nxt, reward, done = env.step(state, action)
        terminal = done and env.is_terminal(nxt)
        boot = 0.0 if terminal else cfg.gamma * np.max(Q[nxt.discrete_index])
        s = state.discrete_index
        Q[s, action] = (1 - alpha) * Q[s, action] + alpha * (reward + boot)
        state = env.reset(condition) if done else nxt
    # greedy rollout with per-state label vectors, tagged by the condition
    transitions = []
    state = env.reset(condition)
    done = False
    t = 0
    while not done and t < env.horizon:
        t += 1
        action = int(np.argmax(Q[state.discrete_index]))
        nxt, reward, done = env.step(state, action)
        terminal = done and env.is_terminal(nxt)
        transitions.append(
            make_transition(env, state, action, reward, nxt, Q[state.discrete_index],
                            t, 0, terminal, include_initial_tag=True)
        )
        state = nxt
    return TrainedCondition(condition, transitions, Q)


def cross_seed_generalization(
    cfg: ExperimentConfig,
    n_train_conditions: int = 50,
    context_counts: Sequence[int] = (5, 40),
    n_test_conditions: int = 5,
    repetitions: int = 5,
    train_steps: int = 15000,
    seed: int = 0,
    knn_k: int = 1,
) -> List[dict]:
    """Pool per-condition experience into one context; score held-out resets.

    Agents are trained independently, one per sampled initial condition.
    For each repetition and context size, the greedy in-context policy is
    evaluated on conditions absent from the context; returns are reported
    raw and affinely normalized by the environment's return range. The
    nearest-neighbor count defaults to 1: held-out queries never match a
    context row exactly, and winner-take-all lookups keep the sharp
    value cliffs (pickup/dropoff) from being averaged away.
    """
    if min(context_counts) < 1:
        raise ValueError("context condition counts must be >= 1")
    env = make_env(cfg.env_id, seed=seed, slippery=cfg.slippery)
    if env.n_states is None:
        raise ValueError("generalization study needs a discrete environment")
    all_conditions = env.initial_conditions()
    if n_train_conditions + n_test_conditions > len(all_conditions):
        raise ValueError("not enough distinct initial conditions")
    rng = np.random.default_rng(np.random.PCG64(np.random.SeedSequence(seed)))
    train_conditions = [int(c) for c in
                        rng.choice(all_conditions, size=n_train_conditions, replace=False)]
    agents = [
        _train_condition_agent(cfg, env, c, rng, train_steps) for c in train_conditions
    ]
    knn = KnnRegressor(knn_k)
    lo, hi = return_bounds(cfg, env)
    rows = []
    for rep in range(repetitions):
        for n_ctx in context_counts:
            chosen = rng.choice(len(agents), size=min(n_ctx, len(agents)), replace=False)
            pool = []
            chosen_conditions = set()
            for i in chosen:
                pool.extend(agents[int(i)].transitions)
                chosen_conditions.add(agents[int(i)].condition)
            context = context_from_transitions(pool)
            remaining = [c for c in all_conditions if c not in chosen_conditions]
            test_conditions = rng.choice(remaining, size=n_test_conditions, replace=False)
            rets = [
                _greedy_context_return(env, knn, context, int(c)) for c in test_conditions
            ]
            mean_ret = float(np.mean(rets))
            rows.append({
                "repetition": rep,
                "n_context": int(n_ctx),
                "mean_return": mean_ret,
                "mean_return_norm": (mean_ret - lo) / (hi - lo),
            })
    return rows


def _greedy_context_return(env, regressor, context, condition: int) -> float:
    state = env.reset(condition)
    total, done = 0.0, False
    n_comp = len(env.state_components(state))
    while not done:
        base = np.array([state_features(env, state, include_initial_tag=True)])
        queries = np.vstack([
            insert_action_column(base, n_comp, np.array([float(a)]))
            for a in range(env.n_actions)
        ])
        action = int(np.argmax(regressor.predict(context, queries)))
        state, r, done = env.step(state, action)
        total += r
    return total


def seen_unseen_comparison(
    cfg: ExperimentConfig,
    n_conditions: int = 12,
    n_context: int = 6,
    eval_per_condition: int = 4,
    train_steps: int = 15000,
    seed: int = 0,
    knn_k: int = 1,
) -> tuple:
    """Mean held-in vs held-out return of one pooled context.

    Conditions whose trajectories are in the context ("seen") are each
    evaluated alongside an equal number of excluded ones; returns the pair
    (seen_mean, unseen_mean) over >= 20 evaluations per side when the
    counts allow. Seen conditions tend to score at least as well.
    """
    env = make_env(cfg.env_id, seed=seed, slippery=cfg.slippery)
    rng = np.random.default_rng(np.random.PCG64(np.random.SeedSequence(seed)))
    conditions = [int(c) for c in rng.choice(env.initial_conditions(),
                                             size=n_conditions, replace=False)]
    agents = [_train_condition_agent(cfg, env, c, rng, train_steps) for c in conditions]
    chosen = list(range(n_context))
    pool = []
    for i in chosen:
        pool.extend(agents[i].transitions)
    context = context_from_transitions(pool)
    knn = KnnRegressor(knn_k)
    seen, unseen = [], []
    for _ in range(eval_per_condition):
        for i, agent in enumerate(agents):
            ret = _greedy_context_return(env, knn, context, agent.condition)
            (seen if i in chosen else unseen).append(ret)
    return float(np.mean(seen)), float(np.mean(unseen))


def return_bounds(cfg: ExperimentConfig, env) -> tuple:
    """Documented worst/best episode returns used for [0, 1] normalization."""
    lo_step, hi_step = env.reward_range
    bounds = {
        "cliffwalking": (lo_step * env.horizon, -13.0),
        "frozenlake4": (0.0, 1.0),
        "frozenlake8": (0.0, 1.0),
        "taxi": (lo_step * env.horizon, 20.0 - 8.0),
        "cartpole": (0.0, float(env.horizon)),
        "twostate": (0.0, float(env.horizon)),
    }
    return bounds.get(cfg.env_id, (lo_step * env.horizon, hi_step * env.horizon))


def optimal_greedy_return(cfg: ExperimentConfig, eval_episodes: int = 1,
                          seed: int = 123) -> float:
    """Roll out the greedy policy of the exact raw-reward solution."""
    env = make_env(cfg.env_id, seed=seed, slippery=cfg.slippery)
    model = env.enumerate_model(cfg.gamma)
    q_star = value_iteration(raw_reward_model(model), tol=1e-10)
    totals = []
    for _ in range(eval_episodes):
        state = env.reset()
        total, done = 0.0, False
        while not done:
            state, r, done = env.step(state, int(np.argmax(q_star[state.discrete_index])))
            total += r
        totals.append(total)
    return float(np.mean(totals))
