"""Command-line entry points: run, sweep, verify, oracle, plot, bridge-check.

Exit codes: 0 success, 1 validation error (bad config/arguments), 2 runtime
failure.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .bridge_client import BridgeClient, BridgeError
from .config import ConfigError, load_config
from .envs import EnvError, make_env
from .harness import run_experiment, sweep
from .oracle import raw_reward_model, value_iteration
from .plots import emit_plots


def _overrides(pairs) -> dict:
    out = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise ConfigError({pair: "override must look like key=value"})
        key, value = pair.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def cmd_run(args) -> int:
    cfg = load_config(args.config, _overrides(args.override))
    run_experiment(cfg)
    print(f"wrote {cfg.output_path}")
    return 0


def cmd_sweep(args) -> int:
    cfg = load_config(args.config, _overrides(args.override))
    param = {"t0": "t0", "k": "context_k"}[args.param]
    values = [int(v) for v in args.values.split(",") if v.strip()]
    sweep(cfg, param, values)
    return 0


def cmd_verify(_args) -> int:
    from .verify import run_all

    return 0 if run_all() else 2


def cmd_oracle(args) -> int:
    env = make_env(args.env, seed=0, slippery=args.slippery)
    model = env.enumerate_model(args.gamma)
    q_star = value_iteration(raw_reward_model(model), tol=1e-10)
    print("state,action,q_value")
    for s in range(model.n_states):
        for a in range(model.n_actions):
            print(f"{s},{a},{q_star[s, a]!r}")
    state = env.reset()
    total, done = 0.0, False
    while not done:
        state, r, done = env.step(state, int(np.argmax(q_star[state.discrete_index])))
        total += r
    print(f"# greedy_return_from_start={total!r}", file=sys.stderr)
    return 0


def cmd_plot(args) -> int:
    emit_plots(args.infile, args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_bridge_check(args) -> int:
    """PING, then an echo-context round trip: a context row must echo its label."""
    client = BridgeClient(args.endpoint)
    try:
        client.ping()
        features = np.array([[0.0, 1.0, 2.0], [3.0, 4.0, 5.0], [1.5, -2.0, 0.5]])
        labels = np.array([10.0, -3.25, 0.7])
        client.set_context(features, labels)
        replies = client.query(features)
        if not np.allclose(replies, labels, atol=1e-9):
            print(f"echo mismatch: sent {labels.tolist()}, got {replies.tolist()}",
                  file=sys.stderr)
            return 2
    finally:
        client.close()
    print("bridge ok")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tabql", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment from a config file")
    p_run.add_argument("--config", default=None)
    p_run.add_argument("--override", action="append", metavar="KEY=VALUE")
    p_run.set_defaults(fn=cmd_run)

    p_sweep = sub.add_parser("sweep", help="repeat an experiment across parameter values")
    p_sweep.add_argument("--param", choices=("t0", "k"), required=True)
    p_sweep.add_argument("--values", required=True, help="comma-separated integers")
    p_sweep.add_argument("--config", default=None)
    p_sweep.add_argument("--override", action="append", metavar="KEY=VALUE")
    p_sweep.set_defaults(fn=cmd_sweep)

    p_verify = sub.add_parser("verify", help="run the numeric verification suite")
    p_verify.set_defaults(fn=cmd_verify)

    p_oracle = sub.add_parser("oracle", help="print the exact action-value table")
    p_oracle.add_argument("--env", required=True)
    p_oracle.add_argument("--gamma", type=float, default=0.99)
    p_oracle.add_argument("--slippery", action="store_true")
    p_oracle.set_defaults(fn=cmd_oracle)

    p_plot = sub.add_parser("plot", help="render curve CSVs as a band plot")
    p_plot.add_argument("--in", dest="infile", action="append", required=True)
    p_plot.add_argument("--out", required=True)
    p_plot.set_defaults(fn=cmd_plot)

    p_bridge = sub.add_parser("bridge-check", help="ping an inference bridge and echo-test it")
    p_bridge.add_argument("--endpoint", required=True)
    p_bridge.set_defaults(fn=cmd_bridge_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, EnvError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return 1
    except BridgeError as exc:
        print(f"bridge failure: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failures map to exit code 2
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
