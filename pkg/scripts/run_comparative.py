#!/usr/bin/env python3
"""Comparative study on one environment: TabQL vs tabular Q, DQN, and FQI.

Writes one curve CSV per online algorithm, an FQI evaluation CSV, and a
combined band plot. Usage:

    python scripts/run_comparative.py [--env cliffwalking] [--out results/]
"""

import argparse
import os

import numpy as np

from tabql.config import load_config
from tabql.harness import final_means, run_experiment
from tabql.plots import emit_plots


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--env", default="cliffwalking")
    ap.add_argument("--out", default="results")
    ap.add_argument("--seeds", default="0,1,2,3,4")
    args = ap.parse_args()
    os.makedirs(args.out, exist_ok=True)

    curves = []
    for algo in ("tabql", "dqn", "tabular_q"):
        out = os.path.join(args.out, f"{args.env}_{algo}.csv")
        cfg = load_config(overrides={
            "env": args.env, "algo": algo, "seeds": args.seeds, "output": out,
        })
        results = run_experiment(cfg, quiet=True)
        means = final_means(cfg, results)
        print(f"{algo:>10}: final-window mean {np.mean(list(means.values())):8.2f}  {means}")
        curves.append(out)

    fqi_out = os.path.join(args.out, f"{args.env}_fqi.csv")
    fqi_cfg = load_config(overrides={
        "env": args.env, "algo": "fqi", "seeds": args.seeds, "output": fqi_out,
    })
    fqi = run_experiment(fqi_cfg, quiet=True)
    evals = [np.mean(r.eval_returns) for r in fqi.values()]
    print(f"{'fqi':>10}: greedy evaluation mean {np.mean(evals):8.2f} (batch, no curve)")

    fig = os.path.join(args.out, f"{args.env}_comparative.png")
    emit_plots(curves, fig)
    print(f"figure: {fig}")


if __name__ == "__main__":
    main()
