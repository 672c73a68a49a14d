#!/usr/bin/env python3
"""Context-size study: sweep the context window on one environment.

    python scripts/run_k_sweep.py [--env cliffwalking] [--values 200,1000,2000]
"""

import argparse
import os

import numpy as np

from tabql.config import load_config
from tabql.harness import final_means, sweep
from tabql.plots import emit_plots


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--env", default="cliffwalking")
    ap.add_argument("--values", default="200,1000,2000")
    ap.add_argument("--out", default="results")
    ap.add_argument("--seeds", default="0,1,2,3,4")
    args = ap.parse_args()
    os.makedirs(args.out, exist_ok=True)

    cfg = load_config(overrides={
        "env": args.env, "algo": "tabql", "seeds": args.seeds,
        "output": os.path.join(args.out, f"{args.env}_ksweep.csv"),
    })
    values = [int(v) for v in args.values.split(",")]
    results = sweep(cfg, "context_k", values, quiet=True)
    curve_files = []
    for value in values:
        means = final_means(cfg, results[value])
        print(f"K={value:>5}: mean final return {np.mean(list(means.values())):7.3f}  {means}")
        curve_files.append(os.path.join(args.out, f"{args.env}_ksweep_context_k_{value}.csv"))
    fig = os.path.join(args.out, f"{args.env}_ksweep.png")
    emit_plots(curve_files, fig)
    print(f"figure: {fig}")


if __name__ == "__main__":
    main()
