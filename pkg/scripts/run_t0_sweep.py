#!/usr/bin/env python3
"""Switch-step threshold study: sweep the warm-up length on one environment.

Reproduces the qualitative threshold: switching with an uninformative
context locks in poor returns, while any adequate warm-up length performs
equivalently well.

    python scripts/run_t0_sweep.py [--env frozenlake4] [--values 100,5000,30000]
"""

import argparse
import os

import numpy as np

from tabql.config import load_config
from tabql.harness import final_means, sweep
from tabql.plots import emit_plots


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--env", default="frozenlake4")
    ap.add_argument("--values", default="100,5000,30000")
    ap.add_argument("--out", default="results")
    ap.add_argument("--seeds", default="0,1,2,3,4")
    args = ap.parse_args()
    os.makedirs(args.out, exist_ok=True)

    cfg = load_config(overrides={
        "env": args.env, "algo": "tabql", "seeds": args.seeds,
        "output": os.path.join(args.out, f"{args.env}_t0sweep.csv"),
    })
    values = [int(v) for v in args.values.split(",")]
    results = sweep(cfg, "t0", values, quiet=True)
    curve_files = []
    for value in values:
        arm_cfg = load_config(overrides={"env": args.env})  # for final_window only
        means = final_means(arm_cfg, results[value])
        print(f"T0={value:>6}: mean final return {np.mean(list(means.values())):7.3f}  {means}")
        curve_files.append(os.path.join(args.out, f"{args.env}_t0sweep_t0_{value}.csv"))
    fig = os.path.join(args.out, f"{args.env}_t0sweep.png")
    emit_plots(curve_files, fig)
    print(f"figure: {fig}")


if __name__ == "__main__":
    main()
