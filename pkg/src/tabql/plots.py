"""Render learning-curve CSVs as mean +- std band figures."""

from __future__ import annotations

import os
from typing import List, Optional, Sequence

import numpy as np

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def read_curve(path: str) -> dict:
    """Parse a curve CSV into {seed: (steps, returns, phases)}."""
    out: dict = {}
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "seed,episode,end_step,return,phase":
            raise ValueError(f"unexpected header {header!r} in {path}")
        for line in fh:
            seed_s, _episode, end_step, ret, phase = line.strip().split(",")
            out.setdefault(int(seed_s), ([], [], []))
            steps, rets, phases = out[int(seed_s)]
            steps.append(int(end_step))
            rets.append(float(ret))
            phases.append(phase)
    return out


def _band(curves: dict, grid: np.ndarray) -> tuple:
    """Step-interpolate each seed's returns onto the grid, then aggregate."""
    per_seed = []
    for steps, rets, _ in curves.values():
        idx = np.searchsorted(steps, grid, side="left")
        idx = np.clip(idx, 0, len(rets) - 1)
        per_seed.append(np.asarray(rets)[idx])
    stack = np.vstack(per_seed)
    return stack.mean(axis=0), stack.std(axis=0)


def switch_steps(curves: dict) -> List[int]:
    out = []
    for steps, _, phases in curves.values():
        for s, p in zip(steps, phases):
            if p == "icl":
                out.append(s)
                break
    return out


def emit_plots(curve_paths: Sequence[str], out_path: str,
               labels: Optional[Sequence[str]] = None, n_points: int = 200) -> str:
    """One figure: a mean +- std band per input CSV, switch step marked."""
    if not curve_paths:
        raise ValueError("no curve files given")
    fig, ax = plt.subplots(figsize=(8, 5))
    labels = labels or [os.path.splitext(os.path.basename(p))[0] for p in curve_paths]
    for path, label in zip(curve_paths, labels):
        curves = read_curve(path)
        if not curves:
            continue
        last = max(max(steps) for steps, _, _ in curves.values())
        first = min(steps[0] for steps, _, _ in curves.values())
        grid = np.linspace(first, last, n_points)
        mean, std = _band(curves, grid)
        (line,) = ax.plot(grid, mean, label=label)
        ax.fill_between(grid, mean - std, mean + std, alpha=0.2, color=line.get_color())
        marks = switch_steps(curves)
        if marks:
            ax.axvline(float(np.mean(marks)), color=line.get_color(), linestyle=":", alpha=0.7)
    ax.set_xlabel("environment steps")
    ax.set_ylabel("episode return")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path
