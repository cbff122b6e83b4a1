"""Static plot outputs for benchmark reports."""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def plot_stage_errors(report: dict, out_path) -> None:
    """Mean error per stage (converged subset), log scale, one line per metric."""
    agg = report["aggregates"].get("converged") or report["aggregates"].get("all", {})
    stages = [s for s in ("initial", "iclk", "feature_align", "pose_opt", "structure") if s in agg]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for metric, label in (
        ("e_pixel", "pixel error [px]"),
        ("e_transl", "translation error [m]"),
        ("e_rot", "rotation error [rad]"),
        ("epe_3d", "3D end-point error [m]"),
    ):
        vals = [agg[s][metric]["mean"] for s in stages]
        ax.plot(stages, vals, marker="o", label=label)
    ax.set_yscale("log")
    ax.set_ylabel("mean error (converged pairs)")
    ax.grid(True, which="both", alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)


def plot_residual_history(report: dict, out_path, max_pairs: int = 20) -> None:
    """Per-iteration weighted cost for the first pairs, concatenated over levels."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for pair in report["pairs"][:max_pairs]:
        costs = [c for level in pair["residual_history"] for c in level]
        if costs:
            ax.plot(np.arange(len(costs)), costs, alpha=0.6, linewidth=1.0)
    ax.set_yscale("log")
    ax.set_xlabel("iteration (levels concatenated, coarse to fine)")
    ax.set_ylabel("weighted mean squared residual")
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)


def plot_report_file(report_path, out_dir) -> list:
    """Write the standard plot set for a report.json; returns created paths."""
    report = json.loads(Path(report_path).read_text())
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / "stage_errors.svg", out / "stage_errors.png"]
    for p in paths:
        plot_stage_errors(report, p)
    hist = [out / "residual_history.svg", out / "residual_history.png"]
    for p in hist:
        plot_residual_history(report, p)
    return paths + hist
