"""Render training curves from one or more metrics files to image files."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from glove.harness import StepMetrics, iter_runs, read_metrics  # noqa: E402

PANELS = [
    ("usage", "resource usage ratio", 1.0),
    ("power_w", "mean power (W)", 1.0),
    ("subarrays", "mean sub-arrays", 1.0),
    ("latency_s", "latency (ms)", 1e3),
    ("loss", "lost packets", 1.0),
    ("wall_ms", "step time (ms)", 1.0),
]


def moving_average(x: np.ndarray, window: int) -> np.ndarray:
    if window <= 1 or len(x) < window:
        return x
    kernel = np.ones(window) / window
    head = np.cumsum(x[: window - 1]) / np.arange(1, window)
    return np.concatenate([head, np.convolve(x, kernel, mode="valid")])


def plot_runs(records: list[StepMetrics], out_dir, window: int = 10, fmt: str = "png") -> list[Path]:
    """One figure per metric with a line per run id. Returns the written paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    runs = list(iter_runs(records))
    written = []
    for field, label, scale in PANELS:
        fig, ax = plt.subplots(figsize=(5, 3.2))
        for run_id, rows in runs:
            steps = np.array([m.step for m in rows])
            y = np.array([getattr(m, field) for m in rows], dtype=float) * scale
            ax.plot(steps, moving_average(y, window), lw=1.2, label=run_id)
        ax.set_xlabel("training step")
        ax.set_ylabel(label)
        ax.grid(alpha=0.3)
        if len(runs) > 1:
            ax.legend(fontsize=7, frameon=False)
        fig.tight_layout()
        path = out_dir / f"{field}.{fmt}"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)
    return written


def render(metric_files, out_dir, window: int = 10) -> list[Path]:
    records: list[StepMetrics] = []
    for f in metric_files:
        records.extend(read_metrics(f))
    return plot_runs(records, out_dir, window)
