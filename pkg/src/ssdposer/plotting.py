"""Report figures written to PNG files next to the CSV outputs."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .bench import Timing  # noqa: E402
from .metrics import COLUMNS, MetricReport  # noqa: E402


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def plot_training_log(records, path: str | Path) -> Path:
    """Total loss and its components against iteration, log scale."""
    it = [r.iteration for r in records]
    fig, ax = plt.subplots(figsize=(6, 4))
    for name in ("total", "l_rot", "l_ori", "l_pos"):
        ax.plot(it, [getattr(r, name) for r in records], label=name)
    ax.set_yscale("log")
    ax.set_xlabel("iteration")
    ax.set_ylabel("loss")
    ax.legend()
    ax.grid(alpha=0.3)
    return _save(fig, path)


def plot_metrics(rows: Sequence[tuple[str, MetricReport]], path: str | Path) -> Path:
    """One bar group per metric column, one bar per row label."""
    fig, ax = plt.subplots(figsize=(8, 4))
    x = np.arange(len(COLUMNS))
    width = 0.8 / max(len(rows), 1)
    for k, (label, rep) in enumerate(rows):
        ax.bar(x + k * width, rep.values(), width, label=label)
    ax.set_xticks(x + 0.4 - width / 2, COLUMNS, rotation=30, ha="right")
    ax.set_ylabel("error (deg, cm, cm/s, 10^2 m/s^3)")
    if len(rows) <= 10:
        ax.legend(fontsize="small")
    return _save(fig, path)


def plot_scaling(timings: Sequence[Timing], fits: dict[str, float], path: str | Path) -> Path:
    """Log-log wall time against sequence length per evaluation path."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for p in dict.fromkeys(t.path for t in timings):
        rows = [t for t in timings if t.path == p]
        label = f"{p} (slope {fits[p]:.2f})" if p in fits else p
        ax.loglog([t.T for t in rows], [t.wall_time_ns / 1e9 for t in rows], "o-", label=label)
    ax.set_xlabel("sequence length T")
    ax.set_ylabel("wall time (s)")
    ax.legend()
    ax.grid(alpha=0.3, which="both")
    return _save(fig, path)
