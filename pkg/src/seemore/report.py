"""Figure rendering for run and sweep reports.

Figures are written next to the CSV tables with the same stem. The Agg
backend is forced so reports work on headless machines.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import RunMetrics  # noqa: E402

_MODE_COLOURS = {"lion": "#c0392b", "dog": "#2471a3", "peacock": "#1e8449"}


def _style(ax) -> None:
    ax.spines["top"].set_visible(False)
    ax.spines["right"].set_visible(False)
    ax.grid(alpha=0.3, linewidth=0.6)


def render_run(metrics: RunMetrics, stem: str | Path) -> list[Path]:
    """Latency CDF and per-type message counts for a single run."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    written = []

    fig, ax = plt.subplots(figsize=(5, 3.5))
    for mode in sorted({s.mode for s in metrics.samples}):
        values = np.sort(np.asarray(metrics.latencies(mode), dtype=float))
        frac = np.arange(1, len(values) + 1) / len(values)
        ax.step(values, frac, where="post", label=mode, color=_MODE_COLOURS.get(mode))
    if metrics.samples:
        ax.legend(frameon=False)
    ax.set_xlabel("latency (simulated time units)")
    ax.set_ylabel("fraction of requests")
    ax.set_title("client-observed latency")
    _style(ax)
    fig.tight_layout()
    path = stem.with_name(stem.name + "_latency.png")
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)

    kinds = sorted({kind for kind, _ in metrics.counters})
    modes = sorted({mode for _, mode in metrics.counters})
    fig, ax = plt.subplots(figsize=(6, 3.5))
    width = 0.8 / max(1, len(modes))
    x = np.arange(len(kinds))
    for i, mode in enumerate(modes):
        counts = [metrics.counters.get((kind, mode), 0) for kind in kinds]
        ax.bar(x + i * width, counts, width, label=mode, color=_MODE_COLOURS.get(mode))
    ax.set_xticks(x + width * (len(modes) - 1) / 2 if modes else x)
    ax.set_xticklabels(kinds, rotation=30, ha="right")
    ax.set_ylabel("messages sent")
    if modes:
        ax.legend(frameon=False)
    _style(ax)
    fig.tight_layout()
    path = stem.with_name(stem.name + "_messages.png")
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)
    return written


def render_sweep(rows: list[dict], stem: str | Path) -> list[Path]:
    """Latency against throughput, one series per mode, one point per (cell, seed)."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for mode in sorted({row["mode"] for row in rows}):
        picked = [row for row in rows if row["mode"] == mode]
        ax.scatter(
            [row["throughput"] for row in picked],
            [row["mean_latency"] for row in picked],
            s=14,
            label=mode,
            color=_MODE_COLOURS.get(mode),
        )
    if rows:
        ax.legend(frameon=False)
    ax.set_xlabel("throughput (requests per time unit)")
    ax.set_ylabel("mean latency (time units)")
    _style(ax)
    fig.tight_layout()
    path = stem.with_name(stem.name + "_sweep.png")
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return [path]
