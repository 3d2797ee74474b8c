"""Matplotlib rendering for metric series, run comparisons and beam patterns.

Figures are written straight to files (Agg backend).  SVG output keeps text
as ``<text>`` elements and uses a fixed hash salt with no date stamp, so the
same data always renders to the same bytes.
"""

from __future__ import annotations

import os
from contextlib import contextmanager
from typing import Mapping

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["style", "plot_series", "plot_comparison", "plot_beam_patterns", "save"]

_RC = {
    "font.size": 10,
    "axes.linewidth": 1.0,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.xmargin": 0,
    "lines.linewidth": 1.4,
    "legend.frameon": False,
    "figure.figsize": (6.4, 4.0),
    "figure.dpi": 100,
    "svg.fonttype": "none",
    "svg.hashsalt": "fairis",
    "axes.prop_cycle": plt.cycler(color=["#3498db", "#e74c3c", "#2ecc71", "#9b59b6",
                                         "#34495e", "#f39c12", "#1abc9c", "#7f8c8d"]),
}

_LABELS = {
    "buffer_mean_reward": "mean reward in replay buffer",
    "reward_baseline": "baseline reward (sum rate, bps/Hz)",
    "reward_qos": "QoS reward",
    "reward_fqos": "FQoS reward",
    "mean_jfi": "mean Jain fairness index",
    "jfi_at_best": "JFI at best decisive reward",
}


@contextmanager
def style():
    with matplotlib.rc_context(_RC):
        yield


def save(fig, path: str | os.PathLike) -> None:
    ext = os.path.splitext(os.fspath(path))[1].lower()
    metadata = {"Date": None} if ext == ".svg" else ({"Software": None} if ext == ".png" else None)
    fig.savefig(path, metadata=metadata, bbox_inches="tight")
    plt.close(fig)


def plot_series(series, path: str | os.PathLike) -> None:
    """Raw values (faint) and their rolling mean for one metric series."""
    with style():
        fig, ax = plt.subplots()
        ax.plot(series.x, series.raw, alpha=0.3, label="raw")
        ax.plot(series.x, series.smoothed(), label=f"rolling mean ({series.window or 1})")
        ax.set_xlabel(series.x_unit)
        ax.set_ylabel(_LABELS.get(series.name, series.name))
        ax.legend()
        save(fig, path)


def plot_comparison(metric: str, curves: Mapping[str, tuple[np.ndarray, np.ndarray]],
                    x_unit: str, path: str | os.PathLike) -> None:
    """One smoothed curve per run label."""
    with style():
        fig, ax = plt.subplots()
        for label, (x, y) in curves.items():
            ax.plot(x, y, label=label)
        ax.set_xlabel(x_unit)
        ax.set_ylabel(_LABELS.get(metric, metric))
        ax.set_title(metric)
        ax.legend(fontsize=8)
        save(fig, path)


def plot_beam_patterns(angles: np.ndarray, patterns: Mapping[str, np.ndarray],
                       path: str | os.PathLike, markers: Mapping[str, float] | None = None) -> None:
    """Polar plot of normalised power patterns; ``markers`` draws reference bearings."""
    with style():
        fig = plt.figure(figsize=(5.5, 5.5))
        ax = fig.add_subplot(projection="polar")
        for label, p in patterns.items():
            p = np.asarray(p, dtype=float)
            peak = p.max()
            ax.plot(angles, p / peak if peak > 0 else p, label=label)
        for label, angle in (markers or {}).items():
            ax.plot([angle, angle], [0, 1], linestyle="--", linewidth=1.0, label=label)
        ax.set_theta_zero_location("N")
        ax.legend(loc="lower left", bbox_to_anchor=(0.0, -0.15), fontsize=8)
        save(fig, path)
