"""PNG figures for a finished run.

Figures are built on bare ``Figure`` objects with the Agg canvas, so nothing
touches pyplot's global state and no display is needed.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

FONT_SIZE = 9


def _new_figure(nrows: int, ncols: int, size) -> tuple[Figure, np.ndarray]:
    fig = Figure(figsize=size, layout="constrained")
    FigureCanvasAgg(fig)
    axes = np.atleast_1d(fig.subplots(nrows, ncols, squeeze=False)).ravel()
    for ax in axes:
        for key in ("top", "right"):
            ax.spines[key].set_visible(False)
        ax.tick_params(labelsize=FONT_SIZE)
    return fig, axes


def _save(fig: Figure, path: Path) -> Path:
    fig.savefig(path, dpi=120)
    return path


def plot_monitors(rows: list[dict], path) -> Path:
    """Drift, stability margin, kinetic energy and the fourth triple-bar norm."""
    t = np.array([r["t"] for r in rows])
    fig, axes = _new_figure(2, 2, (8.0, 5.5))

    ax = axes[0]
    drift = np.array([r["drift_max"] for r in rows])
    ax.semilogy(t, np.maximum(drift, 1e-300), color="C0")
    ax.set_title("max | |x'| - 1 |", fontsize=9)

    ax = axes[1]
    ax.plot(t, [r["min_tau_over_s"] for r in rows], color="C1", label="min tau/s")
    lower = np.array([r["sc1_lower"] for r in rows])
    ax.plot(t, np.where(lower >= 0, lower, np.nan), "--", color="C2", label="lower bound")
    ax.axhline(0.0, color="0.6", lw=0.8)
    ax.legend(frameon=False, fontsize=8)
    ax.set_title("stability margin", fontsize=9)

    ax = axes[2]
    ax.plot(t, [r["kinetic"] for r in rows], color="C3")
    ax.set_title("kinetic energy", fontsize=9)

    ax = axes[3]
    ax.plot(t, [r["triplebar4"] for r in rows], color="C4")
    ax.set_title("triple-bar norm, m=4", fontsize=9)

    for ax in axes[2:]:
        ax.set_xlabel("t")
    return _save(fig, Path(path))


def _plane(x: np.ndarray) -> tuple[int, int]:
    """The two coordinates along which the trajectory moves the most."""
    spread = np.ptp(x.reshape(-1, 3), axis=0)
    i, j = np.argsort(spread)[::-1][:2]
    return int(min(i, j)), int(max(i, j))


def plot_snapshots(times, positions, path, max_curves: int = 12) -> Path:
    """String shapes at a subset of the samples, projected to a plane."""
    positions = np.asarray(positions)
    i, j = _plane(positions)
    pick = np.unique(np.linspace(0, len(times) - 1, min(max_curves, len(times))).astype(int))
    fig, axes = _new_figure(1, 1, (5.0, 5.0))
    ax = axes[0]
    colours = [str(c) for c in np.linspace(0.8, 0.0, len(pick))]
    for k, c in zip(pick, colours):
        ax.plot(positions[k, :, i], positions[k, :, j], color=c, lw=1.0)
    ax.plot(positions[pick[-1], 0, i], positions[pick[-1], 0, j], "o", color="C3", ms=4)
    ax.set_aspect("equal", adjustable="datalim")
    ax.set_xlabel(f"x{i + 1}")
    ax.set_ylabel(f"x{j + 1}")
    ax.set_title(f"shapes, t = {times[pick[0]]:.3g} .. {times[pick[-1]]:.3g}", fontsize=9)
    return _save(fig, Path(path))


def plot_tension(times, s, taus, path, max_curves: int = 8) -> Path:
    """tau/s along the string; positivity of this ratio is the hyperbolicity margin."""
    s = np.asarray(s)
    taus = np.asarray(taus)
    pick = np.unique(np.linspace(0, len(times) - 1, min(max_curves, len(times))).astype(int))
    fig, axes = _new_figure(1, 2, (8.0, 3.2))
    for k in pick:
        label = f"t={times[k]:.3g}"
        axes[0].plot(s, taus[k], lw=1.0, label=label)
        axes[1].plot(s[1:], taus[k, 1:] / s[1:], lw=1.0)
    axes[0].set_title("tau", fontsize=9)
    axes[1].set_title("tau / s", fontsize=9)
    axes[0].legend(frameon=False, fontsize=7)
    for ax in axes:
        ax.set_xlabel("s")
    return _save(fig, Path(path))
