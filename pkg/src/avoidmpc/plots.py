"""SVG figures for a closed-loop run."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.patches import Rectangle  # noqa: E402


def _time(res):
    return np.arange(len(res.records)) * res.scenario.Ts


def _stack(recs, attr):
    return np.array([getattr(r, attr) for r in recs])


def plot_trajectory(res, ax=None):
    """Path in the plane of the first two outputs, artificial outputs dashed."""
    sc = res.scenario
    phys = res.physical
    y, ya = _stack(phys, "y"), _stack(phys, "y_a")
    ax = ax or plt.figure(figsize=(6, 5)).gca()
    if y.shape[1] < 2:
        ax.plot(_time(res), y[:, 0], label="y")
        ax.plot(_time(res), ya[:, 0], "--", label="y_a")
        ax.set_xlabel("time [s]")
        ax.legend()
        return ax
    if sc.world is not None:
        for b in sc.world.obstacles:
            ax.add_patch(Rectangle(b.lower[:2], *(b.upper[:2] - b.lower[:2]),
                                   color="0.6", alpha=0.7))
    elif sc.static_regions:
        lo = np.minimum(y.min(0), ya.min(0))[:2] - 1.0
        hi = np.maximum(y.max(0), ya.max(0))[:2] + 1.0
        g0, g1 = np.meshgrid(np.linspace(lo[0], hi[0], 200), np.linspace(lo[1], hi[1], 200))
        for reg in sc.static_regions:
            phi = np.zeros_like(g0)
            for idx in np.ndindex(g0.shape):
                pt = np.zeros(sc.model.p)
                pt[:2] = (g0[idx], g1[idx])
                phi[idx] = reg.residual(pt - sc.y_eq)[0]
            ax.contourf(g0, g1, phi > 0, levels=[0.5, 1.5], colors=["0.8"])
    ax.plot(y[:, 0], y[:, 1], label="output")
    ax.plot(ya[:, 0], ya[:, 1], "--", label="artificial output")
    targets = np.array([t for _, t in sc.targets])
    ax.plot(targets[:, 0], targets[:, 1], "k*", ms=12, label="target")
    ax.plot(y[0, 0], y[0, 1], "ko", label="start")
    ax.set_aspect("equal", adjustable="datalim")
    ax.set_xlabel("y1")
    ax.set_ylabel("y2")
    ax.legend(loc="best", fontsize=8)
    return ax


def plot_error(res, ax=None):
    phys = res.physical
    e = _stack(phys, "y") - _stack(phys, "y_t")
    ax = ax or plt.figure(figsize=(7, 4)).gca()
    t = _time(res)
    for i in range(e.shape[1]):
        ax.plot(t, np.abs(e[:, i]), label=f"|e{i + 1}|")
    ax.plot(t, np.linalg.norm(e, axis=1), "k", lw=1.5, label="|y - y_t|")
    ax.set_xlabel("time [s]")
    ax.set_ylabel("output error")
    ax.legend(fontsize=8)
    return ax


def plot_inputs(res, ax=None):
    u = _stack(res.physical, "u")
    ax = ax or plt.figure(figsize=(7, 4)).gca()
    t = _time(res)
    for i in range(u.shape[1]):
        ax.step(t, u[:, i], where="post", label=f"u{i + 1}")
    ax.set_xlabel("time [s]")
    ax.set_ylabel("input")
    ax.legend(fontsize=8)
    return ax


def plot_artificial(res, ax=None):
    phys = res.physical
    y, ya = _stack(phys, "y"), _stack(phys, "y_a")
    ax = ax or plt.figure(figsize=(7, 4)).gca()
    t = _time(res)
    for i in range(y.shape[1]):
        line, = ax.plot(t, y[:, i], label=f"y{i + 1}")
        ax.plot(t, ya[:, i], "--", color=line.get_color())
    ax.set_xlabel("time [s]")
    ax.set_ylabel("output (dashed: artificial)")
    ax.legend(fontsize=8)
    return ax


def plot_regions(res, ax=None):
    recs = res.records
    ax = ax or plt.figure(figsize=(7, 4)).gca()
    t = _time(res)
    ax.step(t, _stack(recs, "n_regions"), where="post", color="k")
    ax.set_xlabel("time [s]")
    ax.set_ylabel("regions to avoid")
    ax2 = ax.twinx()
    ax2.plot(t, _stack(recs, "V_av"), color="tab:red", alpha=0.7)
    ax2.set_ylabel("avoidance cost", color="tab:red")
    return ax


FIGURES = {"trajectory": plot_trajectory, "error": plot_error, "inputs": plot_inputs,
           "artificial": plot_artificial, "regions": plot_regions}


def write_plots(res, out) -> list:
    """Write one SVG per figure into ``out``; returns the paths."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, fn in FIGURES.items():
        ax = fn(res)
        fig = ax.figure
        ax.set_title(f"{res.scenario.name}: {name}")
        fig.tight_layout()
        path = out / f"{name}.svg"
        fig.savefig(path)
        plt.close(fig)
        paths.append(path)
    return paths
