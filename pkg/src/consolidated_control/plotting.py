"""Static SVG figures from trace files.

Figures are drawn with the object-oriented matplotlib API (no pyplot state)
and saved with a fixed hash salt and no date stamp, so identical inputs give
identical bytes.
"""
from __future__ import annotations

from pathlib import Path
from typing import Dict, List, Optional, Sequence

import matplotlib
import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from .constraints import Consolidation, alpha_many
from .sim import SimulationTrace

KINDS = ("alpha_timeline", "xy_snapshots")
DEFAULT_SNAPSHOTS = (0.0, 3.0, 10.0)


class PlotUsageError(ValueError):
    """Unknown plot kind or a plot that does not apply to the trace."""


def _save(fig: Figure, out) -> Path:
    out = Path(out)
    FigureCanvasAgg(fig)
    with matplotlib.rc_context({"svg.hashsalt": "consolidated-control", "svg.fonttype": "path"}):
        fig.savefig(out, format="svg", metadata={"Date": None})
    return out


def alpha_timeline(trace: SimulationTrace, out, oracle: Optional[Dict[str, np.ndarray]] = None
                   ) -> List[str]:
    """alpha with the bound, the nominal bound, the estimate and alpha* when available.

    Returns the labels of the drawn curves.
    """
    fig = Figure(figsize=(7.0, 3.5))
    ax = fig.add_subplot(1, 1, 1)
    t = trace.times
    drawn = []
    for col, label, style in (("alpha", "alpha", "-"), ("rho_alpha", "rho_alpha", "--"),
                              ("varrho", "varrho", ":"), ("alpha_hat", "alpha_hat", "-.")):
        if trace.has(col):
            ax.plot(t, trace[col], style, lw=1.2, label=label)
            drawn.append(label)
    if oracle is not None:
        ax.plot(oracle["t"], oracle["alpha_star"], "k-", lw=0.8, label="alpha_star")
        drawn.append("alpha_star")
    ax.axhline(0.0, color="0.6", lw=0.6)
    ax.set_xlabel("t [s]")
    ax.set_ylabel("consolidated metric")
    ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    _save(fig, out)
    return drawn


def _plot_box(trace: SimulationTrace, box) -> np.ndarray:
    if box is not None:
        return np.asarray(box, dtype=float)
    X = np.stack([trace["x1_1"], trace["x1_2"]])
    lo, hi = X.min(axis=1), X.max(axis=1)
    pad = 0.2 * np.maximum(hi - lo, 1.0)
    return np.stack([lo - pad, hi + pad], axis=1)


def xy_snapshots(trace: SimulationTrace, cons: Consolidation, out,
                 times: Sequence[float] = DEFAULT_SNAPSHOTS, box=None,
                 resolution: int = 161) -> int:
    """One panel per time: the x1 path so far and the zero level set of alpha.

    Requires a two-dimensional ``x1``. Returns the number of panels.
    """
    if cons.set.n != 2:
        raise PlotUsageError(f"xy_snapshots needs n = 2, got n = {cons.set.n}")
    if len(trace) == 0:
        raise PlotUsageError("trace is empty")
    t = trace.times
    times = [float(s) for s in times if t[0] <= s <= t[-1]]
    if not times:
        raise PlotUsageError("no snapshot time lies inside the trace")
    box = _plot_box(trace, box)
    xs = np.linspace(box[0, 0], box[0, 1], resolution)
    ys = np.linspace(box[1, 0], box[1, 1], resolution)
    XX, YY = np.meshgrid(xs, ys)
    pts = np.stack([XX.ravel(), YY.ravel()])
    fig = Figure(figsize=(3.2 * len(times), 3.4))
    for k, s in enumerate(times):
        ax = fig.add_subplot(1, len(times), k + 1)
        A = alpha_many(cons, s, pts).reshape(XX.shape)
        if A.min() < 0.0 < A.max():
            ax.contour(XX, YY, A, levels=[0.0], colors="tab:blue", linewidths=1.0)
            ax.contourf(XX, YY, A, levels=[0.0, max(A.max(), 1e-9)], colors=["tab:blue"],
                        alpha=0.15)
        upto = t <= s
        ax.plot(trace["x1_1"][upto], trace["x1_2"][upto], "k-", lw=0.8)
        i = int(np.count_nonzero(upto)) - 1
        ax.plot(trace["x1_1"][i], trace["x1_2"][i], "ro", ms=3)
        ax.set_xlim(box[0])
        ax.set_ylim(box[1])
        ax.set_aspect("equal")
        ax.set_title(f"t = {s:g} s", fontsize=9)
    fig.tight_layout()
    _save(fig, out)
    return len(times)


def emit_plot(trace: SimulationTrace, kind: str, out, oracle=None, cons=None, times=None,
              box=None):
    """Dispatch on ``kind``; ``cons`` is required for ``xy_snapshots``."""
    if kind == "alpha_timeline":
        return alpha_timeline(trace, out, oracle)
    if kind == "xy_snapshots":
        if cons is None:
            raise PlotUsageError("xy_snapshots needs the constraint set of the run")
        return xy_snapshots(trace, cons, out, DEFAULT_SNAPSHOTS if times is None else times,
                            box)
    raise PlotUsageError(f"unknown plot kind {kind!r}; expected one of {', '.join(KINDS)}")
