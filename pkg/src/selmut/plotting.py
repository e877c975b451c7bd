"""Deterministic SVG figures."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import matplotlib
from matplotlib.backends.backend_svg import FigureCanvasSVG
from matplotlib.figure import Figure

_RC = {"svg.hashsalt": "selmut", "svg.fonttype": "path", "font.family": "DejaVu Sans"}
_STYLES = {
    "points": dict(linestyle="none", marker="o"),
    "line": dict(linestyle="-", marker="none"),
    "markers+line": dict(linestyle="-", marker="o"),
    "dashed": dict(linestyle="--", marker="none"),
}


@dataclass
class Series:
    x: np.ndarray
    y: np.ndarray
    label: str = ""
    style: str = "markers+line"


def emit_svg_plot(series, path, xlabel="", ylabel="", title="", loglog=False, annotation=None):
    """Draw one or more series into a self-contained SVG file."""
    if isinstance(series, Series):
        series = [series]
    series = list(series or [])
    if not series or any(len(s.x) == 0 for s in series):
        raise ValueError("refusing to plot an empty series")
    with matplotlib.rc_context(_RC):
        fig = Figure(figsize=(5.0, 3.6))
        FigureCanvasSVG(fig)
        ax = fig.add_subplot(1, 1, 1)
        for s in series:
            if s.style not in _STYLES:
                raise ValueError(f"unknown series style {s.style!r}")
            ax.plot(np.asarray(s.x, float), np.asarray(s.y, float), label=s.label or None, **_STYLES[s.style])
        if loglog:
            ax.set_xscale("log")
            ax.set_yscale("log")
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        if title:
            ax.set_title(title)
        if annotation:
            ax.text(0.04, 0.92, annotation, transform=ax.transAxes)
        if any(s.label for s in series):
            ax.legend(loc="lower right")
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
    return path


def order_plot(points, fit, path, quantity):
    """Errors against eps on log-log axes with the fitted power law dashed."""
    eps = np.array([e for e, _ in points])
    err = np.array([v for _, v in points])
    keep = err > 0
    series = [Series(eps[keep], err[keep], "measured", "points")]
    note = None
    if np.isfinite(fit.order):
        xs = np.array([eps.min(), eps.max()])
        series.append(Series(xs, np.exp(fit.intercept) * xs**fit.order, "fit", "dashed"))
        note = f"slope {fit.order:.2f}"
    return emit_svg_plot(series, path, "eps", f"error ({quantity})", quantity, loglog=True, annotation=note)
