"""Figure builders for the experiment CSVs.

A figure spec is a JSON object:

    {
      "kind":   "rcs" | "convergence" | "iterations" | "condition" |
                "delta",
      "csv":    "path/to/data.csv",
      "output": "figure.png",
      "column": "energy_error",          # convergence only, optional
      "guides": ["h^1", "h^1.25"],       # optional, kind defaults apply
      "title":  "..."                    # optional
    }

Guides: ``h^p`` draws a power law anchored at the first data point;
``log`` draws a least-squares fit of a*ln(h) + b to the data;
``log:a,b`` draws that logarithm with explicit constants.  Log-log
figures annotate the fitted slope of each data series to two decimals.
"""

import csv
import math
import os
import re

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


class PlotError(Exception):
    pass


KINDS = ("rcs", "convergence", "iterations", "condition", "delta")

DEFAULT_GUIDES = {
    "convergence": ["h^1", "h^1.25"],
    "iterations": ["h^-1", "h^-2", "log"],
}


def load_csv(path):
    """Read a provenance-header CSV into a dict of column -> raw strings."""
    try:
        with open(path) as f:
            lines = [ln for ln in f if not ln.startswith("#")]
    except OSError as exc:
        raise PlotError(f"cannot read CSV '{path}': {exc}")
    rows = list(csv.reader(lines))
    rows = [r for r in rows if r]
    if not rows:
        raise PlotError(f"CSV '{path}' has no header")
    header, data = rows[0], rows[1:]
    if not data:
        raise PlotError(f"CSV '{path}' has no data rows")
    return {name: [row[i] if i < len(row) else ""
                   for row in data]
            for i, name in enumerate(header)}


def numeric_columns(data, names, path):
    """Extract named columns as float arrays, dropping rows where any of
    them is not numeric (failed runs leave fields empty)."""
    for name in names:
        if name not in data:
            raise PlotError(f"CSV '{path}' is missing column '{name}'")
    cols = []
    nrows = len(data[names[0]])
    keep = []
    for i in range(nrows):
        try:
            keep.append([float(data[n][i]) for n in names])
        except ValueError:
            continue
    if not keep:
        raise PlotError(f"CSV '{path}' has no usable rows for columns "
                        f"{list(names)}")
    arr = np.array(keep)
    return [arr[:, j] for j in range(len(names))]


def fit_slope(x, y):
    """Least-squares slope of log y against log x."""
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


_POWER = re.compile(r"^h\^(-?\d+(?:\.\d+)?)$")
_LOG = re.compile(r"^log(?::(-?\d+(?:\.\d+)?),(-?\d+(?:\.\d+)?))?$")


def _draw_guide(ax, guide, x, y):
    xs = np.linspace(x.min(), x.max(), 50)
    m = _POWER.match(guide)
    if m:
        p = float(m.group(1))
        scale = y[0] / x[0] ** p
        ax.plot(xs, scale * xs ** p, "--", color="gray", lw=0.8,
                label=guide)
        return
    m = _LOG.match(guide)
    if m:
        if m.group(1) is not None:
            a, b = float(m.group(1)), float(m.group(2))
        else:
            a, b = np.polyfit(np.log(x), y, 1)
        ax.plot(xs, a * np.log(xs) + b, ":", color="gray", lw=0.8,
                label=f"{a:.3g}*ln(h)+{b:.3g}")
        return
    raise PlotError(f"unknown guide '{guide}' (use h^p, log or log:a,b)")


def _annotate_slopes(ax, series):
    lines = [f"slope {fit_slope(x, y):.2f} ({label})"
             for label, x, y in series]
    ax.text(0.02, 0.02, "\n".join(lines), transform=ax.transAxes,
            fontsize=8, va="bottom")


def _fig_rcs(spec, data, path):
    theta, solver, mie = numeric_columns(
        data, ("theta_deg", "rcs_solver", "rcs_mie"), path)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    eps = 1e-300
    ax.plot(theta, 10 * np.log10(np.maximum(solver, eps)), label="solver")
    ax.plot(theta, 10 * np.log10(np.maximum(mie, eps)), "--",
            label="Mie series")
    ax.set_xlabel("angle [deg]")
    ax.set_ylabel("bistatic RCS [dBsm]")
    ax.legend()
    return fig


def _x_column(data):
    # sweep CSVs carry both the requested h and the realised (grid
    # quantised) h_actual; fits and axes use the realised one
    return "h_actual" if "h_actual" in data else "h"


def _fig_convergence(spec, data, path):
    column = spec.get("column", "energy_error")
    h, err = numeric_columns(data, (_x_column(data), column), path)
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    ax.loglog(h, err, "o-", label=column)
    for guide in spec.get("guides", DEFAULT_GUIDES["convergence"]):
        _draw_guide(ax, guide, h, err)
    _annotate_slopes(ax, [(column, h, err)])
    ax.set_xlabel("mesh size h [m]")
    ax.set_ylabel(column)
    ax.legend(fontsize=8)
    return fig


def _fig_iterations(spec, data, path):
    h, it_cl, it_ql = numeric_columns(
        data, (_x_column(data), "it_classic", "it_ql"), path)
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    ax.loglog(h, it_cl, "s-", label="classic")
    ax.loglog(h, it_ql, "o-", label="quasi-local")
    for guide in spec.get("guides", DEFAULT_GUIDES["iterations"]):
        # power guides follow the classic curve, log guides the QL curve
        ref = (h, it_cl) if _POWER.match(guide) else (h, it_ql)
        _draw_guide(ax, guide, *ref)
    _annotate_slopes(ax, [("classic", h, it_cl),
                          ("quasi-local", h, it_ql)])
    ax.set_xlabel("mesh size h [m]")
    ax.set_ylabel("GMRES iterations")
    ax.legend(fontsize=8)
    return fig


def _fig_condition(spec, data, path):
    cols = ["kappa0", "cond_ql"]
    if "cond_classic_preconditioned" in data:
        cols.append("cond_classic_preconditioned")
    parts = numeric_columns(data, tuple(cols), path)
    kappa, series = parts[0], parts[1:]
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    labels = ["quasi-local", "classic (shifted-wavenumber prec.)"]
    for y, label in zip(series, labels):
        ax.semilogy(kappa, y, "o-", ms=3, label=label)
    ax.set_xlabel("background wavenumber [1/m]")
    ax.set_ylabel("condition number")
    ax.legend(fontsize=8)
    return fig


def _fig_delta(spec, data, path):
    delta, its, nnz = numeric_columns(
        data, ("delta", "iterations", "nnz_per_column"), path)
    fig, ax = plt.subplots(figsize=(4.5, 3.5))
    ax.semilogx(delta, its, "o-", color="tab:blue", label="iterations")
    ax.set_xlabel("regulariser length delta [m]")
    ax.set_ylabel("GMRES iterations", color="tab:blue")
    ax2 = ax.twinx()
    ax2.semilogx(delta, nnz, "s--", color="tab:red",
                 label="nnz per column")
    ax2.set_ylabel("regulariser nnz per column", color="tab:red")
    return fig


_BUILDERS = {"rcs": _fig_rcs, "convergence": _fig_convergence,
             "iterations": _fig_iterations, "condition": _fig_condition,
             "delta": _fig_delta}


def build(spec: dict):
    """Build the matplotlib figure for a spec (without saving)."""
    kind = spec.get("kind")
    if kind not in KINDS:
        raise PlotError(f"unknown figure kind '{kind}' (choose from "
                        f"{', '.join(KINDS)})")
    path = spec.get("csv")
    if not path:
        raise PlotError("spec is missing 'csv'")
    data = load_csv(path)
    fig = _BUILDERS[kind](spec, data, path)
    if spec.get("title"):
        fig.axes[0].set_title(spec["title"])
    fig.tight_layout()
    return fig


def render(spec: dict) -> str:
    """Build and save the figure; returns the output path."""
    out = spec.get("output")
    if not out:
        raise PlotError("spec is missing 'output'")
    fig = build(spec)
    try:
        fig.savefig(out, dpi=150)
    finally:
        plt.close(fig)
    if not os.path.exists(out) or os.path.getsize(out) == 0:
        raise PlotError(f"failed to write '{out}'")
    return out
