"""Figure rendering for the report path.

Figures are drawn on standalone ``Figure`` objects with the Agg canvas, so
nothing touches pyplot's global state and no display is needed.
"""

from __future__ import annotations

import os
from collections import defaultdict

import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

NS_PER_MS = 1e6
NS2_PER_US2 = 1e6


def _new_axes(figsize=(6.0, 4.5)):
    fig = Figure(figsize=figsize, dpi=100)
    FigureCanvasAgg(fig)
    ax = fig.add_subplot(111)
    ax.grid(True, alpha=0.3)
    return fig, ax


def _save(fig, path) -> str:
    fig.tight_layout()
    fig.savefig(path)
    return path


def plot_delay_series(run, path) -> str:
    """True one-way delays on both paths and the shared segment, per sample."""
    fig, ax = _new_axes((7.0, 4.0))
    for pair, t in sorted(run.truth.items()):
        k = np.asarray(t.seq)
        ax.plot(k, np.asarray(t.d_a) / NS_PER_MS, lw=0.6, label=f"path {pair[0]}")
        ax.plot(k, np.asarray(t.d_b) / NS_PER_MS, lw=0.6, label=f"path {pair[1]}")
        ax.plot(k, np.asarray(t.shared) / NS_PER_MS, lw=0.6, label="shared")
        break  # one pair keeps the plot readable
    ax.set_xlabel("serial k")
    ax.set_ylabel("one-way delay (ms)")
    ax.legend(loc="upper right", fontsize=8)
    return _save(fig, path)


def plot_cov_vs_truth(rows, path) -> str:
    """Estimated covariance against directly measured shared-path variance."""
    fig, ax = _new_axes((5.0, 5.0))
    pts = [r for r in rows if r.ok and r.true_shared_var_ns2]
    if pts:
        x = np.array([r.true_shared_var_ns2 for r in pts]) / NS2_PER_US2
        y = np.array([r.dce_cov_ns2 for r in pts]) / NS2_PER_US2
        by_size = defaultdict(list)
        for i, r in enumerate(pts):
            by_size[r.packet_size].append(i)
        for size, idx in sorted(by_size.items()):
            ax.scatter(x[idx], y[idx], s=14, label=f"{size} B")
        lo = min(x.min(), y[y > 0].min() if (y > 0).any() else x.min())
        hi = max(x.max(), y.max())
        ax.plot([lo, hi], [lo, hi], "k--", lw=0.8)
        if lo > 0:
            ax.set_xscale("log")
            ax.set_yscale("log")
        ax.legend(fontsize=8, title="packet size")
    ax.set_xlabel("shared-path delay variance (us^2)")
    ax.set_ylabel("estimated covariance (us^2)")
    return _save(fig, path)


def plot_error_vs_load(rows, path) -> str:
    fig, ax = _new_axes()
    series = defaultdict(list)
    for r in rows:
        if r.ok and r.rel_error is not None:
            series[r.packet_size].append((r.bg_rate_MBps, r.rel_error))
    for size, pts in sorted(series.items()):
        pts.sort()
        rates = [p[0] for p in pts]
        errs = [100 * p[1] for p in pts]
        ax.plot(rates, errs, marker="o", ms=3, label=f"{size} B")
    ax.set_xlabel("background traffic (MBps)")
    ax.set_ylabel("relative error (%)")
    if series:
        ax.legend(fontsize=8, title="packet size")
    return _save(fig, path)


def render_report(rows, outdir, run=None) -> list:
    """Write fig6.png and fig7.png (and fig5.png when a run is given)."""
    os.makedirs(outdir, exist_ok=True)
    out = [
        plot_cov_vs_truth(rows, os.path.join(outdir, "fig6.png")),
        plot_error_vs_load(rows, os.path.join(outdir, "fig7.png")),
    ]
    if run is not None:
        out.append(plot_delay_series(run, os.path.join(outdir, "fig5.png")))
    return out
