"""Figure rendering for the report paths (PNG files next to the CSV output)."""

from __future__ import annotations

import math

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .immersion import TOPOLOGY_AXISYM  # noqa: E402


def _finite(x, y):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    ok = np.isfinite(x) & np.isfinite(y)
    return x[ok], y[ok]


def render_trace(trace, path, rescale_samples=None):
    """Flow diagnostics vs time: curvature, volume, pinching, residuals."""
    t = trace.column("t")
    fig, axes = plt.subplots(2, 2, figsize=(9, 6.5))
    ax = axes[0, 0]
    for name, label in (("A2_max", "max |A|^2"), ("H2_max", "max |H|^2")):
        xs, ys = _finite(t, trace.column(name))
        if len(xs):
            ax.semilogy(xs, ys, label=label)
    ax.set_xlabel("t")
    ax.legend(fontsize=8)
    ax.set_title("curvature growth")

    ax = axes[0, 1]
    xs, ys = _finite(t, trace.column("volume"))
    ax.plot(xs, ys, color="tab:green")
    ax.set_xlabel("t")
    ax.set_title("volume")

    ax = axes[1, 0]
    xs, ys = _finite(t, trace.column("Q_max"))
    ax.plot(xs, ys, color="tab:red", label="max Q")
    ax.axhline(0.0, color="k", lw=0.6)
    xs, ys = _finite(t, trace.column("Aring2_max"))
    if len(xs):
        ax.plot(xs, ys, color="tab:purple", label="max |Aring|^2")
    ax.set_xlabel("t")
    ax.legend(fontsize=8)
    ax.set_title("pinching")

    ax = axes[1, 1]
    for name in ("res_dmu", "res_H2", "res_A2"):
        xs, ys = _finite(t, trace.column(name))
        if len(xs):
            ax.semilogy(xs, ys, label=name)
    ax.set_xlabel("t")
    ax.legend(fontsize=8)
    ax.set_title("evolution residuals")
    fig.suptitle(f"flow trace (status: {trace.status})", fontsize=11)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_roundness(samples, path):
    """Rescaled-run diagnostics vs rescaled time."""
    tt = np.array([s.t_tilde for s in samples])
    fig, axes = plt.subplots(1, 3, figsize=(11, 3.4))
    a0 = np.array([s.Aring2_tilde_max for s in samples])
    xs, ys = _finite(tt, a0)
    axes[0].semilogy(xs, np.maximum(ys, 1e-18))
    axes[0].set_xlabel("t~")
    axes[0].set_title("max |Aring~|^2")
    vol = np.array([s.vol_tilde for s in samples])
    axes[1].plot(*_finite(tt, vol / vol[0]))
    axes[1].set_xlabel("t~")
    axes[1].set_title("Vol~ / Vol~(0)")
    ratio = np.array([s.H_ratio for s in samples])
    axes[2].plot(*_finite(tt, ratio))
    axes[2].axhline(1.0, color="k", lw=0.6)
    axes[2].set_xlabel("t~")
    axes[2].set_title("|H~| max/min ratio")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_fields(imm, fields, path):
    """Per-node diagnostic fields (profile curves or torus heat maps)."""
    names = list(fields)
    if imm.grid.topology == TOPOLOGY_AXISYM:
        u = imm.node_params()[:, 0]
        fig, ax = plt.subplots(figsize=(7, 4))
        for name in names:
            vals = np.asarray(fields[name], dtype=float)
            if np.all(~np.isfinite(vals)):
                continue
            ax.plot(u, vals, label=name)
        ax.set_xlabel("profile parameter u")
        ax.legend(fontsize=8)
    else:
        nu, nv = imm.grid.sizes
        cols = min(3, len(names))
        rows = math.ceil(len(names) / cols)
        fig, axes = plt.subplots(rows, cols, figsize=(3.4 * cols, 2.8 * rows),
                                 squeeze=False)
        for k, name in enumerate(names):
            ax = axes[k // cols][k % cols]
            img = ax.imshow(np.asarray(fields[name]).reshape(nu, nv).T,
                            origin="lower", aspect="auto")
            fig.colorbar(img, ax=ax, shrink=0.85)
            ax.set_title(name, fontsize=9)
        for k in range(len(names), rows * cols):
            axes[k // cols][k % cols].axis("off")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_orders(levels, path):
    """Residual vs grid size on log-log axes, one curve per residual kind."""
    fig, ax = plt.subplots(figsize=(6, 4.2))
    for name, pts in levels.items():
        sizes = np.array([p[0] for p in pts], dtype=float)
        vals = np.array([p[1] for p in pts], dtype=float)
        ok = np.isfinite(vals) & (vals > 0)
        if not np.any(ok):
            continue
        ax.loglog(sizes[ok], vals[ok], "o-", label=name)
    ax.set_xlabel("grid size")
    ax.set_ylabel("residual")
    ax.legend(fontsize=8)
    ax.set_title("refinement study")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def render_audit(rows, path):
    """Histogram of audit margins per inequality."""
    names = sorted({r.name for r in rows})
    cols = min(3, len(names))
    rows_n = math.ceil(len(names) / cols)
    fig, axes = plt.subplots(rows_n, cols, figsize=(3.6 * cols, 2.6 * rows_n),
                             squeeze=False)
    for k, name in enumerate(names):
        ax = axes[k // cols][k % cols]
        vals = np.array([r.margin for r in rows if r.name == name])
        vals = vals[np.isfinite(vals)]
        if len(vals):
            ax.hist(vals, bins=40, color="tab:blue")
        ax.set_title(name, fontsize=9)
        ax.axvline(0.0, color="k", lw=0.7)
    for k in range(len(names), rows_n * cols):
        axes[k // cols][k % cols].axis("off")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
