"""Figure rendering for runs and sweeps.

Figures are written next to the delimited outputs: an energy-budget and
diagnostics page per run, a final-fields page, and a monitor-spread page
per sweep.  Rendering is headless (Agg) and purely derived from data the
CSV/JSON outputs already contain.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def _row_series(rows, name):
    return np.array([getattr(r, name) for r in rows], dtype=float)


def render_run_report(path, rows, e0, verdicts):
    """Energy budget, slack, dissipation, and mass drift for one run."""
    t = _row_series(rows, "t")
    fig, axes = plt.subplots(2, 2, figsize=(11, 7.5))

    ax = axes[0, 0]
    energy = _row_series(rows, "E")
    budget = e0 + np.cumsum(_row_series(rows, "w_ext"))
    spent = energy + _row_series(rows, "J_cum") + np.cumsum(
        _row_series(rows, "d_ch") + _row_series(rows, "d_dam")
    )
    ax.plot(t, budget, label="E(0) + work", lw=1.8)
    ax.plot(t, spent, label="E + J + dissipation", lw=1.8)
    ax.plot(t, energy, label="E", ls="--", lw=1.2)
    ax.set_xlabel("t")
    ax.set_ylabel("energy")
    ax.set_title("energy budget")
    ax.legend(fontsize=8)

    ax = axes[0, 1]
    slack = _row_series(rows, "slack")
    ax.plot(t, slack, lw=1.5, color="tab:green")
    ax.axhline(0.0, color="k", lw=0.8)
    ax.set_xlabel("t")
    ax.set_ylabel("slack")
    ax.set_title("inequality slack (must stay above -tol)")

    ax = axes[1, 0]
    ax.semilogy(t, np.maximum(_row_series(rows, "d_ch"), 1e-300), label="d_ch")
    ax.semilogy(t, np.maximum(_row_series(rows, "d_dam"), 1e-300), label="d_dam")
    ax.set_xlabel("t")
    ax.set_ylabel("increment")
    ax.set_title("dissipation per step")
    ax.legend(fontsize=8)

    ax = axes[1, 1]
    mass = _row_series(rows, "mass")
    ax.plot(t, mass - mass[0], lw=1.5, color="tab:red")
    ax.set_xlabel("t")
    ax.set_ylabel("mass drift")
    ax.set_title("conservation")

    status = "pass" if verdicts.get("overall") else "FAIL"
    fig.suptitle(f"run report ({status})")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def _node_image(grid, values):
    return values.reshape(grid.ny + 1, grid.nx + 1)


def render_fields(path, state):
    """Heatmaps of the final concentration, damage, potential, and |u|."""
    grid = state.c.grid
    extent = (0.0, grid.lx, 0.0, grid.ly)
    u_mag = np.hypot(state.u.values[:, 0], state.u.values[:, 1])
    u_mag = np.where(np.isfinite(u_mag), u_mag, 0.0)
    panels = [
        ("c", state.c.values, "coolwarm"),
        ("z", state.z.values, "viridis"),
        ("mu", state.mu.values, "coolwarm"),
        ("|u|", u_mag, "magma"),
    ]
    fig, axes = plt.subplots(2, 2, figsize=(10, 8.5))
    for ax, (name, vals, cmap) in zip(axes.ravel(), panels):
        im = ax.imshow(
            _node_image(grid, vals), origin="lower", extent=extent, cmap=cmap
        )
        ax.set_title(name)
        fig.colorbar(im, ax=ax, shrink=0.85)
    fig.suptitle(f"fields at t = {state.t:g}")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def render_sweep(path, report):
    """Seven a-priori monitors against epsilon, with the spread ratios."""
    names = type(report).MONITOR_NAMES
    fig, (ax, ax2) = plt.subplots(
        1, 2, figsize=(11, 4.5), gridspec_kw={"width_ratios": [3, 2]}
    )
    for i, name in enumerate(names):
        eps, vals = [], []
        for entry in report.entries:
            if entry["monitors"] is not None:
                eps.append(entry["epsilon"])
                vals.append(max(entry["monitors"][i], 1e-300))
        if eps:
            ax.loglog(eps, vals, "o-", label=name, lw=1.2, ms=4)
    ax.set_xlabel("epsilon")
    ax.set_ylabel("monitor")
    ax.invert_xaxis()
    ax.set_title("a-priori monitors across the sweep")
    ax.legend(fontsize=7)

    ax2.axis("off")
    lines = ["spread (max/min):"]
    for name in names:
        ratio = report.spread.get(name)
        lines.append(f"{name}: {ratio:.4g}" if ratio is not None else f"{name}: n/a")
    failed = [e["epsilon"] for e in report.entries if e["error"] is not None]
    if failed:
        lines.append("")
        lines.append(f"failed runs: {failed}")
    ax2.text(0.0, 0.95, "\n".join(lines), va="top", family="monospace", fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
