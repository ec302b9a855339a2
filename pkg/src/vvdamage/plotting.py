"""Report figures rendered to files with the Agg backend."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .stepper import Trajectory  # noqa: E402

_REGIME_COLORS = {"stuck": "0.6", "rate_independent": "tab:blue", "jump": "tab:red"}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_energetics(traj: Trajectory, path) -> Path:
    """Energy, cumulative dissipation and stability margin over time."""
    t = np.asarray(traj.times)
    E = traj.energies()
    diss = np.concatenate([[0.0], np.cumsum([r.r1_dissipation + r.visc_dissipation for r in traj.records])])
    fig, (a, b) = plt.subplots(2, 1, figsize=(6, 6), sharex=True)
    a.plot(t, E, label="reduced energy")
    a.plot(t, diss, label="dissipated")
    a.plot(t, E + diss, "--", label="sum")
    a.set_ylabel("energy")
    a.legend()
    b.semilogy(t, np.maximum(traj.d2_series(), 1e-16), label="d2 margin")
    rates = np.concatenate([[0.0], [r.rate_norm for r in traj.records]])
    b.semilogy(t, np.maximum(rates, 1e-16), label="||rate||")
    b.set_xlabel("t")
    b.legend()
    return _save(fig, path)


def plot_damage(traj: Trajectory, path, n_curves: int = 6) -> Path:
    """Damage profiles (1D) or the final damage field (2D)."""
    grid = traj.grid
    fig, ax = plt.subplots(figsize=(6, 4))
    if grid.dim == 1:
        x = grid.node_coordinate(0)
        order = np.argsort(x)
        ks = np.unique(np.linspace(0, len(traj.states) - 1, n_curves).round().astype(int))
        for k in ks:
            ax.plot(x[order], traj.states[k][order], label=f"t = {traj.times[k]:.3g}")
        ax.set_xlabel("x")
        ax.set_ylabel("z")
        ax.legend(fontsize="small")
    else:
        tri = ax.tripcolor(grid.vertices[:, 0], grid.vertices[:, 1], grid.elements, traj.states[-1],
                           shading="gouraud")
        fig.colorbar(tri, ax=ax, label="z")
        ax.set_aspect("equal")
        ax.set_title(f"z at t = {traj.times[-1]:.3g}")
    return _save(fig, path)


def plot_tau_study(taus, distances, path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 4))
    d = np.asarray(distances, dtype=float)
    h = np.asarray(taus[: len(d)], dtype=float)
    ax.loglog(h, np.maximum(d, 1e-300), "o-", label="successive distance")
    if len(d) and d[0] > 0:
        ax.loglog(h, d[0] * h / h[0], "k:", label="first order")
    ax.set_xlabel("tau")
    ax.set_ylabel("distance")
    ax.legend()
    return _save(fig, path)


def plot_sweep(report, path) -> Path:
    """Reparameterized time against normalized arclength, one curve per eps."""
    fig, (a, b) = plt.subplots(1, 2, figsize=(10, 4))
    for lv in report.levels:
        if lv.ptraj is None:
            continue
        p = lv.ptraj
        a.plot(p.s / p.S, p.t, label=f"eps = {lv.eps:.3g}")
    a.set_xlabel("s / S")
    a.set_ylabel("t")
    a.legend(fontsize="small")
    last = next((lv for lv in reversed(report.levels) if lv.ptraj is not None), None)
    if last is not None:
        p = last.ptraj
        for j in range(p.n_segments):
            b.plot([p.s[j], p.s[j + 1]], [p.t[j], p.t[j + 1]], color=_REGIME_COLORS.get(p.regimes[j], "k"))
        b.set_title(f"regimes at eps = {last.eps:.3g}")
        b.set_xlabel("s")
        b.set_ylabel("t")
    return _save(fig, path)
