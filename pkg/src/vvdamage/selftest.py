"""Quick property checks against independent oracles.

Each check returns ``(name, passed, detail)``; :func:`run_all` collects them.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from .config import RunConfig
from .energy import ReducedEnergy
from .grid import assemble_Aq_residual, interval, l2_norm
from .material import conj_r_eps, d2_distance
from .stepper import run
from .vanishing import change_of_variables_defect, reparameterize
from .diagnostics import local_stability_margin


def _homogeneous():
    cfg = RunConfig.from_preset("homogeneous")
    grid = cfg.grid()
    energy = ReducedEnergy(grid, cfg.model(), cfg.loads())
    return cfg, grid, energy, run(energy, cfg.solver(), cfg.z0(grid))


def check_scalar_recursion(rng):
    cfg, grid, _, traj = _homogeneous()
    eps, tau, kappa = traj.config.eps, traj.config.tau, cfg["material"]["kappa"]
    z, err = cfg["initial"]["value"], 0.0
    for k in range(traj.config.n_steps):
        z = (eps * z + tau * kappa) / (eps + 2 * tau)
        err = max(err, float(np.max(np.abs(traj.states[k + 1] - z))))
    return "scalar recursion", err <= 1e-8, f"max error {err:.2e}"


def check_l2_norm(rng):
    grid = interval(3.0, 7)
    val = l2_norm(grid, np.full(grid.n_nodes, 2.0))
    return "l2 norm of 2 on (0,3)", abs(val - 2 * math.sqrt(3)) <= 1e-12, f"{val:.15f}"


def _brute_d2(mass, xi, kappa):
    """Minimum of sum m (xi - mu)^2 over mu >= -kappa by enumerating active sets."""
    best = math.inf
    for active in itertools.product([False, True], repeat=xi.size):
        act = np.array(active)
        if np.any(xi[~act] < -kappa):
            continue
        mu = np.where(act, -kappa, xi)
        best = min(best, float(np.dot(mass, (xi - mu) ** 2)))
    return math.sqrt(best)


def check_d2_oracle(rng):
    worst = 0.0
    for _ in range(20):
        n = int(rng.integers(1, 5))
        grid = interval(float(rng.uniform(0.5, 2.0)), n)
        xi = rng.normal(0.0, 2.0, grid.n_nodes)
        kappa, eps = float(rng.uniform(0.1, 2.0)), float(rng.uniform(0.1, 2.0))
        ref = _brute_d2(grid.lumped_mass, xi, kappa)
        worst = max(worst, abs(d2_distance(grid, xi, kappa) - ref),
                    abs(conj_r_eps(grid, xi, kappa, eps) - ref**2 / (2 * eps)))
    return "d2 vs active-set enumeration", worst <= 1e-10, f"max error {worst:.2e}"


def check_gradient(rng):
    cfg = RunConfig.from_preset("ramp1d", mesh={"nx": 12})
    grid = cfg.grid()
    energy = ReducedEnergy(grid, cfg.model(), cfg.loads())
    worst = 0.0
    for _ in range(5):
        t = float(rng.uniform(0.1, 0.9))
        z = rng.uniform(0.1, 0.9, grid.n_nodes)
        i = int(rng.integers(grid.n_nodes))
        e = np.zeros(grid.n_nodes)
        e[i] = 1.0
        h = 1e-5
        fd = (energy.value(t, z + h * e) - energy.value(t, z - h * e)) / (2 * h)
        an = energy.dz(t, z).pairing[i]
        worst = max(worst, abs(fd - an) / max(abs(an), 1e-8))
    return "D_z I vs central differences", worst <= 1e-5, f"max rel error {worst:.2e}"


def check_aq_monotone(rng):
    grid = interval(1.0, 10)
    bad = 0
    for q in (2.5, 4.0, 6.0):
        for _ in range(50):
            a, b = rng.normal(0, 1, grid.n_nodes), rng.normal(0, 1, grid.n_nodes)
            val = float(np.dot(assemble_Aq_residual(grid, a, q) - assemble_Aq_residual(grid, b, q), a - b))
            bad += val < -1e-12 * (1 + abs(val))
    return "A_q monotone", bad == 0, f"{bad} violations"


def check_stability_formula(rng):
    cfg = RunConfig.from_preset("homogeneous", mesh={"lx": 2.0})
    grid = cfg.grid()
    energy = ReducedEnergy(grid, cfg.model(), cfg.loads())
    c, kappa = 0.9, cfg["material"]["kappa"]
    val = local_stability_margin(energy, 0.0, np.full(grid.n_nodes, c))
    ref = (2 * c - kappa) * math.sqrt(2.0)
    return "stability margin formula", abs(val - ref) <= 1e-12, f"{val:.12f} vs {ref:.12f}"


def check_reparameterization(rng):
    _, grid, _, traj = _homogeneous()
    p = reparameterize(traj)
    tv = l2_norm(grid, traj.states[0] - traj.states[-1])
    ok = (p.normalization_defect() <= 1e-10 and abs(p.S - (traj.times[-1] + tv)) <= 1e-12
          and change_of_variables_defect(traj, p) <= 1e-10)
    return "arclength reparameterization", ok, f"S = {p.S:.12f}"


def check_row_zero(rng):
    cfg = RunConfig.from_preset("ramp1d", mesh={"nx": 20}, solver={"n_steps": 4})
    grid = cfg.grid()
    energy = ReducedEnergy(grid, cfg.model(), cfg.loads())
    z0 = cfg.z0(grid)
    traj = run(energy, cfg.solver(), z0)
    ref = energy.report(0.0, z0).total
    return "row 0 energy", abs(traj.energies()[0] - ref) <= 1e-12, f"{ref:.12f}"


CHECKS = [
    check_scalar_recursion, check_l2_norm, check_d2_oracle, check_gradient, check_aq_monotone,
    check_stability_formula, check_reparameterization, check_row_zero,
]


def run_all(seed: int = 0) -> list[tuple[str, bool, str]]:
    out = []
    for check in CHECKS:
        rng = np.random.default_rng(seed)
        try:
            out.append(check(rng))
        except Exception as exc:  # report, do not abort the table
            out.append((check.__name__, False, f"raised {type(exc).__name__}: {exc}"))
    return out
