"""Energy-dissipation checks on discrete trajectories.

Gaps are reported as ``right-hand side - left-hand side`` of the respective
inequality, so a nonnegative gap means the inequality holds.

Two evaluations of the power term are used. The continuous-level check
integrates ``d_t I`` with the damage frozen at the start of each step, which
is exactly ``I(t_{k+1}, z_k) - I(t_k, z_k)``. The discrete check follows the
piecewise linear interpolant with two-point Gauss quadrature per step and
tolerates an O(tau) remainder estimated from the run.
"""

from __future__ import annotations

import math

import numpy as np

from .energy import ReducedEnergy
from .grid import l2_norm
from .material import d2_distance
from .stepper import Trajectory

_GAUSS = (0.5 - 0.5 / math.sqrt(3.0), 0.5 + 0.5 / math.sqrt(3.0))


def step_index(traj: Trajectory, t: float) -> int:
    """Index of the step boundary equal to ``t``; raises ``ValueError`` otherwise."""
    times = np.asarray(traj.times)
    k = int(np.argmin(np.abs(times - t)))
    if abs(times[k] - t) > 1e-9 * max(1.0, times[-1]):
        raise ValueError(f"time {t} is not a step boundary of the trajectory")
    return k


def _window(traj: Trajectory, s: float, t: float) -> tuple[int, int]:
    if s > t:
        raise ValueError(f"need s <= t, got s={s}, t={t}")
    return step_index(traj, s), step_index(traj, t)


def _conj_terms(traj: Trajectory) -> np.ndarray:
    """Per-step ``tau R_eps^*(-D_z I(t_{k+1}, z_{k+1}))``."""
    eps, tau = traj.config.eps, traj.config.tau
    return np.array([tau * r.d2**2 / (2.0 * eps) for r in traj.records])


def _dissipation_terms(traj: Trajectory) -> np.ndarray:
    return np.array([r.r1_dissipation + r.visc_dissipation for r in traj.records])


def check_energy_inequality(traj: Trajectory, s: float, t: float) -> float:
    """Gap of the viscous energy inequality on ``[s, t]`` (aligned to steps)."""
    i, j = _window(traj, s, t)
    if i == j:
        return 0.0
    E = traj.energies()
    power = sum(r.dt_increment for r in traj.records[i:j])
    diss = float(np.sum(_dissipation_terms(traj)[i:j]) + np.sum(_conj_terms(traj)[i:j]))
    return float((E[i] + power) - (diss + E[j]))


def energy_gap_series(traj: Trajectory) -> np.ndarray:
    """``check_energy_inequality(0, t_k)`` for every step boundary."""
    E = traj.energies()
    power = np.concatenate([[0.0], np.cumsum([r.dt_increment for r in traj.records])])
    diss = np.concatenate([[0.0], np.cumsum(_dissipation_terms(traj) + _conj_terms(traj))]) if traj.records \
        else np.zeros(1)
    return (E[0] + power) - (diss + E)


def tol_ineq(traj: Trajectory) -> float:
    return 1e-8 * (1.0 + abs(traj.initial_energy))


# ----------------------------------------------------------------------
def _cache(traj: Trajectory) -> dict:
    cache = getattr(traj, "_diag_cache", None)
    if cache is None:
        cache = {}
        traj._diag_cache = cache
    return cache


def gauss_power(traj: Trajectory) -> np.ndarray:
    """Per-step ``int d_t I(r, z_hat(r)) dr`` by two-point Gauss quadrature."""
    cache = _cache(traj)
    if "gauss_power" not in cache:
        energy = traj.energy_model
        out = np.zeros(traj.n_completed)
        if not energy.loads.is_static:
            for k in range(traj.n_completed):
                t0, z0, z1 = traj.times[k], traj.states[k], traj.states[k + 1]
                h = traj.times[k + 1] - t0
                out[k] = 0.5 * h * sum(energy.dt(t0 + a * h, (1 - a) * z0 + a * z1) for a in _GAUSS)
        cache["gauss_power"] = out
    return cache["gauss_power"]


def power_lipschitz(traj: Trajectory) -> float:
    """Empirical Lipschitz constant of ``z -> d_t I(t, z)`` along the run.

    Sampled as ``|d_t I(t_{k+1}, z_{k+1}) - d_t I(t_{k+1}, z_k)| / ||z_{k+1} - z_k||``.
    """
    cache = _cache(traj)
    if "lip" not in cache:
        energy, grid = traj.energy_model, traj.grid
        lip = 0.0
        if not energy.loads.is_static:
            for k in range(traj.n_completed):
                dz = l2_norm(grid, traj.states[k + 1] - traj.states[k])
                if dz == 0.0:
                    continue
                t = traj.times[k + 1]
                lip = max(lip, abs(energy.dt(t, traj.states[k + 1]) - energy.dt(t, traj.states[k])) / dz)
        cache["lip"] = lip
    return cache["lip"]


def discrete_remainder_bound(traj: Trajectory, s: float, t: float) -> float:
    """Bound on the power mismatch between the interpolant and the left values.

    ``L * sup_k ||z_{k+1} - z_k|| * (t - s)`` with ``L`` from :func:`power_lipschitz`;
    this is ``O(tau)`` for trajectories of bounded variation.
    """
    i, j = _window(traj, s, t)
    if i == j:
        return 0.0
    grid = traj.grid
    sup = max(l2_norm(grid, traj.states[k + 1] - traj.states[k]) for k in range(traj.n_completed))
    return power_lipschitz(traj) * sup * (traj.times[j] - traj.times[i])


def check_discrete_energy_inequality(traj: Trajectory, s: float, t: float) -> float:
    """Gap of the discrete energy inequality along the piecewise linear interpolant.

    The remainder is not included; compare against ``-tol_ineq -
    discrete_remainder_bound``.
    """
    i, j = _window(traj, s, t)
    if i == j:
        return 0.0
    E = traj.energies()
    power = float(np.sum(gauss_power(traj)[i:j]))
    diss = float(np.sum(_dissipation_terms(traj)[i:j]) + np.sum(_conj_terms(traj)[i:j]))
    return float((E[i] + power) - (diss + E[j]))


def discrete_gap_series(traj: Trajectory) -> np.ndarray:
    """``check_discrete_energy_inequality(0, t_k)`` for every step boundary."""
    E = traj.energies()
    power = np.concatenate([[0.0], np.cumsum(gauss_power(traj))])
    diss = np.concatenate([[0.0], np.cumsum(_dissipation_terms(traj) + _conj_terms(traj))]) if traj.records \
        else np.zeros(1)
    return (E[0] + power) - (diss + E)


def discrete_remainder_series(traj: Trajectory) -> np.ndarray:
    """``discrete_remainder_bound(0, t_k)`` for every step boundary."""
    if not traj.records:
        return np.zeros(1)
    grid = traj.grid
    sup = max(l2_norm(grid, traj.states[k + 1] - traj.states[k]) for k in range(traj.n_completed))
    return power_lipschitz(traj) * sup * (np.asarray(traj.times) - traj.times[0])


def local_stability_margin(energy: ReducedEnergy, t: float, z, kappa: float | None = None) -> float:
    """``d_2(-D_z I(t, z))``; zero iff the state is locally stable."""
    if kappa is None:
        kappa = energy.model.kappa
    return d2_distance(energy.grid, -energy.dz(t, z).density, kappa)


def chain_rule_residuals(traj: Trajectory) -> np.ndarray:
    """Per-step defect of the chain rule along the piecewise linear interpolant.

    ``|I(t_{k+1},z_{k+1}) - I(t_k,z_k) - int d_t I - tau <D_z I(mid), rate>|``
    with the damage derivative evaluated at the step midpoint.
    """
    energy = traj.energy_model
    E = traj.energies()
    power = gauss_power(traj)
    out = np.zeros(traj.n_completed)
    for k in range(traj.n_completed):
        h = traj.times[k + 1] - traj.times[k]
        tm = traj.times[k] + 0.5 * h
        zm = 0.5 * (traj.states[k] + traj.states[k + 1])
        pairing = energy.dz(tm, zm).pairing
        out[k] = abs(E[k + 1] - E[k] - power[k] - float(np.dot(pairing, traj.states[k + 1] - traj.states[k])))
    return out


def energy_identity_defect(traj: Trajectory) -> float:
    """Gap of the energy inequality over the whole run (zero would be an identity)."""
    return check_energy_inequality(traj, traj.times[0], traj.times[-1])


def summary(traj: Trajectory) -> dict:
    """Worst-case gaps and monitors for the run summary."""
    gaps = energy_gap_series(traj)
    basic = [r.basic_gap for r in traj.records]
    T = traj.times[-1]
    disc = check_discrete_energy_inequality(traj, 0.0, T) if traj.records else 0.0
    return {
        "worst_basic_gap": min(basic) if basic else 0.0,
        "worst_energy_gap": float(gaps.min()),
        "energy_identity_defect": float(gaps[-1]),
        "discrete_energy_gap": disc,
        "discrete_remainder_bound": discrete_remainder_bound(traj, 0.0, T) if traj.records else 0.0,
        "tol_ineq": tol_ineq(traj),
        "max_kkt": max((r.kkt for r in traj.records), default=0.0),
        "bv_total": traj.bv_total(),
        "mixed_total": traj.mixed_total(),
        "basic_energy_estimate_gap": traj.basic_energy_estimate_gap(),
        "sup_abs_dt_I": max([abs(traj.initial_dt_I)] + [abs(r.dt_I) for r in traj.records]),
        "initial_derivative_norm": traj.initial_derivative_norm,
        "z_min": min(float(z.min()) for z in traj.states),
        "z_max": max(float(z.max()) for z in traj.states),
        "rejected_steps": sum(not r.accepted for r in traj.records),
    }
