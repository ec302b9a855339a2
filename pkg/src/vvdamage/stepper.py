"""Viscous incremental minimization in time.

Each step minimizes ``I(t, z) + kappa int (z_prev - z) + eps/(2 tau) ||z - z_prev||^2``
over ``z <= z_prev`` by alternating between the elasticity solve and a
projected Newton method for the damage at frozen displacement.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .energy import EnergyReport, ReducedEnergy, SolverFailure
from .grid import aq_energy, aq_hessian_blocks, assemble_Aq_residual, gradient_per_element, l2_norm
from .material import d2_distance, r_eps

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverConfig:
    """Time step, viscosity and solver tolerances.

    ``tau`` must equal ``T / n_steps`` for the load horizon ``T``; use
    :meth:`uniform` to build it from the step count.
    """

    tau: float
    eps: float
    n_steps: int
    tol_el: float = 1e-8
    tol_am: float = 1e-10
    max_am_iters: int = 200
    max_newton_iters: int = 60
    enforce_box: bool = True
    multistart: bool = False
    require_tau_le_2eps: bool = False

    def __post_init__(self):
        if not (self.tau > 0 and self.eps > 0 and self.n_steps >= 1):
            raise ValueError("tau and eps must be positive and n_steps >= 1")
        if min(self.tol_el, self.tol_am) <= 0:
            raise ValueError("tolerances must be positive")
        if self.require_tau_le_2eps and self.tau > 2 * self.eps * (1 + 1e-12):
            raise ValueError(f"tau = {self.tau} exceeds 2 eps = {2 * self.eps}")

    @classmethod
    def uniform(cls, horizon: float, n_steps: int, eps: float, **kw) -> "SolverConfig":
        return cls(tau=horizon / n_steps, eps=eps, n_steps=n_steps, **kw)


@dataclass
class StepRecord:
    k: int
    t: float
    energy: float  # I(t_{k+1}, z_{k+1})
    energy_competitor: float  # I(t_{k+1}, z_k)
    dt_increment: float  # I(t_{k+1}, z_k) - I(t_k, z_k)
    r1_dissipation: float  # tau * R_1(rate)
    visc_dissipation: float  # tau * (eps/2) ||rate||^2
    rate_norm: float
    d2: float  # d_2(-D_z I(t_{k+1}, z_{k+1}))
    dt_I: float  # d_t I(t_{k+1}, z_{k+1})
    kkt: float
    am_iterations: int
    accepted: bool = True
    multistart_gap: float = 0.0

    @property
    def basic_gap(self) -> float:
        """Slack of ``I(t+,z+) + tau R_eps <= I(t+, z)``."""
        return self.energy_competitor - (self.energy + self.r1_dissipation + self.visc_dissipation)


@dataclass
class Trajectory:
    energy_model: ReducedEnergy
    config: SolverConfig
    times: list = field(default_factory=list)
    states: list = field(default_factory=list)
    displacements: list = field(default_factory=list)
    records: list = field(default_factory=list)
    initial_energy: float = 0.0
    initial_dt_I: float = 0.0
    initial_d2: float = 0.0
    initial_derivative_norm: float = 0.0
    failure: str | None = None

    @property
    def grid(self):
        return self.energy_model.grid

    @property
    def kappa(self) -> float:
        return self.energy_model.model.kappa

    @property
    def n_completed(self) -> int:
        return len(self.records)

    def rate(self, k: int) -> np.ndarray:
        return (self.states[k + 1] - self.states[k]) / self.config.tau

    def energies(self) -> np.ndarray:
        return np.array([self.initial_energy] + [r.energy for r in self.records])

    def d2_series(self) -> np.ndarray:
        return np.array([self.initial_d2] + [r.d2 for r in self.records])

    # monitors ---------------------------------------------------------
    def bv_total(self) -> float:
        """``sum_k tau ||rate_k||``."""
        return float(sum(self.config.tau * r.rate_norm for r in self.records))

    def mixed_total(self) -> float:
        """L1-in-time weighted gradient rate ``sum_k tau (int w(grad z_mid) |grad rate|^2)^(1/2)``."""
        grid, q, tau = self.grid, self.energy_model.model.q, self.config.tau
        total = 0.0
        for k in range(self.n_completed):
            zmid = 0.5 * (self.states[k] + self.states[k + 1])
            w = (1.0 + np.sum(gradient_per_element(grid, zmid) ** 2, axis=1)) ** (0.5 * (q - 2.0))
            gr = gradient_per_element(grid, self.rate(k))
            total += tau * math.sqrt(float(np.dot(grid.element_measures, w * np.sum(gr * gr, axis=1))))
        return total

    def invariant_violations(self, tol_box: float = 1e-12, check_box: bool = True) -> list[str]:
        """Hard invariants: per-step energy inequality, unidirectionality, box."""
        out = []
        for r in self.records:
            if r.basic_gap < -1e-10 * (1.0 + abs(r.energy)):
                out.append(f"step {r.k}: per-step energy inequality violated by {-r.basic_gap:.3e}")
        for k in range(self.n_completed):
            inc = float(np.max(self.states[k + 1] - self.states[k]))
            if inc > 0.0:
                out.append(f"step {k}: damage increased by {inc:.3e}")
        if check_box and self.states:
            z0 = self.states[0]
            if z0.min() >= 0.0 and z0.max() <= 1.0:
                lo = min(float(s.min()) for s in self.states)
                hi = max(float(s.max()) for s in self.states)
                if lo < -tol_box or hi > 1.0 + tol_box:
                    out.append(f"box property violated: range [{lo:.3e}, {hi:.3e}]")
        return out

    def basic_energy_estimate_gap(self) -> float:
        """``I(0,z0) + T sup|d_t I| - (sup_k I(t_k,z_k) + sum diss)``; nonnegative when the estimate holds."""
        dts = [abs(self.initial_dt_I)] + [abs(r.dt_I) for r in self.records]
        dts += [abs(r.dt_increment) / self.config.tau for r in self.records]
        diss = sum(r.r1_dissipation + r.visc_dissipation for r in self.records)
        horizon = self.config.tau * self.config.n_steps
        return self.initial_energy + horizon * max(dts) - (float(self.energies().max()) + diss)


class RunFailure(SolverFailure):
    """A step failed; the partial trajectory is attached."""

    def __init__(self, message: str, step: int, trajectory: Trajectory):
        super().__init__(f"step {step}: {message}")
        self.step = step
        self.trajectory = trajectory


# ----------------------------------------------------------------------
# damage subproblem at frozen displacement
# ----------------------------------------------------------------------
class _DamageSubproblem:
    def __init__(self, energy: ReducedEnergy, z_prev, strain_energy, cfg: SolverConfig):
        self.e = energy
        self.grid = energy.grid
        self.model = energy.model
        self.zp = z_prev
        self.W = strain_energy
        self.visc = cfg.eps / cfg.tau
        self.m = energy.mass
        self.meas = energy.grid.element_measures
        self.k = energy.grid.dim + 1

    def value(self, z) -> float:
        model, m = self.model, self.m
        dz = z - self.zp
        return (
            aq_energy(self.grid, z, model.q)
            + float(np.dot(m, model.f(z)))
            + float(np.dot(self.meas, model.g(self.e.centroid_values(z)) * self.W))
            - model.kappa * float(np.dot(m, dz))
            + 0.5 * self.visc * float(np.dot(m, dz * dz))
        )

    def gradient(self, z) -> np.ndarray:
        """Pairing vector of the derivative."""
        model, m = self.model, self.m
        ge = self.meas * model.g.d1(self.e.centroid_values(z)) * self.W / self.k
        nodal = np.zeros_like(z)
        np.add.at(nodal, self.grid.elements, np.repeat(ge[:, None], self.k, axis=1))
        return (
            assemble_Aq_residual(self.grid, z, model.q)
            + m * (model.f.d1(z) - model.kappa + self.visc * (z - self.zp))
            + nodal
        )

    def hessian(self, z) -> np.ndarray:
        """CSR data array on ``grid.block_pattern``."""
        model = self.model
        he = self.meas * model.g.d2(self.e.centroid_values(z)) * self.W / self.k**2
        blocks = aq_hessian_blocks(self.grid, z, model.q) + he[:, None, None]
        return self.grid.block_pattern.assemble(blocks, self.m * (model.f.d2(z) + self.visc))


def _stationarity(dens, z, lo, hi, mass, tol_act) -> float:
    """Lumped-L2 norm of the box-KKT defect of a density ``dens``."""
    at_hi = z >= hi - tol_act
    at_lo = z <= lo + tol_act
    defect = np.where(at_hi, np.maximum(dens, 0.0), np.where(at_lo, np.maximum(-dens, 0.0), np.abs(dens)))
    defect = np.where(at_hi & at_lo, 0.0, defect)
    return float(np.sqrt(np.dot(mass, defect * defect)))


def _projected_newton(sub: _DamageSubproblem, z, lo, hi, tol, max_iter, tol_act):
    m = sub.m
    pattern = sub.grid.block_pattern
    z = np.clip(z, lo, hi)
    J = sub.value(z)
    grad = sub.gradient(z)
    stat = _stationarity(grad / m, z, lo, hi, m, tol_act)
    for it in range(max_iter):
        if stat <= tol:
            return z, it
        dens = grad / m
        width = float(np.max(np.abs(z - np.clip(z - dens, lo, hi))))
        eps_act = max(min(1e-3, width), tol_act)
        active = ((z >= hi - eps_act) & (grad < 0)) | ((z <= lo + eps_act) & (grad > 0)) | (hi - lo <= tol_act)
        free = np.flatnonzero(~active)
        data = sub.hessian(z)
        diag = np.abs(data[pattern.diagonal])
        diag[diag <= 0] = 1.0
        # epsilon-active components take a diagonally scaled gradient step onto the bound
        d = -grad / diag
        if free.size:
            # reduce to the free block by replacing active rows and columns with the identity
            data[active[pattern.rows] | active[pattern.indices]] = 0.0
            data[pattern.diagonal[active]] = 1.0
            rhs = np.where(active, 0.0, -grad)
            ok = False
            try:
                full = spla.spsolve(pattern.matrix(data).tocsc(), rhs)
                dF = full[free]
                ok = np.all(np.isfinite(dF)) and float(np.dot(dF, grad[free])) < 0.0
            except RuntimeError:
                ok = False
            if ok:
                d[free] = dF
        roundoff = 1e-13 * (1.0 + abs(J))
        alpha, accepted = 1.0, False
        for _ in range(60):
            z_new = np.clip(z + alpha * d, lo, hi)
            J_new = sub.value(z_new)
            if J_new <= J + 1e-4 * float(np.dot(grad, z_new - z)):
                accepted = True
            elif abs(J_new - J) <= roundoff:
                # energy differences below resolution: judge by stationarity instead
                g_new = sub.gradient(z_new)
                accepted = _stationarity(g_new / m, z_new, lo, hi, m, tol_act) < stat
            if accepted:
                break
            alpha *= 0.5
        if not accepted or np.array_equal(z_new, z):
            return z, it
        z, J = z_new, J_new
        grad = sub.gradient(z)
        stat = _stationarity(grad / m, z, lo, hi, m, tol_act)
    return z, max_iter


# ----------------------------------------------------------------------
# public step API
# ----------------------------------------------------------------------
def _bounds(z_prev, cfg: SolverConfig):
    lo = np.minimum(0.0, z_prev) if cfg.enforce_box else np.full_like(z_prev, -np.inf)
    return lo, z_prev


def _tol_act(z_prev) -> float:
    return 1e-10 * (1.0 + float(np.max(np.abs(z_prev))))


def kkt_residual(energy: ReducedEnergy, z_next, z_prev, t_next: float, cfg: SolverConfig,
                 report: EnergyReport | None = None) -> float:
    """Lumped-L2 norm of the nodal discrete Euler-Lagrange defect.

    Free nodes use the full residual ``-kappa + eps rate + D_z I``; nodes with
    ``z_next = z_prev`` only the part violating ``-D_z I >= -kappa``.
    """
    grid = energy.grid
    z_next, z_prev = grid.check_field(z_next), grid.check_field(z_prev)
    tol_act = _tol_act(z_prev)
    if np.any(z_next > z_prev + tol_act):
        raise ValueError("z_next is infeasible: damage must not heal")
    if report is None:
        report = energy.report(t_next, z_next)
    rho = energy.dz(t_next, z_next, report).density
    phi = -energy.model.kappa + cfg.eps * (z_next - z_prev) / cfg.tau + rho
    lo, hi = _bounds(z_prev, cfg)
    return _stationarity(phi, z_next, lo, hi, energy.mass, tol_act)


def _dissipation(energy: ReducedEnergy, z, z_prev, cfg: SolverConfig) -> tuple[float, float]:
    dz = z - z_prev
    r1 = energy.model.kappa * float(np.dot(energy.mass, np.maximum(-dz, 0.0)))
    visc = 0.5 * cfg.eps / cfg.tau * float(np.dot(energy.mass, dz * dz))
    return r1, visc


def _minimize_step(energy: ReducedEnergy, t_next, z_start, z_prev, cfg, lo, hi):
    tol_act = _tol_act(z_prev)
    z = np.clip(z_start, lo, hi)
    rep = energy.report(t_next, z)
    phi_old = rep.total + sum(_dissipation(energy, z, z_prev, cfg))
    kkt = kkt_residual(energy, z, z_prev, t_next, cfg, rep)
    it = 0
    history = [kkt]
    while kkt > cfg.tol_el and it < cfg.max_am_iters:
        it += 1
        sub = _DamageSubproblem(energy, z_prev, rep.strain_energy, cfg)
        z, _ = _projected_newton(sub, z, lo, hi, 0.1 * cfg.tol_el, cfg.max_newton_iters, tol_act)
        if not np.all(np.isfinite(z)):
            raise SolverFailure("non-finite damage iterate")
        rep = energy.report(t_next, z)
        phi = rep.total + sum(_dissipation(energy, z, z_prev, cfg))
        kkt = kkt_residual(energy, z, z_prev, t_next, cfg, rep)
        history.append(kkt)
        if phi > phi_old + cfg.tol_am * (1.0 + abs(phi)):
            raise SolverFailure(f"alternating minimization increased the energy by {phi - phi_old:.3e}")
        # stagnation: no KKT progress over ten alternations
        if len(history) > 10 and kkt > 0.9 * history[-11]:
            break
        phi_old = phi
    return z, rep, kkt, it


def incremental_step(energy: ReducedEnergy, t_next: float, z_prev, cfg: SolverConfig,
                     k: int = 0, competitor: EnergyReport | None = None):
    """One time-incremental minimization step.

    Returns ``(z_next, report, record)`` where ``report`` is the energy report
    at ``(t_next, z_next)``. A step whose total incremental energy exceeds that
    of the competitor ``z_prev`` is rejected and ``z_prev`` returned.
    """
    z_prev = energy.grid.check_field(z_prev)
    lo, hi = _bounds(z_prev, cfg)
    if competitor is None:
        competitor = energy.report(t_next, z_prev)

    z, rep, kkt, it = _minimize_step(energy, t_next, z_prev, z_prev, cfg, lo, hi)
    r1, visc = _dissipation(energy, z, z_prev, cfg)
    if kkt > cfg.tol_el:
        log.warning("step %d: KKT residual %.3e above tol_el after %d alternations", k, kkt, it)

    ms_gap = 0.0
    if cfg.multistart:
        # restart from a lowered state to probe for other stationary points
        start = 0.5 * (z_prev + lo) if cfg.enforce_box else z_prev - 0.5
        z2, rep2, _, _ = _minimize_step(energy, t_next, start, z_prev, cfg, lo, hi)
        a2, b2 = _dissipation(energy, z2, z_prev, cfg)
        ms_gap = (rep.total + r1 + visc) - (rep2.total + a2 + b2)
        if ms_gap > cfg.tol_am * (1.0 + abs(rep.total)):
            log.warning("step %d: a restart found a lower incremental energy (by %.3e)", k, ms_gap)

    accepted = rep.total + r1 + visc <= competitor.total
    if not accepted:
        z, rep = z_prev.copy(), competitor
        r1 = visc = 0.0
        kkt = kkt_residual(energy, z, z_prev, t_next, cfg, rep)

    tau = cfg.tau
    rate = (z - z_prev) / tau
    rec = StepRecord(
        k=k,
        t=t_next,
        energy=rep.total,
        energy_competitor=competitor.total,
        dt_increment=0.0,
        r1_dissipation=r1,
        visc_dissipation=visc,
        rate_norm=l2_norm(energy.grid, rate),
        d2=d2_distance(energy.grid, -energy.dz(t_next, z, rep).density, energy.model.kappa),
        dt_I=rep.dt_I,
        kkt=kkt,
        am_iterations=it,
        accepted=accepted,
        multistart_gap=ms_gap,
    )
    return z, rep, rec


def run(energy: ReducedEnergy, cfg: SolverConfig, z0) -> Trajectory:
    """Run the scheme on ``[0, T]``; raises :class:`RunFailure` with the partial trajectory."""
    grid, T = energy.grid, energy.loads.horizon
    if not math.isclose(cfg.tau * cfg.n_steps, T, rel_tol=1e-12):
        raise ValueError(f"tau * n_steps = {cfg.tau * cfg.n_steps} differs from the horizon {T}")
    z = grid.check_field(z0).copy()
    traj = Trajectory(energy_model=energy, config=cfg)
    rep = energy.report(0.0, z)
    dz0 = energy.dz(0.0, z, rep).density
    traj.times.append(0.0)
    traj.states.append(z.copy())
    traj.displacements.append(rep.u_min)
    traj.initial_energy = rep.total
    traj.initial_dt_I = rep.dt_I
    traj.initial_d2 = d2_distance(grid, -dz0, energy.model.kappa)
    traj.initial_derivative_norm = l2_norm(grid, dz0)

    for k in range(cfg.n_steps):
        t_next = T if k + 1 == cfg.n_steps else (k + 1) * cfg.tau
        try:
            competitor = energy.report(t_next, z)
            z_new, rep_new, rec = incremental_step(energy, t_next, z, cfg, k=k, competitor=competitor)
        except (SolverFailure, np.linalg.LinAlgError, FloatingPointError) as exc:
            traj.failure = f"step {k}: {exc}"
            raise RunFailure(str(exc), k, traj) from exc
        rec.dt_increment = competitor.total - rep.total
        traj.times.append(t_next)
        traj.states.append(z_new.copy())
        traj.displacements.append(rep_new.u_min)
        traj.records.append(rec)
        z, rep = z_new, rep_new
    return traj


def run_task(args):
    """Worker entry point: ``(grid, model, loads, cfg, z0) -> (trajectory, failure, step)``.

    Builds its own :class:`ReducedEnergy`, so it can run in a separate process.
    ``trajectory`` is partial on a step failure and ``None`` if setup failed.
    """
    grid, model, loads, cfg, z0 = args
    try:
        energy = ReducedEnergy(grid, model, loads)
        return run(energy, cfg, z0), None, None
    except RunFailure as exc:
        return exc.trajectory, str(exc), exc.step
    except (SolverFailure, ValueError) as exc:
        return None, str(exc), None


# ----------------------------------------------------------------------
# interpolants
# ----------------------------------------------------------------------
class Interpolants:
    """Piecewise constant and piecewise linear interpolants of a trajectory."""

    def __init__(self, traj: Trajectory):
        self.times = np.asarray(traj.times)
        self.states = traj.states
        self.tau = traj.config.tau
        self.T = self.times[-1]

    def _index(self, t: float) -> tuple[int, float]:
        if not (0.0 <= t <= self.T * (1 + 1e-14)):
            raise ValueError(f"time {t} outside [0, {self.T}]")
        k = min(int(np.searchsorted(self.times, t, side="right")) - 1, len(self.times) - 2)
        k = max(k, 0)
        return k, (t - self.times[k]) / (self.times[k + 1] - self.times[k])

    def t_bar(self, t: float) -> float:
        """Right endpoint of the step containing ``t`` (``t`` itself on nodes)."""
        k = int(np.searchsorted(self.times, t, side="left"))
        self._index(t)
        return float(self.times[min(k, len(self.times) - 1)])

    def t_under(self, t: float) -> float:
        k = int(np.searchsorted(self.times, t, side="right")) - 1
        self._index(t)
        return float(self.times[max(k, 0)])

    def z_bar(self, t: float) -> np.ndarray:
        k = int(np.searchsorted(self.times, t, side="left"))
        self._index(t)
        return self.states[min(k, len(self.times) - 1)]

    def z_under(self, t: float) -> np.ndarray:
        k = int(np.searchsorted(self.times, t, side="right")) - 1
        self._index(t)
        return self.states[max(k, 0)]

    def z_hat(self, t: float) -> np.ndarray:
        k, theta = self._index(t)
        return (1.0 - theta) * self.states[k] + theta * self.states[k + 1]

    def z_hat_rate(self, t: float) -> np.ndarray:
        k, _ = self._index(t)
        return (self.states[k + 1] - self.states[k]) / (self.times[k + 1] - self.times[k])


def interpolants(traj: Trajectory) -> Interpolants:
    return Interpolants(traj)


def r1_integral(traj: Trajectory) -> float:
    """``int_0^T R_1(z_hat') dt`` as a sum over steps."""
    return float(sum(r.r1_dissipation for r in traj.records))


def reps_of_rate(traj: Trajectory, k: int) -> float:
    return r_eps(traj.grid, traj.rate(k), traj.kappa, traj.config.eps)
