"""Arclength reparameterization and the vanishing-viscosity sweep.

A viscous trajectory with step-constant rates ``v_k`` becomes, in the
arclength ``s = t + int ||z'||``, a chain of segments of length
``tau (1 + ||v_k||)`` on which ``t' = 1/(1 + ||v_k||)`` and
``||z'|| = ||v_k||/(1 + ||v_k||)``. All integrands of the parameterized
energy inequality are then segment-wise constant, so the integrals are
exact sums.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .diagnostics import check_energy_inequality, summary
from .grid import Grid, l2_norm
from .loads import LoadProgram
from .material import TOL_STAB, MaterialModel, m_eps, m_zero, r1
from .stepper import SolverConfig, Trajectory, run_task

log = logging.getLogger(__name__)

STUCK, RATE_INDEPENDENT, JUMP = "stuck", "rate_independent", "jump"


@dataclass(frozen=True)
class Thresholds:
    """Cuts for the regime labels.

    ``theta_z`` is absolute; :meth:`default` scales it by ``||z0||``.
    """

    theta_t: float = 0.05
    theta_z: float = 1e-6
    theta_d: float = 1e-7

    @classmethod
    def default(cls, grid: Grid, z0, tol_el: float = 1e-8) -> "Thresholds":
        return cls(theta_t=0.05, theta_z=1e-6 * l2_norm(grid, z0), theta_d=10.0 * tol_el)


@dataclass
class ParameterizedTrajectory:
    """Arclength-parameterized pair on ``[0, S]``.

    ``s``, ``t`` and ``states`` are given at the ``n + 1`` breakpoints; the
    per-segment arrays have length ``n``.
    """

    grid: Grid
    kappa: float
    eps: float
    tau: float
    s: np.ndarray
    t: np.ndarray
    states: list
    t_prime: np.ndarray
    z_prime_norm: np.ndarray
    d2: np.ndarray  # at the segment end
    power: np.ndarray  # int d_t I t' ds over the segment (damage frozen at the start)
    energies: np.ndarray  # I at the breakpoints
    regimes: list = field(default_factory=list)
    flags: list = field(default_factory=list)

    @property
    def S(self) -> float:
        return float(self.s[-1])

    @property
    def n_segments(self) -> int:
        return len(self.t_prime)

    @property
    def ds(self) -> np.ndarray:
        return np.diff(self.s)

    def segment_rate(self, j: int) -> np.ndarray:
        """``z'`` on segment ``j`` (derivative with respect to ``s``)."""
        h = self.s[j + 1] - self.s[j]
        return (self.states[j + 1] - self.states[j]) / h

    def normalization_defect(self) -> float:
        return float(np.max(np.abs(self.t_prime + self.z_prime_norm - 1.0), initial=0.0))

    def t_of_s(self, sigma) -> np.ndarray:
        return np.interp(sigma, self.s, self.t)

    def s_of_t(self, t) -> np.ndarray:
        return np.interp(t, self.t, self.s)

    def z_at(self, sigma: float) -> np.ndarray:
        """Linear interpolation of the states at arclength ``sigma``."""
        j = int(np.clip(np.searchsorted(self.s, sigma, side="right") - 1, 0, self.n_segments - 1))
        h = self.s[j + 1] - self.s[j]
        a = 0.0 if h == 0.0 else min(max((sigma - self.s[j]) / h, 0.0), 1.0)
        return (1.0 - a) * self.states[j] + a * self.states[j + 1]

    def regime_histogram(self) -> dict:
        out = {STUCK: 0, RATE_INDEPENDENT: 0, JUMP: 0}
        for r in self.regimes:
            out[r] += 1
        return out

    def rows(self):
        """Per-segment ``(s, s_end, t, t', ||z'||, d2, regime, flagged)``."""
        for j in range(self.n_segments):
            yield (
                float(self.s[j]), float(self.s[j + 1]), float(self.t[j]), float(self.t_prime[j]),
                float(self.z_prime_norm[j]), float(self.d2[j]),
                self.regimes[j] if self.regimes else "", bool(self.flags[j]) if self.flags else False,
            )


# ----------------------------------------------------------------------
def arclength(traj: Trajectory) -> np.ndarray:
    """``s(t_k) = t_k + sum_{j<k} tau ||rate_j||`` at every step boundary."""
    tau = traj.config.tau
    inc = np.array([tau * r.rate_norm for r in traj.records])
    return np.asarray(traj.times, dtype=float) + np.concatenate([[0.0], np.cumsum(inc)])


def reparameterize(traj: Trajectory) -> ParameterizedTrajectory:
    """One segment per step with ``t' = 1/(1 + ||v||)`` and ``||z'|| = ||v||/(1 + ||v||)``."""
    s = arclength(traj)
    v = np.array([r.rate_norm for r in traj.records])
    return ParameterizedTrajectory(
        grid=traj.grid,
        kappa=traj.kappa,
        eps=traj.config.eps,
        tau=traj.config.tau,
        s=s,
        t=np.asarray(traj.times, dtype=float),
        states=list(traj.states),
        t_prime=1.0 / (1.0 + v),
        z_prime_norm=v / (1.0 + v),
        d2=np.array([r.d2 for r in traj.records]),
        power=np.array([r.dt_increment for r in traj.records]),
        energies=traj.energies(),
    )


def classify_regimes(ptraj: ParameterizedTrajectory, thresholds: Thresholds) -> ParameterizedTrajectory:
    """Label every segment; flag the ones whose stability margin contradicts the label."""
    regimes, flags = [], []
    for tp, zp, d2 in zip(ptraj.t_prime, ptraj.z_prime_norm, ptraj.d2):
        if zp <= thresholds.theta_z:
            regimes.append(STUCK)
            flags.append(False)
        elif tp <= thresholds.theta_t:
            regimes.append(JUMP)
            flags.append(bool(d2 <= thresholds.theta_d))
        else:
            regimes.append(RATE_INDEPENDENT)
            flags.append(bool(d2 > thresholds.theta_d))
    ptraj.regimes, ptraj.flags = regimes, flags
    return ptraj


def _segment_window(ptraj: ParameterizedTrajectory, sigma1: float, sigma2: float) -> tuple[int, int]:
    if sigma1 > sigma2:
        raise ValueError(f"need sigma1 <= sigma2, got {sigma1} > {sigma2}")
    tol = 1e-9 * max(1.0, ptraj.S)
    idx = []
    for sigma in (sigma1, sigma2):
        j = int(np.argmin(np.abs(ptraj.s - sigma)))
        if abs(ptraj.s[j] - sigma) > tol:
            raise ValueError(f"arclength {sigma} is not a segment boundary")
        idx.append(j)
    return idx[0], idx[1]


@dataclass(frozen=True)
class LimitGap:
    """Gap of the limit inequality.

    ``strict`` includes the indicator of ``{0}`` and may be ``-inf``;
    ``relaxed`` drops it, and ``violations`` counts the segments where it
    would have fired.
    """

    strict: float
    relaxed: float
    violations: int


def parameterized_energy_gap(ptraj: ParameterizedTrajectory, sigma1: float, sigma2: float,
                             use_m_zero: bool = False, eps: float | None = None,
                             tol_stab: float = TOL_STAB):
    """RHS minus LHS of the parameterized energy inequality on ``[sigma1, sigma2]``.

    Returns a float for the viscous form and a :class:`LimitGap` for the
    limit form. In the limit form ``t' = 0`` is used on jump segments (the
    finite-``eps`` value of ``t'`` is an artifact of the viscosity there);
    unlabeled trajectories treat every segment with ``t' > 0``.
    """
    i, j = _segment_window(ptraj, sigma1, sigma2)
    eps = ptraj.eps if eps is None else eps
    grid, kappa = ptraj.grid, ptraj.kappa
    lhs_energy = ptraj.energies[j]
    rhs = ptraj.energies[i] + float(np.sum(ptraj.power[i:j]))
    if not use_m_zero:
        diss = 0.0
        for k in range(i, j):
            h = ptraj.s[k + 1] - ptraj.s[k]
            diss += h * m_eps(grid, ptraj.t_prime[k], ptraj.segment_rate(k), ptraj.d2[k], kappa, eps)
        return float(rhs - (diss + lhs_energy))

    strict_diss, relaxed_diss, violations = 0.0, 0.0, 0
    for k in range(i, j):
        h = ptraj.s[k + 1] - ptraj.s[k]
        v = ptraj.segment_rate(k)
        jump = bool(ptraj.regimes) and ptraj.regimes[k] == JUMP
        alpha = 0.0 if jump else ptraj.t_prime[k]
        value = m_zero(grid, alpha, v, ptraj.d2[k], kappa, tol_stab)
        if math.isinf(value):
            violations += 1
            strict_diss = math.inf
            value = r1(grid, v, kappa)
        strict_diss += h * value
        relaxed_diss += h * value
    relaxed = float(rhs - (relaxed_diss + lhs_energy))
    strict = -math.inf if math.isinf(strict_diss) else relaxed
    return LimitGap(strict=strict, relaxed=relaxed, violations=violations)


def change_of_variables_defect(traj: Trajectory, ptraj: ParameterizedTrajectory) -> float:
    """Largest difference between the viscous parameterized gap and the time-domain gap."""
    worst = 0.0
    for k in range(1, ptraj.n_segments + 1):
        a = parameterized_energy_gap(ptraj, 0.0, ptraj.s[k])
        b = check_energy_inequality(traj, 0.0, traj.times[k])
        worst = max(worst, abs(a - b))
    return worst


def m_eps_dominates_m_zero(ptraj: ParameterizedTrajectory) -> int:
    """Count segments where ``M_eps < M_0`` at ``alpha = t'`` and ``zeta = d2`` (should be 0).

    ``M_0`` is evaluated at ``alpha = 0``, the only branch that is finite
    without the stability indicator; the comparison is the AM-GM bound.
    """
    bad = 0
    for k in range(ptraj.n_segments):
        v = ptraj.segment_rate(k)
        me = m_eps(ptraj.grid, ptraj.t_prime[k], v, ptraj.d2[k], ptraj.kappa, ptraj.eps)
        m0 = m_zero(ptraj.grid, 0.0, v, ptraj.d2[k], ptraj.kappa)
        if me < m0 - 1e-12 * (1.0 + abs(m0)):
            bad += 1
    return bad


# ----------------------------------------------------------------------
def normalized_distance(a: ParameterizedTrajectory, b: ParameterizedTrajectory) -> float:
    """``sup_sigma ||z_a(sigma S_a) - z_b(sigma S_b)||`` over ``sigma`` in ``[0, 1]``.

    Both paths are piecewise linear in ``sigma``, so the norm of the
    difference is convex between merged breakpoints and the sup is attained
    on them.
    """
    grid = a.grid
    sig = np.union1d(a.s / a.S, b.s / b.S)
    return max(l2_norm(grid, a.z_at(x * a.S) - b.z_at(x * b.S)) for x in sig)


def eps_sequence(eps0: float, levels: int, tau0: float | None = None, factor: float = 2.0):
    """``eps_n = eps0 factor^-n`` with ``tau_n = min(tau0, 2 eps_n)``."""
    out = []
    for n in range(levels):
        eps = eps0 / factor**n
        tau = 2.0 * eps if tau0 is None else min(tau0, 2.0 * eps)
        out.append((eps, tau))
    return out


@dataclass
class SweepLevel:
    eps: float
    tau: float
    trajectory: Trajectory | None = None
    ptraj: ParameterizedTrajectory | None = None
    failure: str | None = None
    failed_step: int | None = None
    monitors: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.failure is None


@dataclass
class SweepReport:
    levels: list
    s_eps: list
    distances: list  # between consecutive successful levels
    limit_gaps: list
    thresholds: Thresholds

    def s_ratio_last(self, n: int = 3) -> float:
        tail = [s for s in self.s_eps if s is not None][-n:]
        return max(tail) / min(tail) if tail else math.nan

    def distances_decrease(self, n: int = 3) -> bool:
        tail = self.distances[-n:]
        return len(tail) == n and all(b < a for a, b in zip(tail, tail[1:]))

    def to_dict(self) -> dict:
        return {
            "thresholds": asdict(self.thresholds),
            "levels": [
                {
                    "eps": lv.eps,
                    "tau": lv.tau,
                    "failure": lv.failure,
                    "failed_step": lv.failed_step,
                    **lv.monitors,
                }
                for lv in self.levels
            ],
            "S_eps": self.s_eps,
            "S_ratio_last3": self.s_ratio_last(3),
            "distances": self.distances,
            "distances_decrease_last3": self.distances_decrease(3),
            "limit_gaps": self.limit_gaps,
        }


def viscosity_sweep(base: SolverConfig, grid: Grid, model: MaterialModel, loads: LoadProgram, z0,
                    eps_list, workers: int = 1, thresholds: Thresholds | None = None) -> SweepReport:
    """Run one viscous trajectory per ``(eps, tau)`` pair and compare them in arclength.

    Failed runs are recorded and skipped in the cross-level comparisons.
    """
    T = loads.horizon
    tasks, levels = [], []
    for eps, tau in eps_list:
        n = int(round(T / tau))
        if not math.isclose(n * tau, T, rel_tol=1e-12):
            raise ValueError(f"tau = {tau} does not divide the horizon {T}")
        cfg = replace(base, eps=eps, tau=T / n, n_steps=n)
        tasks.append((grid, model, loads, cfg, np.asarray(z0, dtype=float)))
        levels.append(SweepLevel(eps=eps, tau=T / n))
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_task, tasks))
    else:
        results = [run_task(t) for t in tasks]

    th = thresholds or Thresholds.default(grid, z0, base.tol_el)
    for lv, (traj, failure, step) in zip(levels, results):
        lv.trajectory, lv.failure, lv.failed_step = traj, failure, step
        if failure is not None:
            log.warning("eps = %g failed: %s", lv.eps, failure)
            continue
        lv.ptraj = classify_regimes(reparameterize(traj), th)
        limit = parameterized_energy_gap(lv.ptraj, 0.0, lv.ptraj.S, use_m_zero=True)
        lv.monitors = {
            "S_eps": lv.ptraj.S,
            "normalization_defect": lv.ptraj.normalization_defect(),
            "regimes": lv.ptraj.regime_histogram(),
            "flagged_segments": int(sum(lv.ptraj.flags)),
            "limit_gap_relaxed": limit.relaxed,
            "limit_gap_strict": limit.strict,
            "limit_indicator_violations": limit.violations,
            **summary(traj),
        }

    ok = [lv for lv in levels if lv.ok]
    distances = [normalized_distance(a.ptraj, b.ptraj) for a, b in zip(ok, ok[1:])]
    return SweepReport(
        levels=levels,
        s_eps=[lv.ptraj.S if lv.ok else None for lv in levels],
        distances=distances,
        limit_gaps=[lv.monitors.get("limit_gap_relaxed") if lv.ok else None for lv in levels],
        thresholds=th,
    )
