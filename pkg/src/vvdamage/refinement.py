"""Time-step refinement study at fixed viscosity."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .diagnostics import energy_identity_defect
from .grid import Grid
from .loads import LoadProgram
from .material import MaterialModel
from .stepper import SolverConfig, Trajectory, run_task


def _hat(times: np.ndarray, states: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Piecewise linear interpolant evaluated at the times ``t`` (rows are nodes)."""
    return np.stack([np.interp(t, times, states[:, i]) for i in range(states.shape[1])], axis=1)


def space_time_distance(a: Trajectory, b: Trajectory) -> float:
    """``L2(0, T; L2)`` distance of the piecewise linear interpolants.

    The difference is linear in time between merged breakpoints, so Simpson's
    rule on each merged interval is exact.
    """
    ta, tb = np.asarray(a.times), np.asarray(b.times)
    if not math.isclose(ta[-1], tb[-1], rel_tol=1e-12):
        raise ValueError("trajectories cover different horizons")
    grid_t = np.union1d(ta, tb)
    mid = 0.5 * (grid_t[:-1] + grid_t[1:])
    sa, sb = np.array(a.states), np.array(b.states)
    mass = a.grid.lumped_mass

    def sq(t):
        d = _hat(ta, sa, t) - _hat(tb, sb, t)
        return (d * d) @ mass

    f = sq(grid_t)
    fm = sq(mid)
    h = np.diff(grid_t)
    return math.sqrt(max(float(np.sum(h / 6.0 * (f[:-1] + 4.0 * fm + f[1:]))), 0.0))


@dataclass
class TauStudy:
    taus: list
    trajectories: list
    failures: list
    distances: list = field(default_factory=list)
    defects: list = field(default_factory=list)  # energy identity defect per level

    @property
    def ratios(self) -> list:
        d = self.distances
        return [d[i + 1] / d[i] if d[i] > 0 else math.nan for i in range(len(d) - 1)]

    @property
    def orders(self) -> list:
        return [-math.log2(r) if r > 0 else math.nan for r in self.ratios]

    def rows(self):
        """``(level, tau, distance to the next level, ratio, order, identity defect)``."""
        ratios, orders = self.ratios, self.orders
        for j, tau in enumerate(self.taus):
            yield (
                j, tau,
                self.distances[j] if j < len(self.distances) else math.nan,
                ratios[j - 1] if 0 < j <= len(ratios) else math.nan,
                orders[j - 1] if 0 < j <= len(orders) else math.nan,
                self.defects[j] if j < len(self.defects) else math.nan,
            )


def tau_study(base: SolverConfig, grid: Grid, model: MaterialModel, loads: LoadProgram, z0,
              levels: int, workers: int = 1) -> TauStudy:
    """Runs with ``tau_j = tau_0 / 2^j`` for ``j < levels`` and successive distances.

    Distances are only computed while consecutive levels succeed.
    """
    cfgs = [replace(base, tau=base.tau / 2**j, n_steps=base.n_steps * 2**j) for j in range(levels)]
    tasks = [(grid, model, loads, c, np.asarray(z0, dtype=float)) for c in cfgs]
    if workers > 1 and levels > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run_task, tasks))
    else:
        results = [run_task(t) for t in tasks]
    study = TauStudy(
        taus=[c.tau for c in cfgs],
        trajectories=[r[0] for r in results],
        failures=[r[1] for r in results],
    )
    for j in range(levels):
        if study.failures[j] is not None:
            break
        study.defects.append(energy_identity_defect(study.trajectories[j]))
        if j + 1 < levels and study.failures[j + 1] is None:
            study.distances.append(space_time_distance(study.trajectories[j], study.trajectories[j + 1]))
    return study
