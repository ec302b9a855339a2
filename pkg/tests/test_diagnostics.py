import math

import numpy as np
import pytest

from vvdamage import diagnostics as D
from vvdamage.energy import ReducedEnergy
from vvdamage.grid import interval
from vvdamage.loads import static_loads
from vvdamage.material import MaterialModel, constant, square
from vvdamage.stepper import run

from conftest import build


def tol(traj):
    return D.tol_ineq(traj)


def test_empty_window_is_zero(small_ramp_run):
    t = small_ramp_run.times[17]
    assert D.check_energy_inequality(small_ramp_run, t, t) == 0.0
    assert D.check_discrete_energy_inequality(small_ramp_run, t, t) == 0.0


def test_frozen_trajectory_has_zero_gap():
    cfg, grid, e, z0 = build("frozen")
    traj = run(e, cfg.solver(), z0)
    assert D.check_energy_inequality(traj, 0.0, 1.0) == 0.0
    assert D.check_discrete_energy_inequality(traj, 0.0, 1.0) == 0.0
    np.testing.assert_array_equal(D.energy_gap_series(traj), 0.0)


def test_misaligned_window(small_ramp_run):
    with pytest.raises(ValueError):
        D.check_energy_inequality(small_ramp_run, 0.0, 0.123456)
    with pytest.raises(ValueError):
        D.check_energy_inequality(small_ramp_run, 0.5, 0.25)


def test_homogeneous_gap_bounded_under_refinement():
    gaps = []
    for n in (50, 100, 200):
        cfg, grid, e, z0 = build("homogeneous", solver={"n_steps": n})
        traj = run(e, cfg.solver(), z0)
        series = D.energy_gap_series(traj)
        assert series.min() >= -tol(traj)
        gaps.append(series[-1])
    # the defect shrinks with tau here; it is reported, not asserted to vanish
    assert gaps[0] > gaps[1] > gaps[2] >= 0.0


def test_single_steps(small_ramp_run):
    traj = small_ramp_run
    for k in range(traj.n_completed):
        a, b = traj.times[k], traj.times[k + 1]
        assert D.check_energy_inequality(traj, a, b) >= -1e-10
        assert D.check_discrete_energy_inequality(traj, a, b) >= -1e-10 - D.discrete_remainder_bound(traj, a, b)


def test_running_discrete_inequality(small_ramp_run):
    traj = small_ramp_run
    gaps = D.discrete_gap_series(traj)
    allowance = D.discrete_remainder_series(traj)
    assert np.all(gaps >= -tol(traj) - allowance)
    for k in (5, 31, traj.n_completed):
        assert gaps[k] == pytest.approx(D.check_discrete_energy_inequality(traj, 0.0, traj.times[k]), abs=1e-13)


def test_window_additivity(small_ramp_run):
    traj = small_ramp_run
    rng = np.random.default_rng(7)
    n = traj.n_completed
    for _ in range(20):
        i, j, k = sorted(rng.integers(0, n + 1, 3))
        s, r, t = traj.times[i], traj.times[j], traj.times[k]
        for check in (D.check_energy_inequality, D.check_discrete_energy_inequality):
            assert check(traj, s, t) == pytest.approx(check(traj, s, r) + check(traj, r, t), abs=1e-13)


def test_stability_margin():
    grid = interval(2.0, 4)
    e = ReducedEnergy(grid, MaterialModel(kappa=0.4, f=square(), g=constant(1.0)), static_loads())
    c = 0.9
    assert D.local_stability_margin(e, 0.0, np.full(grid.n_nodes, c)) == pytest.approx((2 * c - 0.4) * math.sqrt(2.0))
    assert D.local_stability_margin(e, 0.0, np.full(grid.n_nodes, c), kappa=1e6) == 0.0


def test_stability_after_quiescent_step(small_ramp_run):
    traj = small_ramp_run
    e = traj.energy_model
    quiet = [r for r in traj.records if r.rate_norm == 0.0]
    assert quiet, "the ramp starts with a stable phase"
    r = quiet[-1]
    assert D.local_stability_margin(e, r.t, traj.states[r.k + 1]) <= traj.config.tol_el


def test_summary_keys(small_ramp_run):
    s = D.summary(small_ramp_run)
    for key in ("worst_basic_gap", "worst_energy_gap", "energy_identity_defect", "discrete_energy_gap",
                "discrete_remainder_bound", "max_kkt", "bv_total", "mixed_total"):
        assert math.isfinite(s[key])
    assert s["worst_basic_gap"] >= -1e-10
