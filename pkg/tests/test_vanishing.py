import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vvdamage import vanishing as V
from vvdamage.diagnostics import check_energy_inequality
from vvdamage.grid import interval
from vvdamage.material import m_eps, m_zero
from vvdamage.stepper import run

from conftest import build


def closed_form_states(cfg, n):
    eps, tau = cfg["solver"]["eps"], cfg["loads"]["horizon"] / n
    kappa, z = cfg["material"]["kappa"], cfg["initial"]["value"]
    out = [z]
    for _ in range(n):
        z = (eps * z + tau * kappa) / (eps + 2 * tau)
        out.append(z)
    return np.array(out)


def test_frozen_arclength_is_time():
    cfg, grid, e, z0 = build("frozen")
    traj = run(e, cfg.solver(), z0)
    p = V.reparameterize(traj)
    np.testing.assert_array_equal(p.s, traj.times)
    np.testing.assert_array_equal(p.t_prime, 1.0)
    assert V.classify_regimes(p, V.Thresholds.default(grid, z0)).regime_histogram()[V.STUCK] == p.n_segments


def test_homogeneous_arclength_oracle(homogeneous_run):
    traj = homogeneous_run
    cfg = build("homogeneous")[0]
    zs = closed_form_states(cfg, traj.config.n_steps)
    sqrt_l = math.sqrt(cfg["mesh"]["lx"])
    # monotone path: the total variation is the end-point distance
    expected = traj.times[-1] + abs(zs[0] - zs[-1]) * sqrt_l
    p = V.reparameterize(traj)
    assert p.S == pytest.approx(expected, rel=1e-10)
    rates = np.abs(np.diff(zs)) / traj.config.tau * sqrt_l
    np.testing.assert_allclose(p.t_prime, 1.0 / (1.0 + rates), rtol=1e-8)
    np.testing.assert_allclose(p.z_prime_norm, rates / (1.0 + rates), rtol=1e-8)


def test_normalization_and_inverse(small_ramp_run):
    p = V.reparameterize(small_ramp_run)
    assert p.normalization_defect() <= 1e-12
    np.testing.assert_allclose(p.t_of_s(p.s), small_ramp_run.times, atol=1e-14)
    assert np.all(np.diff(p.s) > 0)
    # z at a breakpoint is the stored state
    k = 40
    np.testing.assert_array_equal(p.z_at(p.s[k]), small_ramp_run.states[k])


def test_segment_rate_norm(small_ramp_run):
    p = V.reparameterize(small_ramp_run)
    from vvdamage.grid import l2_norm
    for j in (0, 25, 59):
        assert l2_norm(p.grid, p.segment_rate(j)) == pytest.approx(p.z_prime_norm[j], abs=1e-12)


@pytest.mark.parametrize("name", ["homogeneous", "ramp"])
def test_viscous_form_matches_time_domain(name, homogeneous_run, small_ramp_run):
    traj = homogeneous_run if name == "homogeneous" else small_ramp_run
    p = V.reparameterize(traj)
    assert V.change_of_variables_defect(traj, p) <= 1e-10
    mid = traj.n_completed // 2
    assert V.parameterized_energy_gap(p, p.s[3], p.s[mid]) == pytest.approx(
        check_energy_inequality(traj, traj.times[3], traj.times[mid]), abs=1e-10)


def test_segment_window_checks(small_ramp_run):
    p = V.reparameterize(small_ramp_run)
    with pytest.raises(ValueError):
        V.parameterized_energy_gap(p, p.s[4], p.s[2])
    with pytest.raises(ValueError):
        V.parameterized_energy_gap(p, 0.0, 0.5 * (p.s[1] + p.s[2]))


def test_limit_form_on_stuck_run():
    cfg, grid, e, z0 = build("frozen")
    p = V.classify_regimes(V.reparameterize(run(e, cfg.solver(), z0)), V.Thresholds.default(grid, z0))
    gap = V.parameterized_energy_gap(p, 0.0, p.S, use_m_zero=True)
    assert gap.strict == 0.0 and gap.relaxed == 0.0 and gap.violations == 0


def test_limit_form_indicator_fires():
    cfg, grid, e, z0 = build("homogeneous")
    p = V.reparameterize(run(e, cfg.solver(), z0))  # unlabeled: every segment has t' > 0
    gap = V.parameterized_energy_gap(p, 0.0, p.S, use_m_zero=True)
    assert gap.strict == -math.inf
    assert gap.violations > 0 and math.isfinite(gap.relaxed)


def test_jump_labels_at_small_eps():
    cfg, grid, e, z0 = build("homogeneous", solver={"eps": 0.01, "n_steps": 250})
    p = V.classify_regimes(V.reparameterize(run(e, cfg.solver(), z0)), V.Thresholds.default(grid, z0))
    assert p.regimes[0] == V.JUMP and not p.flags[0]
    assert p.regimes[-1] == V.STUCK


@settings(max_examples=200, deadline=None)
@given(alpha=st.floats(1e-6, 1.0), zeta=st.floats(0.0, 10.0), eps=st.floats(1e-4, 10.0),
       v=st.lists(st.floats(-5.0, 0.0), min_size=4, max_size=4))
def test_m_eps_dominates_m_zero(alpha, zeta, eps, v):
    grid = interval(1.0, 3)
    v = np.array(v)
    assert m_eps(grid, alpha, v, zeta, 0.5, eps) >= m_zero(grid, 0.0, v, zeta, 0.5) - 1e-12 * (1 + zeta)


def test_m_eps_dominates_on_runs(homogeneous_run, small_ramp_run):
    for traj in (homogeneous_run, small_ramp_run):
        assert V.m_eps_dominates_m_zero(V.reparameterize(traj)) == 0


def test_normalized_distance_zero_for_self(small_ramp_run):
    p = V.reparameterize(small_ramp_run)
    assert V.normalized_distance(p, p) == 0.0


def test_eps_sequence():
    seq = V.eps_sequence(0.5, 3)
    assert seq == [(0.5, 1.0), (0.25, 0.5), (0.125, 0.25)]
    assert V.eps_sequence(0.5, 2, tau0=0.6) == [(0.5, 0.6), (0.25, 0.5)]


def test_static_sweep_and_workers():
    cfg, grid, e, z0 = build("frozen")
    levels = V.eps_sequence(0.2, 3, tau0=0.05)
    args = (cfg.solver(), grid, cfg.model(), cfg.loads(), z0, levels)
    serial = V.viscosity_sweep(*args, workers=1)
    assert all(lv.ok for lv in serial.levels)
    assert serial.s_eps == [pytest.approx(cfg["loads"]["horizon"])] * 3
    assert serial.distances == [0.0, 0.0]
    parallel = V.viscosity_sweep(*args, workers=2)
    assert parallel.s_eps == serial.s_eps
    for a, b in zip(serial.levels, parallel.levels):
        np.testing.assert_array_equal(a.trajectory.states[-1], b.trajectory.states[-1])


def test_sweep_rejects_nondividing_tau():
    cfg, grid, e, z0 = build("frozen")
    with pytest.raises(ValueError):
        V.viscosity_sweep(cfg.solver(), grid, cfg.model(), cfg.loads(), z0, [(0.1, 0.3)])
