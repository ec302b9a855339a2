import math

import numpy as np
import pytest

from vvdamage.diagnostics import chain_rule_residuals, energy_gap_series
from vvdamage.energy import ReducedEnergy, SolverFailure
from vvdamage.grid import interval
from vvdamage.loads import static_loads
from vvdamage.material import MaterialModel, constant, square
from vvdamage.stepper import (
    RunFailure, SolverConfig, incremental_step, interpolants, kkt_residual, r1_integral, reps_of_rate, run,
)

from conftest import build


def scalar_energy(kappa=0.4, n=4):
    grid = interval(1.0, n)
    return ReducedEnergy(grid, MaterialModel(q=4.0, kappa=kappa, f=square(), g=constant(1.0)), static_loads(5.0))


def test_closed_form_scalar_step():
    e = scalar_energy()
    cfg = SolverConfig(tau=0.1, eps=1.0, n_steps=50)
    zp = np.full(e.grid.n_nodes, 0.8)
    z, rep, rec = incremental_step(e, 0.1, zp, cfg)
    np.testing.assert_allclose(z, 0.84 / 1.2, atol=1e-12)
    assert rec.kkt <= 1e-10
    assert kkt_residual(e, np.full_like(zp, 0.7), zp, 0.1, cfg) <= 1e-10
    assert rec.basic_gap >= 0.0 and rec.accepted


def test_locally_stable_state_is_frozen():
    e = scalar_energy(kappa=0.4)
    cfg = SolverConfig(tau=0.1, eps=1.0, n_steps=50)
    zp = np.full(e.grid.n_nodes, 0.15)  # 2 z = 0.3 < kappa
    z, _, rec = incremental_step(e, 0.1, zp, cfg)
    np.testing.assert_array_equal(z, zp)
    assert rec.kkt == 0.0 and rec.r1_dissipation == 0.0 and rec.d2 == 0.0


def test_zero_state_stays_zero_with_box():
    e = scalar_energy(kappa=0.01)
    cfg = SolverConfig(tau=0.1, eps=1.0, n_steps=50)
    z, _, _ = incremental_step(e, 0.1, np.zeros(e.grid.n_nodes), cfg)
    np.testing.assert_array_equal(z, 0.0)


def test_kkt_detects_perturbations(small_ramp_run):
    traj = small_ramp_run
    e, cfg = traj.energy_model, traj.config
    k = max(range(traj.n_completed), key=lambda j: traj.records[j].rate_norm)
    zp, zn = traj.states[k], traj.states[k + 1]
    assert kkt_residual(e, zn, zp, traj.times[k + 1], cfg) <= cfg.tol_el
    rng = np.random.default_rng(0)
    bumped = zn - 0.01 * rng.uniform(0.5, 1.0, zn.size)
    assert kkt_residual(e, bumped, zp, traj.times[k + 1], cfg) > cfg.tol_el
    with pytest.raises(ValueError):
        kkt_residual(e, zp + 0.01, zp, traj.times[k + 1], cfg)


def test_homogeneous_recursion(homogeneous_run):
    traj = homogeneous_run
    eps, tau = traj.config.eps, traj.config.tau
    z = 0.8
    for k in range(traj.config.n_steps):
        z = (eps * z + tau * 0.4) / (eps + 2 * tau)
        assert np.max(np.abs(traj.states[k + 1] - z)) <= 1e-8


def test_frozen_preset_has_no_dissipation():
    cfg, grid, e, z0 = build("frozen")
    traj = run(e, cfg.solver(), z0)
    for z in traj.states:
        np.testing.assert_array_equal(z, z0)
    assert all(r.r1_dissipation == 0 and r.visc_dissipation == 0 for r in traj.records)


def test_ramp_invariants(small_ramp_run):
    traj = small_ramp_run
    assert traj.invariant_violations() == []
    assert all(r.kkt <= traj.config.tol_el for r in traj.records)
    assert traj.basic_energy_estimate_gap() >= 0.0
    # running energy inequality with frozen-damage power
    assert energy_gap_series(traj).min() >= -1e-8 * (1 + abs(traj.initial_energy))


def test_dissipation_records_match_potentials(small_ramp_run):
    traj = small_ramp_run
    tau = traj.config.tau
    for k in range(0, traj.n_completed, 7):
        r = traj.records[k]
        assert tau * reps_of_rate(traj, k) == pytest.approx(r.r1_dissipation + r.visc_dissipation, rel=1e-10, abs=1e-15)


def test_interpolants(small_ramp_run):
    traj = small_ramp_run
    it = interpolants(traj)
    k = 10
    tk, tk1 = traj.times[k], traj.times[k + 1]
    np.testing.assert_array_equal(it.z_hat(tk), traj.states[k])
    np.testing.assert_allclose(it.z_hat(0.5 * (tk + tk1)), 0.5 * (traj.states[k] + traj.states[k + 1]), atol=1e-15)
    mid = 0.5 * (tk + tk1)
    np.testing.assert_array_equal(it.z_bar(mid), traj.states[k + 1])
    np.testing.assert_array_equal(it.z_under(mid), traj.states[k])
    assert it.t_bar(mid) == tk1 and it.t_under(mid) == tk
    np.testing.assert_allclose(it.z_hat_rate(mid), traj.rate(k))
    with pytest.raises(ValueError):
        it.z_hat(traj.times[-1] + 0.1)
    total = traj.kappa * float(np.dot(traj.grid.lumped_mass, traj.states[0] - traj.states[-1]))
    assert r1_integral(traj) == pytest.approx(total, rel=1e-12)


def test_chain_rule_residual_is_first_order():
    sums = []
    for n in (40, 80):
        cfg, grid, e, z0 = build("ramp1d", mesh={"nx": 30}, solver={"n_steps": n})
        sums.append(chain_rule_residuals(run(e, cfg.solver(), z0)).sum())
    assert sums[1] <= 0.6 * sums[0]


def test_step_count_must_match_horizon():
    e = scalar_energy()
    with pytest.raises(ValueError):
        run(e, SolverConfig(tau=0.1, eps=1.0, n_steps=3), np.full(e.grid.n_nodes, 0.5))


def test_config_checks():
    with pytest.raises(ValueError):
        SolverConfig(tau=0.0, eps=1.0, n_steps=1)
    with pytest.raises(ValueError):
        SolverConfig(tau=0.5, eps=0.1, n_steps=1, require_tau_le_2eps=True)
    assert SolverConfig.uniform(2.0, 8, 0.5).tau == 0.25


def test_run_failure_keeps_partial_trajectory(monkeypatch):
    cfg, grid, e, z0 = build("ramp1d", mesh={"nx": 10}, solver={"n_steps": 10})
    original = e.report

    def flaky(t, z, u_min=None):
        if t > 0.45:
            raise SolverFailure("injected")
        return original(t, z, u_min)

    monkeypatch.setattr(e, "report", flaky)
    with pytest.raises(RunFailure) as info:
        run(e, cfg.solver(), z0)
    assert info.value.step == 4
    assert info.value.trajectory.n_completed == 4
    assert "injected" in info.value.trajectory.failure


def test_multistart_reports_gap():
    cfg, grid, e, z0 = build("ramp1d", mesh={"nx": 10}, solver={"n_steps": 10, "multistart": True})
    traj = run(e, cfg.solver(), z0)
    gaps = [r.multistart_gap for r in traj.records]
    assert all(math.isfinite(g) for g in gaps)
    # both starts converge to the same stationary point on this benchmark
    assert max(gaps) <= 1e-8


@pytest.mark.parametrize("name, overrides", [("ramp1d", {"mesh": {"nx": 8}}),
                                             ("notch2d", {"mesh": {"nx": 3, "ny": 3}})])
def test_subproblem_hessian_is_jacobian(name, overrides, rng):
    from vvdamage.stepper import _DamageSubproblem

    cfg, grid, e, z0 = build(name, **overrides)
    z = rng.uniform(0.2, 0.9, grid.n_nodes)
    sub = _DamageSubproblem(e, z0, e.report(0.5, z).strain_energy, cfg.solver())
    H = grid.block_pattern.matrix(sub.hessian(z)).toarray()
    h = 1e-6
    for i in range(grid.n_nodes):
        dz = np.zeros(grid.n_nodes)
        dz[i] = h
        col = (sub.gradient(z + dz) - sub.gradient(z - dz)) / (2 * h)
        np.testing.assert_allclose(H[:, i], col, rtol=1e-6, atol=1e-7)
    np.testing.assert_allclose(H, H.T, atol=1e-14)
