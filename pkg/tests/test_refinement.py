import math

import numpy as np
import pytest

from vvdamage.refinement import TauStudy, space_time_distance, tau_study
from vvdamage.stepper import run

from conftest import build


def recursion(z, eps, kappa, tau, n):
    out = [z]
    for _ in range(n):
        z = (eps * z + tau * kappa) / (eps + 2 * tau)
        out.append(z)
    return np.array(out)


def gauss3_distance(ta, za, tb, zb, length):
    """Independent oracle: 3-point Gauss-Legendre on every merged interval."""
    nodes, weights = np.polynomial.legendre.leggauss(3)
    grid = np.union1d(ta, tb)
    total = 0.0
    for a, b in zip(grid[:-1], grid[1:]):
        t = 0.5 * (a + b) + 0.5 * (b - a) * nodes
        d = np.interp(t, ta, za) - np.interp(t, tb, zb)
        total += 0.5 * (b - a) * np.dot(weights, d * d)
    return math.sqrt(length * total)


def test_homogeneous_distances_match_closed_form():
    cfg, grid, e, z0 = build("homogeneous")
    study = tau_study(cfg.solver(), grid, cfg.model(), cfg.loads(), z0, levels=3)
    eps, kappa, T = cfg["solver"]["eps"], cfg["material"]["kappa"], cfg["loads"]["horizon"]
    n0 = cfg["solver"]["n_steps"]
    series = []
    for j in range(3):
        n = n0 * 2**j
        series.append((np.linspace(0.0, T, n + 1), recursion(cfg["initial"]["value"], eps, kappa, T / n, n)))
    for j in range(2):
        ref = gauss3_distance(*series[j], *series[j + 1], cfg["mesh"]["lx"])
        assert study.distances[j] == pytest.approx(ref, rel=1e-8, abs=1e-12)
    assert all(f is None for f in study.failures)


def test_frozen_distances_vanish():
    cfg, grid, e, z0 = build("frozen")
    study = tau_study(cfg.solver(), grid, cfg.model(), cfg.loads(), z0, levels=3)
    assert study.distances == [0.0, 0.0]
    assert all(math.isnan(r) for r in study.ratios)


def test_distance_symmetry_and_zero(small_ramp_run):
    assert space_time_distance(small_ramp_run, small_ramp_run) == 0.0
    cfg, grid, e, z0 = build("ramp1d", mesh={"nx": 30}, solver={"n_steps": 30})
    coarse = run(e, cfg.solver(), z0)
    d = space_time_distance(small_ramp_run, coarse)
    assert d == pytest.approx(space_time_distance(coarse, small_ramp_run), rel=1e-14)
    assert d > 0.0


def test_horizon_mismatch(small_ramp_run, homogeneous_run):
    with pytest.raises(ValueError):
        space_time_distance(small_ramp_run, homogeneous_run)


def test_ratios_and_orders():
    s = TauStudy(taus=[0.4, 0.2, 0.1], trajectories=[None] * 3, failures=[None] * 3, distances=[0.8, 0.4])
    assert s.ratios == [0.5] and s.orders == [1.0]
    rows = list(s.rows())
    assert rows[1][:5] == (1, 0.2, 0.4, 0.5, 1.0)
    assert math.isnan(rows[2][2])


def test_workers_match_serial():
    cfg, grid, e, z0 = build("ramp1d", mesh={"nx": 20}, solver={"n_steps": 20})
    args = (cfg.solver(), grid, cfg.model(), cfg.loads(), z0, 2)
    assert tau_study(*args, workers=2).distances == tau_study(*args, workers=1).distances
