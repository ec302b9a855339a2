import numpy as np
import pytest

from vvdamage.energy import ReducedEnergy, convexity_shift
from vvdamage.grid import interval, rectangle
from vvdamage.loads import LoadProgram, TimeProfile, static_loads
from vvdamage.material import MaterialModel, constant, smoothstep, square


def bar(n=8, g=constant(1.0), profile=TimeProfile("ramp", 1.0), **kw):
    """Bar on (0, 1) clamped at both ends with u_D = a(t) x."""
    grid = interval(1.0, n)
    return ReducedEnergy(grid, MaterialModel(q=4.0, kappa=1.0, f=square(), g=g, **kw), LoadProgram(1.0, profile))


def test_zero_data_gives_zero_displacement():
    grid = rectangle(1.0, 1.0, 3, 3)
    e = ReducedEnergy(grid, MaterialModel(), static_loads())
    z = np.random.default_rng(0).uniform(0, 1, grid.n_nodes)
    np.testing.assert_array_equal(e.solve_elasticity(0.5, z), 0.0)


@pytest.mark.parametrize("t", [0.0, 0.3, 1.0])
def test_bar_hand_solution(t):
    e = bar()
    z = np.random.default_rng(1).uniform(0, 1, e.grid.n_nodes)
    rep = e.report(t, z)
    np.testing.assert_allclose(rep.u_min, 0.0, atol=1e-14)
    assert rep.elastic_part == pytest.approx(t * t / 2, abs=1e-14)
    assert rep.dt_I == pytest.approx(t, abs=1e-14)


def test_bar_total_at_unit_state():
    e = bar()
    rep = e.report(1.0, np.ones(e.grid.n_nodes))
    assert rep.total == pytest.approx(1.75, rel=1e-14)
    assert rep.total == pytest.approx(rep.grad_part + rep.f_part + rep.elastic_part, rel=1e-12)


def test_zero_state_energy_is_measure_over_q():
    grid = rectangle(2.0, 1.5, 3, 2)
    e = ReducedEnergy(grid, MaterialModel(q=4.0), static_loads())
    assert e.value(0.0, np.zeros(grid.n_nodes)) == pytest.approx(3.0 / 4.0, rel=1e-14)


@pytest.mark.parametrize("dirichlet,lam", [("left_right", 0.0), ("left_right_top_bottom", 1.0)])
def test_patch_test(dirichlet, lam):
    grid = rectangle(1.0, 1.0, 4, 4, dirichlet)
    e = ReducedEnergy(grid, MaterialModel(g=constant(0.7), lame_lambda=lam), LoadProgram(1.0, TimeProfile("ramp", 2.0)))
    rep = e.report(0.5, np.full(grid.n_nodes, 0.3))
    np.testing.assert_allclose(rep.u_min, 0.0, atol=1e-12)
    np.testing.assert_allclose(rep.strain_energy, rep.strain_energy[0], rtol=1e-12)


def test_minimizer_beats_random_competitors():
    grid = rectangle(1.0, 1.0, 4, 3)
    loads = LoadProgram(1.0, TimeProfile("ramp", 1.0), force_time=TimeProfile("ramp", 0.5))
    e = ReducedEnergy(grid, MaterialModel(lame_lambda=0.5), loads)
    rng = np.random.default_rng(2)
    z = rng.uniform(0.2, 1.0, grid.n_nodes)
    rep = e.report(0.7, z)
    assert e.stored_energy(0.7, z, rep.u_min) == pytest.approx(rep.elastic_part, rel=1e-12)
    assert rep.elastic_part <= e.stored_energy(0.7, z, np.zeros_like(rep.u_min)) + 1e-14
    for _ in range(20):
        v = rep.u_min + rng.normal(0.0, 0.05, rep.u_min.shape)
        assert rep.elastic_part <= e.stored_energy(0.7, z, v) + 1e-14


def test_static_loads_have_zero_power():
    grid = interval(1.0, 5)
    e = ReducedEnergy(grid, MaterialModel(), static_loads())
    assert e.dt(0.3, np.full(grid.n_nodes, 0.5)) == 0.0


def test_dt_central_difference_is_second_order():
    e = bar(n=10, g=smoothstep(0.1), profile=TimeProfile("cycle", 1.3, period=0.9))
    z = np.linspace(0.9, 0.3, e.grid.n_nodes)
    t = 0.37
    exact = e.dt(t, z)
    errs = [abs((e.value(t + h, z) - e.value(t - h, z)) / (2 * h) - exact) for h in (1e-2, 5e-3)]
    assert 3.5 <= errs[0] / errs[1] <= 4.5


def test_dz_trivial_cases():
    grid = interval(1.0, 6)
    e = ReducedEnergy(grid, MaterialModel(), static_loads())
    d = e.dz(0.0, np.full(grid.n_nodes, 0.6))
    np.testing.assert_allclose(d.aq_part, 0.0, atol=1e-14)
    np.testing.assert_allclose(d.lower_order_part, 1.2)
    e = bar(g=constant(2.0))
    z = np.random.default_rng(3).uniform(0, 1, e.grid.n_nodes)
    np.testing.assert_allclose(e.dz(0.4, z).lower_order_part, 2 * z, rtol=1e-14)


@pytest.mark.parametrize("grid", [interval(1.0, 7), rectangle(1.0, 1.0, 3, 3)])
def test_dz_matches_central_differences(grid):
    loads = LoadProgram(1.0, TimeProfile("ramp", 1.5), force_time=TimeProfile("cycle", 0.3))
    e = ReducedEnergy(grid, MaterialModel(lame_lambda=0.3), loads)
    rng = np.random.default_rng(4)
    for _ in range(5):
        t = rng.uniform(0.1, 0.9)
        z = rng.uniform(0.05, 0.95, grid.n_nodes)
        i = rng.integers(grid.n_nodes)
        ei = np.zeros(grid.n_nodes)
        ei[i] = 1.0
        h = 1e-5
        fd = (e.value(t, z + h * ei) - e.value(t, z - h * ei)) / (2 * h)
        assert e.dz(t, z).pairing[i] == pytest.approx(fd, rel=1e-5, abs=1e-9)


def test_convexity_shift_reported():
    e = bar(n=10, g=smoothstep(0.1), profile=TimeProfile("ramp", 3.0))
    rng = np.random.default_rng(5)
    pairs = [(rng.uniform(0, 1, e.grid.n_nodes), rng.uniform(0, 1, e.grid.n_nodes)) for _ in range(10)]
    c = convexity_shift(e, 1.0, pairs)
    assert c >= 0.0
    for a, b in pairs:
        shifted = lambda z: e.value(1.0, z) + 0.5 * c * float(np.dot(e.mass, z * z))  # noqa: E731
        assert shifted(0.5 * (a + b)) <= 0.5 * (shifted(a) + shifted(b)) + 1e-12
