import numpy as np
import pytest

from vvdamage.config import RunConfig
from vvdamage.energy import ReducedEnergy
from vvdamage.stepper import run


def build(name, **overrides):
    cfg = RunConfig.from_preset(name, **overrides)
    grid = cfg.grid()
    energy = ReducedEnergy(grid, cfg.model(), cfg.loads())
    return cfg, grid, energy, cfg.z0(grid)


@pytest.fixture(scope="session")
def homogeneous_run():
    cfg, grid, energy, z0 = build("homogeneous")
    return run(energy, cfg.solver(), z0)


@pytest.fixture(scope="session")
def small_ramp_run():
    """A coarse version of the ramp benchmark: 30 elements, 60 steps."""
    cfg, grid, energy, z0 = build("ramp1d", mesh={"nx": 30}, solver={"n_steps": 60})
    return run(energy, cfg.solver(), z0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
