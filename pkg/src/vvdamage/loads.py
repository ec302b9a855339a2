"""Time-dependent Dirichlet data and body loads.

A load program is a product of a scalar time profile and a fixed spatial
shape, separately for the prescribed displacement and the force density.
Everything is a plain dataclass so programs pickle across worker processes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grid import Grid


@dataclass(frozen=True)
class TimeProfile:
    """Scalar amplitude ``a(t)`` with exact derivative.

    kinds
        ``zero``; ``ramp`` (``amplitude * t``); ``cycle``
        (``amplitude * sin(2 pi t / period)``); ``hold`` (``amplitude`` times
        the quintic smoothstep of ``t / t_ramp``, constant afterwards).
    """

    kind: str = "zero"
    amplitude: float = 0.0
    period: float = 1.0
    t_ramp: float = 1.0

    def __post_init__(self):
        if self.kind not in ("zero", "ramp", "cycle", "hold"):
            raise ValueError(f"unknown time profile {self.kind!r}")
        if self.period <= 0 or self.t_ramp <= 0:
            raise ValueError("period and t_ramp must be positive")

    def value(self, t: float) -> float:
        a = self.amplitude
        if self.kind == "ramp":
            return a * t
        if self.kind == "cycle":
            return a * math.sin(2.0 * math.pi * t / self.period)
        if self.kind == "hold":
            x = min(max(t / self.t_ramp, 0.0), 1.0)
            return a * x**3 * (10.0 - 15.0 * x + 6.0 * x * x)
        return 0.0

    def derivative(self, t: float) -> float:
        a = self.amplitude
        if self.kind == "ramp":
            return a
        if self.kind == "cycle":
            w = 2.0 * math.pi / self.period
            return a * w * math.cos(w * t)
        if self.kind == "hold":
            x = min(max(t / self.t_ramp, 0.0), 1.0)
            return a * 30.0 * x * x * (1.0 - x) ** 2 / self.t_ramp
        return 0.0

    @property
    def is_static(self) -> bool:
        return self.kind == "zero" or self.amplitude == 0.0


def _shape(grid: Grid, name: str) -> np.ndarray:
    """Nodal vector shape ``(n_nodes, dim)``."""
    out = np.zeros((grid.n_nodes, grid.dim))
    x = grid.vertices[:, 0]
    length = x.max() - x.min()
    if name == "none":
        return out
    if name == "linear_x":
        # x-displacement proportional to x, unit value on the far end
        out[:, 0] = (x - x.min()) / length
        return out
    if name == "uniform_x":
        out[:, 0] = 1.0
        return out
    raise ValueError(f"unknown spatial shape {name!r}")


@dataclass(frozen=True)
class LoadProgram:
    """Dirichlet datum ``u_D(t) = a(t) phi`` and load ``ell(t) = b(t) psi``."""

    horizon: float = 1.0
    dirichlet_time: TimeProfile = field(default_factory=TimeProfile)
    dirichlet_shape: str = "linear_x"
    force_time: TimeProfile = field(default_factory=TimeProfile)
    force_shape: str = "uniform_x"

    def __post_init__(self):
        if not self.horizon > 0:
            raise ValueError("the time horizon T must be positive")

    def _check_time(self, t: float) -> None:
        if not (-1e-12 * self.horizon <= t <= self.horizon * (1 + 1e-12)):
            raise ValueError(f"time {t} outside [0, {self.horizon}]")

    def u_dirichlet(self, grid: Grid, t: float) -> np.ndarray:
        self._check_time(t)
        return self.dirichlet_time.value(t) * _shape(grid, self.dirichlet_shape)

    def u_dirichlet_dot(self, grid: Grid, t: float) -> np.ndarray:
        self._check_time(t)
        return self.dirichlet_time.derivative(t) * _shape(grid, self.dirichlet_shape)

    def ell(self, grid: Grid, t: float) -> np.ndarray:
        self._check_time(t)
        return self.force_time.value(t) * _shape(grid, self.force_shape)

    def ell_dot(self, grid: Grid, t: float) -> np.ndarray:
        self._check_time(t)
        return self.force_time.derivative(t) * _shape(grid, self.force_shape)

    @property
    def is_static(self) -> bool:
        return self.dirichlet_time.is_static and self.force_time.is_static


def static_loads(horizon: float = 1.0) -> LoadProgram:
    return LoadProgram(horizon=horizon)
