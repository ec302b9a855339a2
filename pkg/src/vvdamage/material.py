"""Constitutive data and the dissipation functionals.

Rates and dual fields are nodal arrays. Dual fields are stored as nodal
densities (the lumped Riesz representative), so the subdifferential of the
one-homogeneous dissipation at zero becomes the nodal box
``{mu : mu_i >= -kappa}``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .grid import Grid, l2_norm

#: absolute tolerance for the indicator of {0} in the rate-independent limit
TOL_STAB = 1e-8


# ----------------------------------------------------------------------
# scalar constitutive functions
# ----------------------------------------------------------------------
@dataclass(frozen=True)
class ScalarFunction:
    """A C^2 scalar function with its first two derivatives (vectorized)."""

    name: str
    params: tuple = ()

    def __call__(self, z):
        return self._eval(np.asarray(z, dtype=float), 0)

    def d1(self, z):
        return self._eval(np.asarray(z, dtype=float), 1)

    def d2(self, z):
        return self._eval(np.asarray(z, dtype=float), 2)

    def _eval(self, z, order):
        if self.name == "square":
            return (z * z, 2.0 * z, np.full_like(z, 2.0))[order]
        if self.name == "constant":
            (c,) = self.params
            return np.full_like(z, c) if order == 0 else np.zeros_like(z)
        if self.name == "smoothstep":
            (delta,) = self.params
            x = np.clip(z, 0.0, 1.0)
            if order == 0:
                s = x**3 * (10.0 - 15.0 * x + 6.0 * x * x)
                return delta + (1.0 - delta) * s
            if order == 1:
                return (1.0 - delta) * 30.0 * x * x * (1.0 - x) ** 2
            return (1.0 - delta) * 60.0 * x * (1.0 - x) * (1.0 - 2.0 * x)
        if self.name == "polynomial":
            p = np.polynomial.Polynomial(self.params)
            return p.deriv(order)(z) if order else p(z)
        raise ValueError(f"unknown scalar function {self.name!r}")

    def describe(self) -> str:
        if not self.params:
            return self.name
        return f"{self.name}:{','.join(repr(float(p)) for p in self.params)}"


def square() -> ScalarFunction:
    return ScalarFunction("square")


def constant(c: float) -> ScalarFunction:
    return ScalarFunction("constant", (float(c),))


def smoothstep(delta: float = 0.1) -> ScalarFunction:
    """``delta + (1 - delta) s(z)`` with the C^2 clamp ``s = 6z^5 - 15z^4 + 10z^3``."""
    return ScalarFunction("smoothstep", (float(delta),))


def polynomial(coefficients) -> ScalarFunction:
    """Polynomial with ascending coefficients ``c0 + c1 z + c2 z^2 + ...``."""
    return ScalarFunction("polynomial", tuple(float(c) for c in coefficients))


def parse_function(text: str) -> ScalarFunction:
    """Parse ``name`` or ``name:p1,p2,...`` as written by :meth:`ScalarFunction.describe`."""
    name, _, rest = text.strip().partition(":")
    params = [float(p) for p in rest.split(",") if p.strip()] if rest else []
    builders = {
        "square": lambda: square(),
        "constant": lambda: constant(*params),
        "smoothstep": lambda: smoothstep(*params),
        "polynomial": lambda: polynomial(params),
    }
    if name not in builders:
        raise ValueError(f"unknown function preset {name!r}")
    try:
        return builders[name]()
    except TypeError as exc:
        raise ValueError(f"bad parameters for {name!r}: {rest!r}") from exc


# ----------------------------------------------------------------------
# material model
# ----------------------------------------------------------------------
_SAMPLES = np.linspace(-0.25, 1.25, 601)


@dataclass(frozen=True)
class MaterialModel:
    """Constitutive data of the damage model.

    ``youngs`` is used in 1D; ``lame_lambda``/``lame_mu`` in 2D.
    """

    q: float = 4.0
    kappa: float = 1.0
    f: ScalarFunction = field(default_factory=square)
    g: ScalarFunction = field(default_factory=smoothstep)
    youngs: float = 1.0
    lame_lambda: float = 0.0
    lame_mu: float = 1.0

    def __post_init__(self):
        if not self.q >= 2.0:
            raise ValueError(f"q must be >= 2, got {self.q}")
        if not self.kappa > 0.0:
            raise ValueError(f"kappa must be positive, got {self.kappa}")
        if not self.youngs > 0.0:
            raise ValueError("the Young modulus must be positive")
        if not (self.lame_mu > 0.0 and self.lame_lambda >= 0.0):
            raise ValueError("Lame constants need mu > 0 and lambda >= 0")
        gs = self.g(_SAMPLES)
        if not np.all(gs > 0.0):
            raise ValueError("g must be bounded below by a positive constant")
        if not np.all(np.isfinite(self.g.d1(_SAMPLES))):
            raise ValueError("g' must be bounded")

    @property
    def gamma1(self) -> float:
        return float(self.g(_SAMPLES).min())

    @property
    def gamma2(self) -> float:
        return float(self.g(_SAMPLES).max())

    def elasticity_matrix(self, dim: int) -> np.ndarray:
        """Voigt matrix with engineering shear strain (2D) or the modulus (1D)."""
        if dim == 1:
            return np.array([[self.youngs]])
        lam, mu = self.lame_lambda, self.lame_mu
        return np.array([[lam + 2 * mu, lam, 0.0], [lam, lam + 2 * mu, 0.0], [0.0, 0.0, mu]])

    def gamma0(self, dim: int) -> float:
        """Coercivity constant of the elasticity tensor on symmetric strains."""
        return self.youngs if dim == 1 else 2.0 * self.lame_mu

    def satisfies_box_condition(self) -> bool:
        """Check ``f(0) <= f(z)`` and ``g(0) <= g(z)`` for sampled ``z <= 0``."""
        zs = np.linspace(-2.0, 0.0, 401)
        tol = 1e-14
        return bool(np.all(self.f(zs) >= self.f(0.0) - tol) and np.all(self.g(zs) >= self.g(0.0) - tol))


# ----------------------------------------------------------------------
# dissipation potentials
# ----------------------------------------------------------------------
def _sign_tol(rate: np.ndarray) -> float:
    return 1e-12 * float(np.max(np.abs(rate), initial=0.0))


def r1(grid: Grid, rate, kappa: float) -> float:
    """Rate-independent dissipation; ``inf`` for any healing rate."""
    rate = grid.check_field(rate)
    if np.any(rate > _sign_tol(rate)):
        return math.inf
    return kappa * float(np.dot(grid.lumped_mass, np.abs(np.minimum(rate, 0.0))))


def r_eps(grid: Grid, rate, kappa: float, eps: float) -> float:
    """``r1`` plus the quadratic viscosity ``(eps/2) ||rate||^2``."""
    value = r1(grid, rate, kappa)
    if math.isinf(value):
        return value
    return value + 0.5 * eps * l2_norm(grid, rate) ** 2


def project_onto_subdiff_r1_at_zero(xi, kappa: float) -> np.ndarray:
    """Lumped-L2 projection of a nodal density onto ``{mu : mu_i >= -kappa}``."""
    return np.maximum(np.asarray(xi, dtype=float), -kappa)


def d2_distance(grid: Grid, xi, kappa: float) -> float:
    """Lumped-L2 distance of ``xi`` to the subdifferential of ``r1`` at zero."""
    xi = grid.check_field(xi)
    gap = np.minimum(xi + kappa, 0.0)
    return float(np.sqrt(np.dot(grid.lumped_mass, gap * gap)))


def conj_r_eps(grid: Grid, xi, kappa: float, eps: float) -> float:
    """Convex conjugate of ``r_eps``: ``d2(xi)^2 / (2 eps)``."""
    if not eps > 0.0:
        raise ValueError("the conjugate needs eps > 0; use m_zero for the limit")
    return d2_distance(grid, xi, kappa) ** 2 / (2.0 * eps)


def m_eps(grid: Grid, alpha: float, v, zeta: float, kappa: float, eps: float) -> float:
    """Viscous dissipation functional of the arclength reparameterization.

    ``r1(v) + eps/(2 alpha) ||v||^2 + alpha/(2 eps) zeta^2`` for ``alpha > 0``;
    for ``alpha <= 0`` the lower semicontinuous extension (0 for ``v = 0``,
    infinite otherwise).
    """
    if not eps > 0.0:
        raise ValueError("m_eps needs eps > 0")
    v = grid.check_field(v)
    if alpha <= 0.0:
        return 0.0 if not np.any(v) else math.inf
    base = r1(grid, v, kappa)
    if math.isinf(base):
        return base
    return base + eps / (2.0 * alpha) * l2_norm(grid, v) ** 2 + alpha / (2.0 * eps) * zeta**2


def m_zero(grid: Grid, alpha: float, v, zeta: float, kappa: float, tol_stab: float = TOL_STAB) -> float:
    """Limit functional: ``r1(v) + zeta ||v||`` at ``alpha = 0``, else ``r1(v) + I_0(zeta)``."""
    v = grid.check_field(v)
    base = r1(grid, v, kappa)
    if math.isinf(base):
        return base
    if alpha <= 0.0:
        return base + zeta * l2_norm(grid, v)
    return base if zeta <= tol_stab else math.inf
