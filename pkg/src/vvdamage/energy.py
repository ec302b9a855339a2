"""Reduced energy: elasticity solve, energy parts and their derivatives.

The stiffness-weight ``g(z)`` is evaluated at element centroids and the
lower-order integral ``int f(z)`` with the lumped mass; both choices make
:meth:`ReducedEnergy.dz` the exact gradient of the discrete energy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .grid import Grid, aq_energy, assemble_Aq_residual
from .loads import LoadProgram
from .material import MaterialModel

TOL_LIN = 1e-11


class SolverFailure(RuntimeError):
    """A linear or nonlinear solve did not converge."""


@dataclass
class EnergyReport:
    t: float
    total: float
    grad_part: float
    f_part: float
    elastic_part: float
    dt_I: float
    u_min: np.ndarray  # (n_nodes, dim)
    u_total: np.ndarray  # u_min + u_D
    strain_energy: np.ndarray  # per element, per unit g: (1/2) C eps(u):eps(u)


@dataclass
class EnergyGradient:
    """Gateaux derivative of the reduced energy as nodal densities."""

    aq_part: np.ndarray
    lower_order_part: np.ndarray
    lumped_mass: np.ndarray

    @property
    def density(self) -> np.ndarray:
        return self.aq_part + self.lower_order_part

    @property
    def pairing(self) -> np.ndarray:
        """Entries ``<D_z I, phi_i>``."""
        return self.density * self.lumped_mass


class ReducedEnergy:
    """Reduced energy ``I(t, z)`` of a fixed grid, material and load program.

    The element stiffness matrices and the global sparsity pattern are built
    once; each solve only rescales element blocks by ``g`` at the centroids.
    """

    def __init__(self, grid: Grid, model: MaterialModel, loads: LoadProgram):
        self.grid, self.model, self.loads = grid, model, loads
        d = grid.dim
        self.D = model.elasticity_matrix(d)
        gr = grid.basis_gradients  # (ne, d+1, d)
        ne, k = grid.n_elements, d + 1
        nd = k * d
        B = np.zeros((ne, self.D.shape[0], nd))
        if d == 1:
            B[:, 0, :] = gr[:, :, 0]
        else:
            B[:, 0, 0::2] = gr[:, :, 0]
            B[:, 1, 1::2] = gr[:, :, 1]
            B[:, 2, 0::2] = gr[:, :, 1]
            B[:, 2, 1::2] = gr[:, :, 0]
        self.B = B
        self.K0 = grid.element_measures[:, None, None] * np.einsum("eki,kl,elj->eij", B, self.D, B)
        self.edofs = (grid.elements[:, :, None] * d + np.arange(d)).reshape(ne, nd)

        ndof = grid.n_nodes * d
        fixed = np.zeros(ndof, dtype=bool)
        fixed[(grid.dirichlet_nodes[:, None] * d + np.arange(d)).ravel()] = True
        self.free = np.flatnonzero(~fixed)
        reduced = np.full(ndof, -1)
        reduced[self.free] = np.arange(self.free.size)
        rows = np.broadcast_to(self.edofs[:, :, None], (ne, nd, nd)).ravel()
        cols = np.broadcast_to(self.edofs[:, None, :], (ne, nd, nd)).ravel()
        keep = (reduced[rows] >= 0) & (reduced[cols] >= 0)
        self._keep = np.flatnonzero(keep)
        # scatter map from element-block entries to the fixed csc data array
        coo = sp.coo_matrix(
            (np.ones(self._keep.size), (reduced[rows[keep]], reduced[cols[keep]])),
            shape=(self.free.size, self.free.size),
        ).tocsc()
        coo.sum_duplicates()
        self._indptr, self._indices = coo.indptr, coo.indices
        lookup = sp.csc_matrix(
            (np.arange(coo.nnz, dtype=float), coo.indices, coo.indptr), shape=coo.shape
        )
        pos = np.asarray(lookup[reduced[rows[keep]], reduced[cols[keep]]]).ravel().astype(np.int64)
        self._scatter = sp.csr_matrix(
            (np.ones(pos.size), (pos, np.arange(pos.size))), shape=(coo.nnz, pos.size)
        )
        self.mass = grid.lumped_mass
        self._avg = grid.average_matrix

    # ------------------------------------------------------------------
    def centroid_values(self, z) -> np.ndarray:
        return self._avg @ z

    def stiffness(self, z) -> sp.csc_matrix:
        """Free-free block of the degraded stiffness matrix."""
        gz = self.model.g(self.centroid_values(z))
        blocks = (gz[:, None, None] * self.K0).ravel()[self._keep]
        data = self._scatter @ blocks
        n = self.free.size
        return sp.csc_matrix((data, self._indices, self._indptr), shape=(n, n))

    def _element_apply(self, z, u_nodal: np.ndarray) -> np.ndarray:
        """Global vector ``K(z) u`` assembled element by element."""
        gz = self.model.g(self.centroid_values(z))
        ue = u_nodal.ravel()[self.edofs]
        fe = gz[:, None] * np.einsum("eij,ej->ei", self.K0, ue)
        out = np.zeros(u_nodal.size)
        np.add.at(out, self.edofs, fe)
        return out

    def _force(self, t: float) -> np.ndarray:
        ell = self.loads.ell(self.grid, t)
        return (ell * self.mass[:, None]).ravel()

    def solve_elasticity(self, t: float, z) -> np.ndarray:
        """Displacement correction ``u_min`` (zero on the Dirichlet nodes)."""
        z = self.grid.check_field(z)
        d = self.grid.dim
        uD = self.loads.u_dirichlet(self.grid, t)
        rhs = (self._force(t) - self._element_apply(z, uD))[self.free]
        u = np.zeros(self.grid.n_nodes * d)
        if not np.any(rhs):
            return u.reshape(-1, d)
        K = self.stiffness(z)
        try:
            lu = spla.splu(K)
        except RuntimeError as exc:
            raise SolverFailure(f"singular elasticity system at t={t}: {exc}") from exc
        x = lu.solve(rhs)
        scale = np.linalg.norm(rhs)
        res = rhs - K @ x
        if np.linalg.norm(res) > TOL_LIN * scale:
            x += lu.solve(res)
            res = rhs - K @ x
            if np.linalg.norm(res) > TOL_LIN * scale:
                raise SolverFailure(
                    f"elasticity residual {np.linalg.norm(res) / scale:.3e} above tolerance at t={t}"
                )
        u[self.free] = x
        return u.reshape(-1, d)

    def element_strain_energy(self, u_total: np.ndarray) -> np.ndarray:
        """Per-element ``(1/2) C eps(u):eps(u)`` (without the factor ``g``)."""
        ue = u_total.ravel()[self.edofs]
        eps = np.einsum("evj,ej->ev", self.B, ue)
        return 0.5 * np.einsum("ev,vw,ew->e", eps, self.D, eps)

    def _element_stress_work(self, u_a: np.ndarray, u_b: np.ndarray) -> np.ndarray:
        ea = np.einsum("evj,ej->ev", self.B, u_a.ravel()[self.edofs])
        eb = np.einsum("evj,ej->ev", self.B, u_b.ravel()[self.edofs])
        return np.einsum("ev,vw,ew->e", ea, self.D, eb)

    # ------------------------------------------------------------------
    def report(self, t: float, z, u_min: np.ndarray | None = None) -> EnergyReport:
        """All energy parts at ``(t, z)``; ``u_min`` is re-solved unless given."""
        z = self.grid.check_field(z)
        if u_min is None:
            u_min = self.solve_elasticity(t, z)
        grid, model = self.grid, self.model
        u_total = u_min + self.loads.u_dirichlet(grid, t)
        W = self.element_strain_energy(u_total)
        gz = model.g(self.centroid_values(z))
        ell = self.loads.ell(grid, t)
        work = float(np.sum(self.mass[:, None] * ell * u_min))
        elastic = float(np.dot(grid.element_measures, gz * W)) - work
        grad_part = aq_energy(grid, z, model.q)
        f_part = float(np.dot(self.mass, model.f(z)))
        dt_I = self._dt(t, z, u_min, u_total, gz)
        return EnergyReport(
            t=t,
            total=grad_part + f_part + elastic,
            grad_part=grad_part,
            f_part=f_part,
            elastic_part=elastic,
            dt_I=dt_I,
            u_min=u_min,
            u_total=u_total,
            strain_energy=W,
        )

    def value(self, t: float, z) -> float:
        return self.report(t, z).total

    def _dt(self, t, z, u_min, u_total, gz) -> float:
        if self.loads.is_static:
            return 0.0
        grid = self.grid
        uDdot = self.loads.u_dirichlet_dot(grid, t)
        stress = float(np.dot(grid.element_measures, gz * self._element_stress_work(u_total, uDdot)))
        ell_dot = self.loads.ell_dot(grid, t)
        return stress - float(np.sum(self.mass[:, None] * ell_dot * u_min))

    def dt(self, t: float, z) -> float:
        """Partial time derivative ``d_t I(t, z)``."""
        return self.report(t, z).dt_I

    def dz(self, t: float, z, report: EnergyReport | None = None) -> EnergyGradient:
        """Derivative in ``z`` via the envelope theorem (``u`` frozen at ``u_min``)."""
        z = self.grid.check_field(z)
        if report is None:
            report = self.report(t, z)
        grid, model = self.grid, self.model
        aq = assemble_Aq_residual(grid, z, model.q) / self.mass
        k = grid.dim + 1
        gprime = model.g.d1(self.centroid_values(z))
        nodal = np.zeros(grid.n_nodes)
        contrib = grid.element_measures * gprime * report.strain_energy / k
        np.add.at(nodal, grid.elements, np.repeat(contrib[:, None], k, axis=1))
        lower = model.f.d1(z) + nodal / self.mass
        return EnergyGradient(aq_part=aq, lower_order_part=lower, lumped_mass=self.mass)

    def stored_energy(self, t: float, z, v: np.ndarray) -> float:
        """``E_2(t, v, z)`` for an arbitrary displacement correction ``v``."""
        v = np.array(v, dtype=float).reshape(-1, self.grid.dim)
        v.ravel()[np.setdiff1d(np.arange(v.size), self.free)] = 0.0
        u_total = v + self.loads.u_dirichlet(self.grid, t)
        gz = self.model.g(self.centroid_values(z))
        W = self.element_strain_energy(u_total)
        ell = self.loads.ell(self.grid, t)
        return float(np.dot(self.grid.element_measures, gz * W)) - float(
            np.sum(self.mass[:, None] * ell * v)
        )


# module-level entry points ----------------------------------------------
def solve_elasticity(energy: ReducedEnergy, t: float, z) -> np.ndarray:
    return energy.solve_elasticity(t, z)


def reduced_energy(energy: ReducedEnergy, t: float, z) -> EnergyReport:
    return energy.report(t, z)


def dt_energy(energy: ReducedEnergy, t: float, z) -> float:
    return energy.dt(t, z)


def dz_energy(energy: ReducedEnergy, t: float, z) -> EnergyGradient:
    return energy.dz(t, z)


def convexity_shift(energy: ReducedEnergy, t: float, pairs) -> float:
    """Smallest ``c`` making ``z -> I(t, z) + (c/2)||z||^2`` midpoint convex on ``pairs``."""
    worst = 0.0
    for a, b in pairs:
        diff = np.asarray(a) - np.asarray(b)
        n2 = float(np.dot(energy.mass, diff * diff))
        if n2 == 0.0:
            continue
        defect = energy.value(t, 0.5 * (a + b)) - 0.5 * (energy.value(t, a) + energy.value(t, b))
        worst = max(worst, 8.0 * defect / n2)
    return worst
