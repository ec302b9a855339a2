"""P1 finite element grids on intervals and structured rectangles.

Fields are plain NumPy arrays of nodal values; every operation takes the
grid explicitly and checks that the field matches it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp


class GridError(ValueError):
    """Raised for malformed grids or fields that do not match a grid."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Grid:
    """Simplicial P1 mesh.

    Parameters
    ----------
    vertices : (n_nodes, dim) array
    elements : (n_elements, dim + 1) int array
    dirichlet_nodes : int array
        Nodes where the displacement is prescribed.

    All derived geometric data (element measures, basis gradients, the
    lumped mass) is computed once in ``__post_init__`` and frozen.
    """

    vertices: np.ndarray
    elements: np.ndarray
    dirichlet_nodes: np.ndarray
    element_measures: np.ndarray = field(init=False, repr=False)
    basis_gradients: np.ndarray = field(init=False, repr=False)
    lumped_mass: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        vertices = np.asarray(self.vertices, dtype=float)
        if vertices.ndim == 1:
            vertices = vertices[:, None]
        elements = np.asarray(self.elements, dtype=np.int64)
        dim = vertices.shape[1]
        if dim not in (1, 2):
            raise GridError(f"only 1D and 2D grids are supported, got dim={dim}")
        if elements.ndim != 2 or elements.shape[1] != dim + 1:
            raise GridError("elements must have dim + 1 vertices each")
        if elements.min() < 0 or elements.max() >= len(vertices):
            raise GridError("element connectivity refers to missing vertices")
        dirichlet = np.unique(np.asarray(self.dirichlet_nodes, dtype=np.int64))
        if dirichlet.size == 0:
            raise GridError("the Dirichlet boundary must contain at least one node")

        X = vertices[elements]  # (ne, dim+1, dim)
        M = np.concatenate([np.ones(X.shape[:2] + (1,)), X], axis=2)
        det = np.linalg.det(M)
        measures = np.abs(det) / (1.0 if dim == 1 else 2.0)
        if np.any(measures <= 0.0):
            raise GridError("every element must have positive measure")
        # rows 1.. of inv(M) hold the constant gradients of the basis functions
        grads = np.transpose(np.linalg.inv(M)[:, 1:, :], (0, 2, 1))

        mass = np.zeros(len(vertices))
        np.add.at(mass, elements, np.repeat(measures[:, None] / (dim + 1), dim + 1, axis=1))

        object.__setattr__(self, "vertices", _readonly(vertices))
        object.__setattr__(self, "elements", _readonly(elements))
        object.__setattr__(self, "dirichlet_nodes", _readonly(dirichlet))
        object.__setattr__(self, "element_measures", _readonly(measures))
        object.__setattr__(self, "basis_gradients", _readonly(grads))
        object.__setattr__(self, "lumped_mass", _readonly(mass))

    # ------------------------------------------------------------------
    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    @property
    def n_nodes(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    @property
    def measure(self) -> float:
        return float(self.element_measures.sum())

    def check_field(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if v.shape != (self.n_nodes,):
            raise GridError(f"field of shape {v.shape} does not match a grid with {self.n_nodes} nodes")
        if not np.all(np.isfinite(v)):
            raise GridError("field contains non-finite values")
        return v

    # cached sparse operators -------------------------------------------
    @property
    def gradient_matrix(self) -> sp.csr_matrix:
        """Sparse map from nodal values to stacked element gradients, shape (ne*dim, n)."""
        try:
            return self._gradient_matrix
        except AttributeError:
            ne, k, d = self.basis_gradients.shape
            rows = (np.arange(ne)[:, None, None] * d + np.arange(d)[None, None, :])
            rows = np.broadcast_to(rows, (ne, k, d))
            cols = np.broadcast_to(self.elements[:, :, None], (ne, k, d))
            G = sp.csr_matrix(
                (self.basis_gradients.ravel(), (rows.ravel(), cols.ravel())),
                shape=(ne * d, self.n_nodes),
            )
            object.__setattr__(self, "_gradient_matrix", G)
            return G

    @property
    def average_matrix(self) -> sp.csr_matrix:
        """Sparse map from nodal values to element means (centroid values)."""
        try:
            return self._average_matrix
        except AttributeError:
            ne, k = self.elements.shape
            P = sp.csr_matrix(
                (np.full(ne * k, 1.0 / k), (np.repeat(np.arange(ne), k), self.elements.ravel())),
                shape=(ne, self.n_nodes),
            )
            object.__setattr__(self, "_average_matrix", P)
            return P

    @property
    def block_pattern(self) -> "BlockPattern":
        """Fixed CSR pattern of element-block matrices (node couplings within elements)."""
        try:
            return self._block_pattern
        except AttributeError:
            pattern = BlockPattern.build(self.elements, self.n_nodes)
            object.__setattr__(self, "_block_pattern", pattern)
            return pattern

    @property
    def stiffness_matrix(self) -> sp.csr_matrix:
        """Standard P1 Laplace stiffness matrix."""
        G = self.gradient_matrix
        w = np.repeat(self.element_measures, self.dim)
        return (G.T @ sp.diags(w) @ G).tocsr()

    def node_coordinate(self, axis: int = 0) -> np.ndarray:
        return np.array(self.vertices[:, axis])


@dataclass(frozen=True, eq=False)
class BlockPattern:
    """CSR structure of matrices assembled from ``k x k`` element blocks.

    ``slot[e, a, b]`` is the position in the CSR data array that receives
    entry ``(a, b)`` of the block of element ``e``.
    """

    n: int
    indptr: np.ndarray
    indices: np.ndarray
    rows: np.ndarray  # row index of every stored entry
    slot: np.ndarray
    diagonal: np.ndarray  # data positions of the diagonal entries

    @classmethod
    def build(cls, elements: np.ndarray, n: int) -> "BlockPattern":
        ne, k = elements.shape
        r = np.repeat(elements, k, axis=1).ravel()
        c = np.tile(elements, (1, k)).ravel()
        key = r * n + c
        uniq, inverse = np.unique(key, return_inverse=True)
        rows, cols = uniq // n, uniq % n
        indptr = np.concatenate([[0], np.cumsum(np.bincount(rows, minlength=n))])
        diagonal = np.flatnonzero(rows == cols)
        return cls(n, indptr, cols, rows, inverse.reshape(ne, k, k), diagonal)

    def assemble(self, blocks: np.ndarray, diagonal=None) -> np.ndarray:
        """Data array of the sum of element blocks plus an optional nodal diagonal."""
        data = np.bincount(self.slot.ravel(), weights=blocks.ravel(), minlength=self.indices.size)
        if diagonal is not None:
            data[self.diagonal] += diagonal
        return data

    def matrix(self, data: np.ndarray) -> sp.csr_matrix:
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(self.n, self.n))


# ----------------------------------------------------------------------
# constructors
# ----------------------------------------------------------------------
def interval(length: float = 1.0, n: int = 10, dirichlet: str = "both") -> Grid:
    """Uniform grid of (0, length) with ``n`` elements.

    ``dirichlet`` is ``"both"``, ``"left"`` or ``"right"``.
    """
    if n < 1 or length <= 0:
        raise GridError("interval needs n >= 1 and a positive length")
    x = np.linspace(0.0, length, n + 1)
    elements = np.column_stack([np.arange(n), np.arange(1, n + 1)])
    ends = {"both": [0, n], "left": [0], "right": [n]}
    if dirichlet not in ends:
        raise GridError(f"unknown Dirichlet boundary {dirichlet!r}")
    return Grid(x[:, None], elements, np.array(ends[dirichlet]))


def rectangle(lx: float = 1.0, ly: float = 1.0, nx: int = 8, ny: int = 8,
              dirichlet: str = "left_right") -> Grid:
    """Structured right-triangle split of (0, lx) x (0, ly).

    Each cell is cut along its (i, j)-(i+1, j+1) diagonal so that every
    triangle has axis-aligned legs.
    """
    if nx < 1 or ny < 1 or lx <= 0 or ly <= 0:
        raise GridError("rectangle needs positive extents and resolutions")
    xs, ys = np.linspace(0.0, lx, nx + 1), np.linspace(0.0, ly, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="xy")
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    def idx(i, j):
        return j * (nx + 1) + i

    i, j = np.meshgrid(np.arange(nx), np.arange(ny), indexing="xy")
    i, j = i.ravel(), j.ravel()
    a, b, c, d = idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1)
    elements = np.concatenate([np.column_stack([a, b, c]), np.column_stack([a, c, d])])

    x, y = vertices[:, 0], vertices[:, 1]
    tol = 1e-12 * max(lx, ly)
    sides = {
        "left": np.flatnonzero(x < tol),
        "right": np.flatnonzero(x > lx - tol),
        "bottom": np.flatnonzero(y < tol),
        "top": np.flatnonzero(y > ly - tol),
    }
    parts = dirichlet.split("_")
    if not parts or any(p not in sides for p in parts):
        raise GridError(f"unknown Dirichlet boundary {dirichlet!r}")
    nodes = np.unique(np.concatenate([sides[p] for p in parts]))
    return Grid(vertices, elements, nodes)


def write_mesh(grid: Grid, path) -> None:
    """Dump vertex and element tables as plain text."""
    path = Path(path)
    with path.open("w") as fh:
        fh.write(f"# vertices {grid.n_nodes} dim {grid.dim}\n")
        np.savetxt(fh, grid.vertices, fmt="%.17g")
        fh.write(f"# elements {grid.n_elements}\n")
        np.savetxt(fh, grid.elements, fmt="%d")
        fh.write(f"# dirichlet {len(grid.dirichlet_nodes)}\n")
        np.savetxt(fh, grid.dirichlet_nodes[None, :], fmt="%d")


# ----------------------------------------------------------------------
# field operations
# ----------------------------------------------------------------------
def l2_norm(grid: Grid, v) -> float:
    """Lumped-mass L2 norm ``sqrt(sum_i m_i v_i^2)``."""
    v = grid.check_field(v)
    return float(np.sqrt(np.dot(grid.lumped_mass, v * v)))


def l2_inner(grid: Grid, a, b) -> float:
    return float(np.dot(grid.lumped_mass, grid.check_field(a) * grid.check_field(b)))


def integrate(grid: Grid, v) -> float:
    """Lumped quadrature of a nodal field."""
    return float(np.dot(grid.lumped_mass, grid.check_field(v)))


def gradient_per_element(grid: Grid, v) -> np.ndarray:
    """Exact gradients of the P1 interpolant, shape (n_elements, dim)."""
    v = grid.check_field(v)
    return (grid.gradient_matrix @ v).reshape(grid.n_elements, grid.dim)


def _check_q(q: float) -> None:
    if not q >= 2.0:
        raise ValueError(f"the gradient exponent q must be >= 2, got {q}")


def gq(A, q: float) -> np.ndarray:
    """Pointwise density ``(1/q) (1 + |A|^2)^(q/2)`` for rows of ``A``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    return (1.0 + np.sum(A * A, axis=-1)) ** (0.5 * q) / q


def dgq(A, q: float) -> np.ndarray:
    """Gradient of :func:`gq`: ``(1 + |A|^2)^((q-2)/2) A``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    w = (1.0 + np.sum(A * A, axis=-1)) ** (0.5 * (q - 2.0))
    return w[:, None] * A


def aq_energy(grid: Grid, v, q: float) -> float:
    """Discrete gradient energy ``sum_e |e| G_q(grad v|_e)``."""
    _check_q(q)
    return float(np.dot(grid.element_measures, gq(gradient_per_element(grid, v), q)))


def assemble_Aq_residual(grid: Grid, v, q: float) -> np.ndarray:
    """Entries ``<A_q v, phi_i>`` for every P1 basis function (one-point quadrature)."""
    _check_q(q)
    flux = dgq(gradient_per_element(grid, v), q) * grid.element_measures[:, None]
    return grid.gradient_matrix.T @ flux.ravel()


def assemble_Aq_hessian(grid: Grid, v, q: float) -> sp.csr_matrix:
    """Jacobian of :func:`assemble_Aq_residual` (Hessian of :func:`aq_energy`)."""
    _check_q(q)
    pattern = grid.block_pattern
    return pattern.matrix(pattern.assemble(aq_hessian_blocks(grid, v, q)))


def aq_hessian_blocks(grid: Grid, v, q: float) -> np.ndarray:
    """Element blocks ``|e| B^T (w I + w' A A^T) B`` of the Hessian of :func:`aq_energy`."""
    A = gradient_per_element(grid, v)
    d = A.shape[1]
    s = 1.0 + np.sum(A * A, axis=1)
    w = s ** (0.5 * (q - 2.0))
    w2 = (q - 2.0) * s ** (0.5 * (q - 4.0))
    C = w[:, None, None] * np.eye(d)[None] + w2[:, None, None] * A[:, :, None] * A[:, None, :]
    C *= grid.element_measures[:, None, None]
    B = grid.basis_gradients  # (n_elements, k, d)
    return np.einsum("nad,nde,nbe->nab", B, C, B)
