"""Piecewise-linear surface finite elements.

Each triangle is parametrized over the reference triangle
``{(s, t) : s, t >= 0, s + t <= 1}`` by ``X(s, t) = p0 + s (p1 - p0) + t (p2 - p0)``,
so the tangents ``X_1 = p1 - p0`` and ``X_2 = p2 - p0`` are constant per element and
the hat functions have parameter derivatives ``(-1, -1), (1, 0), (0, 1)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.special import roots_jacobi, roots_legendre
from scipy.sparse.linalg import splu

from .mesh import Mesh

#: d(phi_a)/d(s, t) for the three P1 hat functions, shape (3, 2)
HAT_DERIVS = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])

#: exact P1 mass matrix of a triangle of unit area
P1_MASS = (np.ones((3, 3)) + np.eye(3)) / 12.0


class DegenerateElementError(ValueError):
    pass


class SingularMatrixError(RuntimeError):
    pass


class SolverError(RuntimeError):
    pass


# ---------------------------------------------------------------- quadrature


@dataclass(frozen=True)
class QuadratureRule:
    """Points in barycentric coordinates, weights normalized to sum 1."""

    points: np.ndarray
    weights: np.ndarray
    degree: int

    def __len__(self):
        return len(self.weights)


def quadrature_rule(degree: int) -> QuadratureRule:
    """Positive-weight triangle rule exact for total degree ``<= degree``.

    Degrees 1 and 2 use the centroid and 3-point interior rules; higher
    degrees use the collapsed (Duffy) tensor product of Gauss-Jacobi and
    Gauss-Legendre points, ``ceil((degree+1)/2)`` per direction.
    """
    if not 1 <= degree <= 10:
        raise ValueError(f"unsupported quadrature degree {degree} (need 1..10)")
    if degree == 1:
        pts = np.array([[1 / 3, 1 / 3, 1 / 3]])
        w = np.array([1.0])
    elif degree == 2:
        pts = np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]])
        w = np.full(3, 1 / 3)
    else:
        n = (degree + 2) // 2
        xs, ws = roots_jacobi(n, 1.0, 0.0)  # weight (1 - x) on [-1, 1]
        xt, wt = roots_legendre(n)
        s, t = (xs + 1) / 2, (xt + 1) / 2
        S, T = np.meshgrid(s, t, indexing="ij")
        W = np.outer(ws / 4, wt / 2)
        xi, eta = S.ravel(), ((1 - S) * T).ravel()
        pts = np.stack([1 - xi - eta, xi, eta], 1)
        w = 2.0 * W.ravel()
    return QuadratureRule(points=pts, weights=w, degree=degree)


# ---------------------------------------------------------------- element metric


@dataclass(frozen=True)
class ElementMetric:
    """First fundamental form data; arrays carry any leading batch shape."""

    g: np.ndarray  # (..., 2, 2)
    g_inv: np.ndarray  # (..., 2, 2)
    sqrt_det_g: np.ndarray  # (...)
    normal: np.ndarray  # (..., 3)
    tangents: np.ndarray  # (..., 2, 3)

    @property
    def area(self) -> np.ndarray:
        """Element area (reference triangle has measure 1/2)."""
        return 0.5 * self.sqrt_det_g


def metric_from_tangents(X1, X2) -> ElementMetric:
    X1 = np.asarray(X1, dtype=float)
    X2 = np.asarray(X2, dtype=float)
    g11 = np.sum(X1 * X1, -1)
    g12 = np.sum(X1 * X2, -1)
    g22 = np.sum(X2 * X2, -1)
    c = np.cross(X1, X2)
    sq = np.linalg.norm(c, axis=-1)
    scale = np.maximum(g11, g22)
    if np.any(~(sq > 1e-12 * scale)):
        raise DegenerateElementError("degenerate (collinear) element")
    det = g11 * g22 - g12 * g12
    g = np.stack([np.stack([g11, g12], -1), np.stack([g12, g22], -1)], -2)
    g_inv = np.stack([np.stack([g22, -g12], -1), np.stack([-g12, g11], -1)], -2)
    g_inv = g_inv / det[..., None, None]
    return ElementMetric(
        g=g,
        g_inv=g_inv,
        sqrt_det_g=sq,
        normal=c / sq[..., None],
        tangents=np.stack([X1, X2], -2),
    )


def element_metric(p0, p1, p2) -> ElementMetric:
    """Metric of the P1 triangle(s) with corners ``p0, p1, p2``."""
    p0 = np.asarray(p0, dtype=float)
    return metric_from_tangents(np.asarray(p1) - p0, np.asarray(p2) - p0)


def mesh_metric(m: Mesh, vertices=None) -> ElementMetric:
    p = m.corners(vertices)
    return element_metric(p[:, 0], p[:, 1], p[:, 2])


def shape_gradients(em: ElementMetric) -> np.ndarray:
    """Surface gradients of the three hat functions, shape (..., 3, 3).

    ``grad phi_a = g^{ij} d_i phi_a X_j``.
    """
    coef = np.einsum("ai,...ij->...aj", HAT_DERIVS, em.g_inv)
    return np.einsum("...aj,...jk->...ak", coef, em.tangents)


def mass_matrix(m: Mesh, vertices=None) -> sp.csr_matrix:
    """Consistent scalar P1 mass matrix ``int phi_i phi_j``."""
    em = mesh_metric(m, vertices)
    blocks = em.area[:, None, None] * P1_MASS
    return _scatter(m.faces, blocks, m.n_vertices)


def stiffness_matrix(m: Mesh, vertices=None) -> sp.csr_matrix:
    """Scalar P1 stiffness matrix ``int <d phi_i, d phi_j>``."""
    em = mesh_metric(m, vertices)
    G = shape_gradients(em)
    blocks = em.area[:, None, None] * np.einsum("fak,fbk->fab", G, G)
    return _scatter(m.faces, blocks, m.n_vertices)


def _scatter(dofs, blocks, n) -> sp.csr_matrix:
    k = dofs.shape[1]
    rows = np.repeat(dofs, k, axis=1).ravel()
    cols = np.tile(dofs, (1, k)).ravel()
    return sp.coo_matrix((blocks.ravel(), (rows, cols)), shape=(n, n)).tocsr()


# ---------------------------------------------------------------- assembly


class DofMap:
    """Stacked unknown fields; components of a field are contiguous per node."""

    def __init__(self, fields):
        self.fields = []  # (name, n_nodes, n_comp, offset)
        off = 0
        for name, n_nodes, n_comp in fields:
            self.fields.append((name, int(n_nodes), int(n_comp), off))
            off += int(n_nodes) * int(n_comp)
        self.size = off
        self._by_name = {f[0]: f for f in self.fields}

    def __len__(self):
        return self.size

    def __contains__(self, name):
        return name in self._by_name

    def offset(self, name: str) -> int:
        return self._by_name[name][3]

    def slice(self, name: str) -> slice:
        _, n, c, off = self._by_name[name]
        return slice(off, off + n * c)

    def index(self, name: str, node, comp=0):
        _, n, c, off = self._by_name[name]
        node = np.asarray(node)
        comp = np.asarray(comp)
        if np.any((node < 0) | (node >= n)) or np.any((comp < 0) | (comp >= c)):
            raise IndexError(f"dof ({name}, {node}, {comp}) out of range")
        return off + node * c + comp

    def split(self, x: np.ndarray) -> dict:
        return {
            name: x[off : off + n * c].reshape(n, c) if c > 1 else x[off : off + n]
            for name, n, c, off in self.fields
        }


@dataclass
class SparseSystem:
    matrix: sp.csr_matrix
    rhs: np.ndarray
    dof_map: DofMap


def assemble(dofs, blocks, dof_map: DofMap, rhs_blocks=None) -> SparseSystem:
    """Scatter dense element blocks into a global matrix, summing duplicates.

    ``dofs`` has shape (E, k) of global row/column indices per element and
    ``blocks`` shape (E, k, k); ``rhs_blocks`` (E, k) is scattered likewise.
    """
    n = dof_map.size
    dofs = np.asarray(dofs, dtype=np.int64)
    blocks = np.asarray(blocks, dtype=float)
    rhs = np.zeros(n)
    if dofs.size == 0:
        return SparseSystem(sp.csr_matrix((n, n)), rhs, dof_map)
    if dofs.min() < 0 or dofs.max() >= n:
        raise IndexError("element dof index out of range")
    A = _scatter(dofs, blocks.reshape(len(dofs), dofs.shape[1], dofs.shape[1]), n)
    if rhs_blocks is not None:
        np.add.at(rhs, dofs.ravel(), np.asarray(rhs_blocks, dtype=float).ravel())
    return SparseSystem(A, rhs, dof_map)


# ---------------------------------------------------------------- solving

SOLVE_TOL = 1e-10


def _factor(A, structure):
    if structure == "symmetric":
        # keep the fill-reducing symmetric ordering by preferring diagonal pivots
        try:
            lu = splu(
                A,
                permc_spec="MMD_AT_PLUS_A",
                diag_pivot_thresh=0.0,
                options=dict(SymmetricMode=True),
            )
            return lu
        except RuntimeError:
            pass
    try:
        return splu(A, permc_spec="COLAMD")
    except RuntimeError as exc:
        raise SingularMatrixError(str(exc)) from exc


def _refine(A, lu, b, tol):
    x = lu.solve(b)
    bnorm = np.maximum(np.linalg.norm(b, axis=0), 1.0)
    rel = np.inf
    for _ in range(4):
        if not np.all(np.isfinite(x)):
            return None, np.inf
        r = b - A @ x
        rel = np.max(np.linalg.norm(r, axis=0) / bnorm)
        if rel <= tol:
            return x, rel
        x = x + lu.solve(r)
    return None, rel


def solve_sparse(system, rhs=None, tol: float = SOLVE_TOL, structure: str = "general") -> np.ndarray:
    """Direct sparse solve with iterative refinement.

    Accepts a :class:`SparseSystem` or a matrix plus ``rhs`` (1-D or 2-D).
    Guarantees ``||A x - b|| / max(||b||, 1) <= tol`` per right-hand side.

    ``structure="symmetric"`` is a hint that the sparsity pattern is
    symmetric with a nonzero, reasonably dominant diagonal; a minimum-degree
    ordering of ``A + A^T`` is tried first and COLAMD with partial pivoting is
    the fallback.
    """
    if isinstance(system, SparseSystem):
        A, b = system.matrix, system.rhs if rhs is None else rhs
    else:
        A, b = system, rhs
    A = sp.csc_matrix(A)
    b = np.asarray(b, dtype=float)
    if A.shape[0] != A.shape[1] or A.shape[0] != b.shape[0]:
        raise ValueError(f"shape mismatch: A {A.shape}, b {b.shape}")
    A.sum_duplicates()
    A.eliminate_zeros()
    if A.nnz == 0:
        raise SingularMatrixError("matrix is exactly zero")
    x, rel = _refine(A, _factor(A, structure), b, tol)
    if x is None and structure == "symmetric":
        x, rel = _refine(A, _factor(A, "general"), b, tol)
    if x is None:
        if not np.isfinite(rel):
            raise SingularMatrixError("non-finite solution (numerically singular matrix)")
        raise SolverError(f"residual {rel:.3g} above tolerance {tol:g}")
    return x
