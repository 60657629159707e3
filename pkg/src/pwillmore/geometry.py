"""Geometric functionals on P1 surfaces.

Nodal fields are plain arrays: ``(V, 3)`` for vector fields such as the mean
curvature vector ``Y`` and the weighted curvature ``W = |Y|^(p-2) Y``.
"""

from __future__ import annotations

import numpy as np

from . import fem
from .mesh import Mesh, MeshError, validate_mesh

DEFAULT_QUAD_DEGREE = 7


def surface_area(m: Mesh) -> float:
    return float(fem.mesh_metric(m).area.sum())


def _centered(m: Mesh) -> np.ndarray:
    return m.vertices - m.vertices.mean(axis=0)


def enclosed_volume(m: Mesh) -> float:
    """Volume bounded by a closed, outward-oriented mesh."""
    if not validate_mesh(m).is_closed:
        raise MeshError("mesh not closed")
    p = _centered(m)[m.faces]
    return float(np.einsum("fk,fk->", p[:, 0], np.cross(p[:, 1], p[:, 2])) / 6.0)


def mean_curvature_vector(m: Mesh) -> np.ndarray:
    """Discrete ``Y = Laplace-Beltrami(position)`` from ``M Y = -K u``."""
    M = fem.mass_matrix(m)
    K = fem.stiffness_matrix(m)
    return fem.solve_sparse(M, -(K @ _centered(m)))


def power_delta(m: Mesh) -> float:
    """Regularization of ``|Y|`` used when ``p < 2`` (flat points)."""
    return 1e-8 * 2.0 / m.mean_edge_length()


def weighted_power(Y, p: int, delta: float = 0.0, xp=np):
    """``|Y|^(p-2) Y`` evaluated point-wise (last axis is the vector)."""
    if p == 2:
        return Y
    s = xp.sum(Y * Y, axis=-1, keepdims=True)
    if p < 2:
        s = s + delta**2
    return s ** ((p - 2) / 2.0) * Y


def _at_quadrature(m: Mesh, field: np.ndarray, rule: fem.QuadratureRule) -> np.ndarray:
    """Interpolate nodal values to quadrature points, shape (F, Q, ...)."""
    return np.einsum("qa,fa...->fq...", rule.points, field[m.faces])


def weighted_curvature(
    m: Mesh, Y: np.ndarray, p: int, quad_degree: int = DEFAULT_QUAD_DEGREE
) -> np.ndarray:
    """L2 projection of ``|Y|^(p-2) Y`` onto P1, integrand at quadrature points."""
    if p < 1:
        raise ValueError(f"weighted curvature needs p >= 1, got {p}")
    Y = np.asarray(Y, dtype=float)
    rule = fem.quadrature_rule(quad_degree)
    area = fem.mesh_metric(m).area
    f = weighted_power(_at_quadrature(m, Y, rule), p, power_delta(m))
    # int phi_a f  per face and corner
    loc = np.einsum("f,q,qa,fqk->fak", area, rule.weights, rule.points, f)
    rhs = np.zeros_like(Y)
    for a in range(3):
        np.add.at(rhs, m.faces[:, a], loc[:, a])
    return fem.solve_sparse(fem.mass_matrix(m), rhs)


def p_willmore_energy(
    m: Mesh, Y: np.ndarray, p: int, quad_degree: int = DEFAULT_QUAD_DEGREE
) -> float:
    """``int |Y_h|^p`` (the 2^p-scaled p-Willmore energy); area for ``p = 0``."""
    if p < 0:
        raise ValueError("p must be >= 0")
    if p == 0:
        return surface_area(m)
    rule = fem.quadrature_rule(quad_degree)
    area = fem.mesh_metric(m).area
    Yq = _at_quadrature(m, np.asarray(Y, dtype=float), rule)
    vals = np.sum(Yq * Yq, -1) ** (p / 2.0)
    return float(np.einsum("f,q,fq->", area, rule.weights, vals))


# ---------------------------------------------------------------- conformality


def check_reference(ref_g: np.ndarray) -> np.ndarray:
    ref_g = np.asarray(ref_g, dtype=float)
    det = ref_g[..., 0, 0] * ref_g[..., 1, 1] - ref_g[..., 0, 1] * ref_g[..., 1, 0]
    sym = np.abs(ref_g[..., 0, 1] - ref_g[..., 1, 0]) <= 1e-12 * np.abs(ref_g).max()
    if not (np.all(sym) and np.all(ref_g[..., 0, 0] > 0) and np.all(det > 0)):
        raise ValueError("reference metric must be symmetric positive definite")
    return ref_g


def complex_structure(ref_g, xp=np):
    """Rotation by +90 degrees w.r.t. ``ref_g`` in parameter coordinates.

    Column ``i`` holds the coordinates of ``J e_i``.
    """
    g11, g12, g22 = ref_g[..., 0, 0], ref_g[..., 0, 1], ref_g[..., 1, 1]
    sq = xp.sqrt(g11 * g22 - g12 * g12)
    row0 = xp.stack([-g12, -g22], -1)
    row1 = xp.stack([g11, g12], -1)
    return xp.stack([row0, row1], -2) / sq[..., None, None]


def inverse_2x2(g, xp=np):
    g11, g12, g22 = g[..., 0, 0], g[..., 0, 1], g[..., 1, 1]
    det = g11 * g22 - g12 * g12
    row0 = xp.stack([g22, -g12], -1)
    row1 = xp.stack([-g12, g11], -1)
    return xp.stack([row0, row1], -2) / det[..., None, None]


def conformal_defect(tangents, normal, ref_g, xp=np):
    """``A_i = dX(J e_i) - N x dX(e_i)`` for i = 1, 2; shape (..., 2, 3).

    ``tangents`` holds ``dX(e_1), dX(e_2)`` as rows.
    """
    J = complex_structure(ref_g, xp)
    dXJ = xp.einsum("...li,...lk->...ik", J, tangents)
    NxdX = xp.cross(normal[..., None, :], tangents)
    return dXJ - NxdX


def conformal_density(tangents, normal, ref_g, xp=np):
    """Point-wise ``|dX J e - N x dX e|^2`` for a unit tangent ``e``.

    The defect operator anticommutes with the rotation, so this equals half
    its Hilbert-Schmidt norm ``g^{ij} <A_i, A_j>`` and does not depend on ``e``.
    """
    A = conformal_defect(tangents, normal, ref_g, xp)
    gi = inverse_2x2(ref_g, xp)
    return 0.5 * xp.einsum("...ij,...ik,...jk->...", gi, A, A)


def own_metrics(m: Mesh) -> np.ndarray:
    """Each face's first fundamental form, usable as a flat reference."""
    return fem.mesh_metric(m).g


def conformal_distortion(m: Mesh, ref: np.ndarray) -> float:
    """``CD = 1/2 int |du J - N x du|^2`` with ``J`` and the measure from ``ref``."""
    ref = check_reference(ref)
    em = fem.mesh_metric(m)
    dens = conformal_density(em.tangents, em.normal, ref)
    ref_area = 0.5 * np.sqrt(np.linalg.det(ref))
    return float(0.5 * np.sum(ref_area * dens))
