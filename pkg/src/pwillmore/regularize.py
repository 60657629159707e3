"""Conformal-penalty mesh regularization.

The mesh is slid (nearly) tangentially so that each triangle becomes as
conformal as possible to a per-face reference metric, built from target
corner angles.  Normal motion is held back by a multiplier ``rho`` whose
constraint is relaxed by the penalty ``epsilon``.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from functools import partial

import numpy as np
import scipy.sparse as sp

from . import fem
from ._ad import jax, jnp
from .geometry import (
    check_reference,
    complex_structure,
    conformal_defect,
    conformal_distortion,
    inverse_2x2,
)
from .mesh import Mesh, face_quality, vertex_valences

logger = logging.getLogger(__name__)

TIE_RTOL = 1e-12
MODES = ("off", "linear", "nonlinear")
REFERENCES = ("fan", "scaled")


@dataclass(frozen=True)
class RegularizeConfig:
    epsilon: float = 1e-5
    mode: str = "nonlinear"
    newton_iters: int = 2
    reference: str = "fan"

    def __post_init__(self):
        if self.reference not in REFERENCES:
            raise ValueError(f"reference must be one of {REFERENCES}")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be > 0")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.newton_iters < 1:
            raise ValueError("newton_iters must be >= 1")


# ---------------------------------------------------------------- reference angles


def corner_angles(m: Mesh, vertices=None) -> np.ndarray:
    """Interior angle at each face corner, shape (F, 3)."""
    p = m.corners(vertices)
    out = np.empty((m.n_faces, 3))
    for k in range(3):
        a = p[:, (k + 1) % 3] - p[:, k]
        b = p[:, (k + 2) % 3] - p[:, k]
        out[:, k] = np.arctan2(np.linalg.norm(np.cross(a, b), axis=1), np.sum(a * b, 1))
    return out


def normalize_angles(scaled: np.ndarray) -> np.ndarray:
    """Close each triple to sum pi.

    A unique largest angle is kept and the other two are scaled to fill
    ``pi - max``; with a tie for the largest all three are scaled by a common
    factor.
    """
    a = np.atleast_2d(np.asarray(scaled, dtype=float)).copy()
    amax = a.max(axis=1, keepdims=True)
    n_lead = np.sum(a >= amax * (1.0 - TIE_RTOL), axis=1)
    unique = n_lead == 1
    lead = np.argmax(a, axis=1)
    rows = np.nonzero(unique)[0]
    if rows.size:
        keep = a[rows, lead[rows]]
        others = np.ones((rows.size, 3), bool)
        others[np.arange(rows.size), lead[rows]] = False
        # summing the two others directly avoids cancellation against keep
        rest = np.where(others, a[rows], 0.0).sum(1)
        factor = (np.pi - keep) / rest
        a[rows] *= factor[:, None]
        a[rows, lead[rows]] = keep
    rows = np.nonzero(~unique)[0]
    if rows.size:
        a[rows] *= (np.pi / a[rows].sum(1))[:, None]
    return a.reshape(np.shape(scaled))


def rescale_angles(angles, valences) -> np.ndarray:
    """Divide each corner angle by its vertex valence and close to sum pi."""
    angles = np.asarray(angles, dtype=float)
    return normalize_angles(angles / np.asarray(valences, dtype=float))


def reference_angles(m: Mesh) -> np.ndarray:
    """Target corner angles per face: each angle divided by its vertex valence,
    then closed to sum pi by :func:`normalize_angles`."""
    ang = corner_angles(m)
    if np.any(face_quality(m) <= 1e-8):
        raise ValueError("degenerate face")
    out = rescale_angles(ang, vertex_valences(m)[m.faces])
    if not (np.all(out > 0) and np.all(out < np.pi)):
        raise ValueError("reference angle outside (0, pi)")
    return out


def fan_angles(m: Mesh) -> np.ndarray:
    """Target corner angles ``2 pi / valence`` (the angle of an equiangular flat
    fan around each vertex), closed to sum pi by :func:`normalize_angles`."""
    if np.any(face_quality(m) <= 1e-8):
        raise ValueError("degenerate face")
    return normalize_angles(2.0 * np.pi / vertex_valences(m)[m.faces])


def target_angles(m: Mesh, kind: str = "fan") -> np.ndarray:
    """Reference angles of the requested kind (``"fan"`` or ``"scaled"``)."""
    if kind == "fan":
        return fan_angles(m)
    if kind == "scaled":
        return reference_angles(m)
    raise ValueError(f"unknown reference kind {kind!r}")


def reference_metrics(m: Mesh, angles: np.ndarray) -> np.ndarray:
    """Per-face metric of a triangle with the given angles and the face's area.

    Corner k of the reference triangle carries ``angles[:, k]``; the metric is
    expressed in the face's own P1 parameter coordinates, shape (F, 2, 2).
    """
    angles = np.asarray(angles, dtype=float)
    if np.any(angles <= 0) or np.any(angles >= np.pi) or np.any(
        np.abs(angles.sum(-1) - np.pi) > 1e-10
    ):
        raise ValueError("invalid reference angle triple")
    area = fem.mesh_metric(m).area
    s = np.sin(angles)
    c2 = 2.0 * area / np.prod(s, axis=-1)
    l01 = np.sqrt(c2) * s[:, 2]
    l02 = np.sqrt(c2) * s[:, 1]
    off = l01 * l02 * np.cos(angles[:, 0])
    return np.stack(
        [np.stack([l01**2, off], -1), np.stack([off, l02**2], -1)], -2
    )


# ---------------------------------------------------------------- Q tensor


def _q_tensor(tangents, normal, ref_g, xp):
    gi = inverse_2x2(ref_g, xp)
    J = complex_structure(ref_g, xp)
    A = conformal_defect(tangents, normal, ref_g, xp)  # (..., 2, 3)
    NxA = xp.cross(normal[..., None, :], A)
    # Q_l = 1/2 (g^{ij} J^l_j A_i + g^{il} N x A_i)
    q = xp.einsum("...ij,...lj,...ik->...kl", gi, J, A)
    q = q + xp.einsum("...il,...ik->...kl", gi, NxA)
    return 0.5 * q


def conformal_Q(positions, normal, ref) -> np.ndarray:
    """Per-element 3x2 tensor whose pairing with ``dphi`` is the first
    variation of the conformal distortion.

    ``positions`` (..., 3, 3) are the corners whose derivative enters, ``normal``
    the (fixed) unit normal, ``ref`` the reference metric.  Column ``l`` pairs
    with the parameter derivative ``dphi(e_l)``.
    """
    positions = np.asarray(positions, dtype=float)
    ref = check_reference(ref)
    T = np.stack([positions[..., 1, :] - positions[..., 0, :],
                  positions[..., 2, :] - positions[..., 0, :]], -2)
    return _q_tensor(T, np.asarray(normal, dtype=float), ref, np)


def conformal_gradient(m: Mesh, ref, vertices=None, normals=None) -> np.ndarray:
    """Nodal vector ``int <Q, d(phi_a e_k)>``, shape (V, 3).

    Measures come from ``ref``; normals default to the mesh's own face normals.
    """
    v = m.vertices if vertices is None else np.asarray(vertices)
    if normals is None:
        normals = fem.mesh_metric(m, v).normal
    Q = conformal_Q(v[m.faces], normals, ref)
    ref_area = 0.5 * np.sqrt(np.linalg.det(ref))
    loc = np.einsum("f,al,fkl->fak", ref_area, fem.HAT_DERIVS, Q)
    out = np.zeros_like(v)
    for a in range(3):
        np.add.at(out, m.faces[:, a], loc[:, a])
    return out


# ---------------------------------------------------------------- penalized solve

_HAT = jnp.asarray(fem.HAT_DERIVS)
_MASS = jnp.asarray(fem.P1_MASS)


def _element_residual(z, u, normal, ref, area, ref_area, eps, central):
    uh = z[:9].reshape(3, 3)
    rho = z[9:]
    T = jnp.stack([uh[1] - uh[0], uh[2] - uh[0]])
    Q = _q_tensor(T, normal, ref, jnp)
    if central:
        c = jnp.cross(T[0], T[1])
        n_new = c / jnp.sqrt(jnp.sum(c * c))
        nt = 0.5 * (normal + n_new)
    else:
        nt = normal
    mrho = area * (_MASS @ rho)
    r_u = ref_area * (_HAT @ Q.T) + mrho[:, None] * nt[None, :]
    r_rho = area * (_MASS @ ((uh - u) @ nt + eps * rho))
    return jnp.concatenate([r_u.ravel(), r_rho])


@partial(jax.jit, static_argnames=("central",))
def _element_system(z, u, normal, ref, area, ref_area, eps, central):
    f = partial(_element_residual, central=central)
    res = jax.vmap(f, in_axes=(0, 0, 0, 0, 0, 0, None))(z, u, normal, ref, area, ref_area, eps)
    jac = jax.vmap(jax.jacfwd(f), in_axes=(0, 0, 0, 0, 0, 0, None))(
        z, u, normal, ref, area, ref_area, eps
    )
    return res, jac


def ref_area_sum(ref) -> float:
    return float(0.5 * np.sqrt(np.linalg.det(ref)).sum())


@dataclass
class RegularizeResult:
    mesh: Mesh
    rho: np.ndarray
    cd_before: float
    cd_after: float
    constraint_residual: float
    accepted: bool


class _PenaltyProblem:
    def __init__(self, m: Mesh, ref, eps: float, central: bool):
        em = fem.mesh_metric(m)
        self.m = m
        self.u = m.vertices[m.faces]
        self.normal = em.normal
        self.ref = ref
        self.area = em.area
        self.ref_area = 0.5 * np.sqrt(np.linalg.det(ref))
        self.eps = float(eps)
        self.central = central
        V = m.n_vertices
        self.n = 4 * V
        f = m.faces
        self.dofs = np.concatenate([(3 * f[:, :, None] + np.arange(3)).reshape(-1, 9), 3 * V + f], 1)

    def evaluate(self, x):
        z = x[self.dofs]
        res, jac = _element_system(
            z, self.u, self.normal, self.ref, self.area, self.ref_area, self.eps,
            central=self.central,
        )
        res, jac = np.asarray(res), np.asarray(jac)
        R = np.zeros(self.n)
        np.add.at(R, self.dofs.ravel(), res.ravel())
        k = self.dofs.shape[1]
        rows = np.repeat(self.dofs, k, axis=1).ravel()
        cols = np.tile(self.dofs, (1, k)).ravel()
        Jm = sp.coo_matrix((jac.ravel(), (rows, cols)), shape=(self.n, self.n)).tocsr()
        return R, Jm


def regularize(m: Mesh, cfg: RegularizeConfig = RegularizeConfig(), angles=None) -> RegularizeResult:
    """Penalized conformal regularization with full diagnostics.

    ``angles`` are the target corner angles (default: ``cfg.reference`` kind
    computed from ``m``); the reference metric takes each face's current area.
    The nonlinear variant runs its Newton iterations from the solution of the
    linear variant.
    """
    if angles is None:
        angles = target_angles(m, cfg.reference)
    ref = reference_metrics(m, angles)
    cd0 = conformal_distortion(m, ref)
    V = m.n_vertices
    if cfg.mode == "off":
        return RegularizeResult(m, np.zeros(V), cd0, cd0, 0.0, True)
    x = np.concatenate([m.vertices.ravel(), np.zeros(V)])
    linear = _PenaltyProblem(m, ref, cfg.epsilon, central=False)
    R, Jm = linear.evaluate(x)
    x = x + fem.solve_sparse(Jm, -R)
    prob = linear
    if cfg.mode == "nonlinear":
        prob = _PenaltyProblem(m, ref, cfg.epsilon, central=True)
        for _ in range(cfg.newton_iters):
            R, Jm = prob.evaluate(x)
            x = x + fem.solve_sparse(Jm, -R)
    R, _ = prob.evaluate(x)
    new = m.with_vertices(x[: 3 * V].reshape(V, 3))
    rho = x[3 * V :]
    cd1 = conformal_distortion(new, ref)
    resid = float(np.abs(R[3 * V :]).max())
    # round-off slack: a fixed point may move CD in its last bits
    accepted = cd1 <= cd0 + 1e-12 * (cd0 + float(ref_area_sum(ref))) and face_quality(new).min() > 1e-8
    if not accepted:
        warnings.warn(
            f"regularization rejected (CD {cd0:.6g} -> {cd1:.6g}); mesh left unchanged",
            RuntimeWarning,
            stacklevel=2,
        )
        return RegularizeResult(m, rho, cd0, cd0, resid, False)
    return RegularizeResult(new, rho, cd0, cd1, resid, True)


def regularize_step(m: Mesh, cfg: RegularizeConfig = RegularizeConfig(), angles=None) -> Mesh:
    """Regularized copy of ``m`` (``m`` itself when the step is rejected)."""
    return regularize(m, cfg, angles).mesh
