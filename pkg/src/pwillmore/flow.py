"""Time stepping of constrained p-Willmore flow.

One step solves for the new positions ``u``, curvature ``Y``, weighted
curvature ``W`` and the scalar multipliers ``lambda`` (volume) and ``gamma``
(area).  Every integral lives on the central surface ``(u_old + u_new) / 2``;
the nonlinear system is solved by a fixed number of Newton iterations with
the exact Jacobian obtained by forward-mode differentiation of the element
residual.

For ``p = 0`` the step is mean curvature flow: the weighted-curvature and area
equations are dropped and the motion equation pairs the velocity with
``<du_new, dphi>``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from functools import partial

import numpy as np
import scipy.sparse as sp

from . import fem
from ._ad import jax, jnp
from .geometry import (
    DEFAULT_QUAD_DEGREE,
    enclosed_volume,
    surface_area,
    mean_curvature_vector,
    power_delta,
    weighted_curvature,
    weighted_power,
)
from .mesh import DEGENERATE_TOL, Mesh, face_quality

logger = logging.getLogger(__name__)

MCF_AREA_MESSAGE = (
    "fix_area with p = 0: area preservation makes no sense in this context, "
    "mean curvature flow is the gradient flow of area"
)

EQUATIONS = ("curvature", "weighted", "area", "volume", "motion")


class StepFailure(RuntimeError):
    """A flow step was rejected twice; ``diagnostics`` says why."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass(frozen=True)
class FlowConfig:
    """Parameters of the time stepping.

    Parameters
    ----------
    p : int
        Power in ``int |Y|^p``; 0 gives mean curvature flow.
    fix_area, fix_volume : bool
        Add the area / enclosed-volume multiplier.  ``fix_area`` needs ``p >= 1``.
    tau0, scale_s, tau_max : float
        Initial step, growth factor applied after each accepted step, and cap
        (``tau_max`` defaults to ``tau0``, i.e. a fixed step).
    newton_iters : int
        Newton iterations per step, started from the old state with zero
        multipliers.
    residual_tol : float
        Bound on the area and volume equation residuals relative to the
        current area and volume.  Up to ``MAX_EXTRA_NEWTON`` further
        iterations are spent to reach it.
    quad_degree : int
        Degree of the quadrature used for the ``|Y|^p`` terms.
    """

    p: int = 2
    fix_area: bool = False
    fix_volume: bool = False
    tau0: float = 1e-4
    scale_s: float = 1.0
    tau_max: float | None = None
    newton_iters: int = 2
    residual_tol: float = 1e-8
    quad_degree: int = DEFAULT_QUAD_DEGREE

    def __post_init__(self):
        if self.p < 0 or int(self.p) != self.p:
            raise ValueError("p must be a non-negative integer")
        if self.p == 0 and self.fix_area:
            raise ValueError(MCF_AREA_MESSAGE)
        if not self.tau0 > 0:
            raise ValueError("tau0 must be > 0")
        if self.scale_s < 1:
            raise ValueError("scale_s must be >= 1")
        if self.tau_max is None:
            object.__setattr__(self, "tau_max", self.tau0)
        if self.tau0 > self.tau_max:
            raise ValueError("tau0 must not exceed tau_max")
        if self.newton_iters < 1:
            raise ValueError("newton_iters must be >= 1")


@dataclass(frozen=True)
class FlowState:
    mesh: Mesh
    Y: np.ndarray
    W: np.ndarray
    lam: float = 0.0
    gam: float = 0.0
    t: float = 0.0
    tau: float = 1e-4
    step: int = 0
    residual: float = 0.0
    dt: float = 0.0  # step size used to reach this state
    norms: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Trial:
    """Candidate unknowns of one step."""

    u: np.ndarray
    Y: np.ndarray
    W: np.ndarray
    lam: float = 0.0
    gam: float = 0.0


def init_curvature(m: Mesh, p: int, quad_degree: int = DEFAULT_QUAD_DEGREE):
    """Curvature data ``(Y, W)`` of a mesh; ``W`` is zero for ``p = 0``."""
    Y = mean_curvature_vector(m)
    if p == 0:
        return Y, np.zeros_like(Y)
    return Y, weighted_curvature(m, Y, p, quad_degree)


def init_state(m: Mesh, cfg: FlowConfig) -> FlowState:
    Y, W = init_curvature(m, cfg.p, cfg.quad_degree)
    return FlowState(mesh=m, Y=Y, W=W, tau=cfg.tau0)


def replace_mesh(state: FlowState, m: Mesh, cfg: FlowConfig) -> FlowState:
    """Swap in a moved mesh (e.g. after regularization), recomputing Y and W.

    Time, step size and step count carry over.
    """
    if m is state.mesh:
        return state
    Y, W = init_curvature(m, cfg.p, cfg.quad_degree)
    return replace(state, mesh=m, Y=Y, W=W)


# ---------------------------------------------------------------- element kernel

_HAT = jnp.asarray(fem.HAT_DERIVS)
_MASS = jnp.asarray(fem.P1_MASS)


def _element_residual(z, old, inv_tau, delta, p, qdeg):
    rule = fem.quadrature_rule(qdeg)
    P = jnp.asarray(rule.points)
    w = jnp.asarray(rule.weights)

    un, Yn, Wn = z[0:9].reshape(3, 3), z[9:18].reshape(3, 3), z[18:27].reshape(3, 3)
    lam, gam = z[27], z[28]
    uo, Yo, Wo = old[0:9].reshape(3, 3), old[9:18].reshape(3, 3), old[18:27].reshape(3, 3)
    uh, Yh, Wh = 0.5 * (uo + un), 0.5 * (Yo + Yn), 0.5 * (Wo + Wn)

    T = _HAT.T @ uh  # central tangents X_1, X_2
    g = T @ T.T
    det = g[0, 0] * g[1, 1] - g[0, 1] * g[1, 0]
    gi = jnp.array([[g[1, 1], -g[0, 1]], [-g[1, 0], g[0, 0]]]) / det
    sq = jnp.sqrt(det)
    area = 0.5 * sq
    N = jnp.cross(T[0], T[1]) / sq
    S = _HAT @ gi  # S[a, i] pairs d_i F with d(phi_a)

    def d(F):
        return _HAT.T @ F

    def stiff(dF):
        return S @ dF  # [a, c] = <dF, d(phi_a e_c)>

    dUn, dUo = d(un), d(uo)
    du = un - uo
    ra = area * (_MASS @ Yh + stiff(dUn))
    zero3 = jnp.zeros((3, 3))
    if p == 0:
        rb = zero3
        rc = 0.0 * lam
        re = area * (inv_tau * (_MASS @ du) + stiff(dUn))
    else:
        Yq = P @ Yh
        rb = area * (_MASS @ Wh - P.T @ (w[:, None] * weighted_power(Yq, p, delta, jnp)))
        rc = area * jnp.sum(gi * (T @ (dUn - dUo).T))
        s = jnp.sum(Yq * Yq, -1)
        if p < 2:
            s = s + delta**2
        mean_ypow = jnp.sum(w * s ** (p / 2.0))
        dWh, dWn, dWo = d(Wh), d(Wn), d(Wo)
        divW = jnp.sum(gi * (T @ dWh.T))
        Sdu = stiff(T)
        # <D(phi) du^k, dW^k> with the projection onto the tangent plane of the
        # central surface on the dW side; A[i, j] = <X_i, W_j>
        A = T @ dWo.T
        explicit = S @ (A + A.T) @ gi @ dUo
        re = area * (
            inv_tau * (_MASS @ du)
            + gam * Sdu
            + (1 - p) * mean_ypow * Sdu
            - p * divW * Sdu
            - p * stiff(dWn)
            + p * explicit
        )
    re = re + (lam * area / 3.0) * N[None, :]
    rd = area * jnp.dot(jnp.mean(du, axis=0), N)
    return jnp.concatenate([ra.ravel(), rb.ravel(), jnp.stack([rc, rd]), re.ravel()])


@partial(jax.jit, static_argnames=("p", "qdeg"))
def _element_residuals(z, old, inv_tau, delta, p, qdeg):
    f = partial(_element_residual, p=p, qdeg=qdeg)
    return jax.vmap(f, in_axes=(0, 0, None, None))(z, old, inv_tau, delta)


@partial(jax.jit, static_argnames=("p", "qdeg"))
def _element_system(z, old, inv_tau, delta, p, qdeg):
    f = partial(_element_residual, p=p, qdeg=qdeg)
    res = jax.vmap(f, in_axes=(0, 0, None, None))(z, old, inv_tau, delta)
    jac = jax.vmap(jax.jacfwd(f), in_axes=(0, 0, None, None))(z, old, inv_tau, delta)
    return res, jac


# ---------------------------------------------------------------- global layout


class _Layout:
    """Maps element-local unknowns/equations to the compact global system."""

    def __init__(self, m: Mesh, cfg: FlowConfig):
        V = m.n_vertices
        f = m.faces
        self.V = V
        vec = (3 * f[:, :, None] + np.arange(3)).reshape(-1, 9)
        ones = np.ones((len(f), 1), dtype=np.int64)
        # full unknown numbering: u, Y, W (3V each), lambda, gamma
        self.col_full = np.concatenate([vec, 3 * V + vec, 6 * V + vec, 9 * V * ones, (9 * V + 1) * ones], 1)
        # full equation numbering: curvature, weighted (3V), area, volume, motion (3V)
        self.row_full = np.concatenate([vec, 3 * V + vec, 6 * V * ones, (6 * V + 1) * ones, 6 * V + 2 + vec], 1)
        n_full = 9 * V + 2

        active_u = np.ones(n_full, bool)
        active_r = np.ones(n_full, bool)
        if cfg.p == 0:
            active_u[6 * V : 9 * V] = False
            active_r[3 * V : 6 * V] = False
        if not cfg.fix_volume:
            active_u[9 * V] = False
            active_r[6 * V + 1] = False
        if not cfg.fix_area:
            active_u[9 * V + 1] = False
            active_r[6 * V] = False
        self.cmap = np.where(active_u, np.cumsum(active_u) - 1, -1)
        self.rmap = np.where(active_r, np.cumsum(active_r) - 1, -1)
        self.n = int(active_u.sum())
        assert self.n == int(active_r.sum())
        self.cols = self.cmap[self.col_full]
        self.rows = self.rmap[self.row_full]
        self.active_u = active_u

        # solver ordering: per vertex (u, Y, W) against (motion, curvature,
        # weighted) so each diagonal block carries a mass matrix, scalars last
        nf = 3 if cfg.p > 0 else 2
        vert = np.arange(V)[:, None, None] * 3 + np.arange(3)
        col_blocks = [0, 3 * V, 6 * V][:nf]
        row_blocks = [6 * V + 2, 0, 3 * V][:nf]
        cfull = np.stack([vert + o for o in col_blocks], 1).ravel()
        rfull = np.stack([vert + o for o in row_blocks], 1).ravel()
        cfull = np.concatenate([cfull, np.flatnonzero(active_u[9 * V :]) + 9 * V])
        rfull = np.concatenate([rfull, np.flatnonzero(active_r[6 * V : 6 * V + 2]) + 6 * V])
        self.col_perm = self.cmap[cfull]
        self.row_perm = self.rmap[rfull]

        fields = [("u", V, 3), ("Y", V, 3)]
        if cfg.p > 0:
            fields.append(("W", V, 3))
        if cfg.fix_volume:
            fields.append(("lambda", 1, 1))
        if cfg.fix_area:
            fields.append(("gamma", 1, 1))
        self.dof_map = fem.DofMap(fields)
        eq = [("curvature", V, 3)]
        if cfg.p > 0:
            eq.append(("weighted", V, 3))
        if cfg.fix_area:
            eq.append(("area", 1, 1))
        if cfg.fix_volume:
            eq.append(("volume", 1, 1))
        eq.append(("motion", V, 3))
        self.eq_map = fem.DofMap(eq)

    def full_vector(self, tr: Trial) -> np.ndarray:
        return np.concatenate(
            [np.ravel(tr.u), np.ravel(tr.Y), np.ravel(tr.W), [tr.lam, tr.gam]]
        )

    def pack(self, tr: Trial) -> np.ndarray:
        return self.full_vector(tr)[self.active_u]

    def unpack(self, x: np.ndarray, like: Trial) -> Trial:
        full = self.full_vector(like)
        full[self.active_u] = x
        V = self.V
        return Trial(
            u=full[: 3 * V].reshape(V, 3),
            Y=full[3 * V : 6 * V].reshape(V, 3),
            W=full[6 * V : 9 * V].reshape(V, 3),
            lam=float(full[9 * V]),
            gam=float(full[9 * V + 1]),
        )


def _inputs(old: FlowState, trial: Trial, lay: _Layout):
    full_new = lay.full_vector(trial)
    z = full_new[lay.col_full]
    old_full = np.concatenate(
        [old.mesh.vertices.ravel(), np.ravel(old.Y), np.ravel(old.W)]
    )
    o = old_full[lay.col_full[:, :27]]
    return z, o, 1.0 / old.tau, power_delta(old.mesh)


def _scatter_residual(res, lay: _Layout) -> np.ndarray:
    R = np.zeros(lay.n)
    keep = lay.rows.ravel() >= 0
    np.add.at(R, lay.rows.ravel()[keep], np.asarray(res).ravel()[keep])
    return R


def _norms(R, lay: _Layout) -> dict:
    parts = lay.eq_map.split(R)
    return {k: float(np.linalg.norm(v)) for k, v in parts.items()}


def assemble_flow_residual(old: FlowState, trial: Trial, cfg: FlowConfig, tau=None):
    """Global residual of one step and its per-equation norms."""
    if tau is not None:
        old = replace(old, tau=tau)
    lay = _Layout(old.mesh, cfg)
    z, o, inv_tau, delta = _inputs(old, trial, lay)
    res = _element_residuals(z, o, inv_tau, delta, p=int(cfg.p), qdeg=cfg.quad_degree)
    R = _scatter_residual(res, lay)
    return R, _norms(R, lay)


def _system(old, trial, cfg, lay):
    z, o, inv_tau, delta = _inputs(old, trial, lay)
    res, jac = _element_system(z, o, inv_tau, delta, p=int(cfg.p), qdeg=cfg.quad_degree)
    res, jac = np.asarray(res), np.asarray(jac)
    R = _scatter_residual(res, lay)
    k = jac.shape[1]
    rows = np.repeat(lay.rows, k, axis=1).ravel()
    cols = np.tile(lay.cols, (1, k)).ravel()
    keep = (rows >= 0) & (cols >= 0)
    J = sp.coo_matrix(
        (jac.ravel()[keep], (rows[keep], cols[keep])), shape=(lay.n, lay.n)
    ).tocsr()
    return R, J


def flow_jacobian(old: FlowState, trial: Trial, cfg: FlowConfig, tau=None) -> sp.csr_matrix:
    """Exact Jacobian of :func:`assemble_flow_residual` w.r.t. the active unknowns."""
    if tau is not None:
        old = replace(old, tau=tau)
    return _system(old, trial, cfg, _Layout(old.mesh, cfg))[1]


def flow_layout(m: Mesh, cfg: FlowConfig) -> _Layout:
    """Unknown/equation numbering used by the residual and Jacobian."""
    return _Layout(m, cfg)


# ---------------------------------------------------------------- stepping


def _solve(J, R, lay: _Layout) -> np.ndarray:
    """Newton update ``-J^{-1} R`` using the block-diagonal ordering."""
    Jp = J[lay.row_perm][:, lay.col_perm]
    y = fem.solve_sparse(Jp, -R[lay.row_perm], structure="symmetric")
    dx = np.empty_like(y)
    dx[lay.col_perm] = y
    return dx


#: Newton iterations allowed beyond ``newton_iters`` while a constraint is unmet
MAX_EXTRA_NEWTON = 4


def _constraint_scale(m: Mesh, cfg: FlowConfig) -> dict:
    out = {}
    if cfg.fix_area:
        out["area"] = surface_area(m)
    if cfg.fix_volume:
        out["volume"] = abs(enclosed_volume(m))
    return out


def _constraints_met(R, lay: _Layout, scale: dict, tol: float) -> bool:
    """Area/volume residuals relative to the constrained quantity."""
    parts = lay.eq_map.split(R)
    return all(abs(float(parts[k][0])) <= tol * scale[k] for k in ("area", "volume") if k in parts)


def _attempt(old: FlowState, cfg: FlowConfig, tau: float):
    st = replace(old, tau=tau)
    lay = _Layout(old.mesh, cfg)
    trial = Trial(old.mesh.vertices.copy(), old.Y.copy(), old.W.copy(), 0.0, 0.0)
    x = lay.pack(trial)
    r0 = None
    scale = _constraint_scale(old.mesh, cfg)
    try:
        for it in range(cfg.newton_iters + MAX_EXTRA_NEWTON):
            R, J = _system(st, lay.unpack(x, trial), cfg, lay)
            if r0 is None:
                r0 = np.linalg.norm(R)
            elif it >= cfg.newton_iters and _constraints_met(R, lay, scale, cfg.residual_tol):
                break
            x = x + _solve(J, R, lay)
        trial = lay.unpack(x, trial)
        R, _ = assemble_flow_residual(st, trial, cfg)
    except (fem.SolverError, fem.SingularMatrixError, fem.DegenerateElementError) as exc:
        return None, {"reason": f"linear solve failed: {exc}", "tau": tau}
    r1 = float(np.linalg.norm(R))
    diag = {"tau": tau, "initial_residual": float(r0), "final_residual": r1}
    if not np.all(np.isfinite(x)):
        return None, {**diag, "reason": "non-finite update"}
    central = 0.5 * (old.mesh.vertices + trial.u)
    qmin = min(face_quality(old.mesh, trial.u).min(), face_quality(old.mesh, central).min())
    diag["min_face_quality"] = float(qmin)
    if not qmin > DEGENERATE_TOL:
        return None, {**diag, "reason": "element degenerated"}
    # growth below roundoff of the load scale is not a divergence
    floor = 1e-12 * (1.0 + float(np.abs(R).max(initial=0.0)) + surface_area(old.mesh))
    if r1 > max(r0, floor):
        return None, {**diag, "reason": "Newton residual grew"}
    if not _constraints_met(R, lay, scale, cfg.residual_tol):
        logger.warning("step %d: constraint residual above %g", old.step, cfg.residual_tol)
    return (trial, R, lay), diag


def flow_step(old: FlowState, cfg: FlowConfig) -> FlowState:
    """Advance one step; on rejection retry once with half the step size."""
    tau = old.tau
    out, diag = _attempt(old, cfg, tau)
    if out is None:
        logger.warning("step %d rejected (%s); retrying with tau=%g", old.step, diag.get("reason"), tau / 2)
        tau = tau / 2
        out, diag2 = _attempt(old, cfg, tau)
        if out is None:
            raise StepFailure(
                f"step {old.step} failed twice: {diag2.get('reason')}",
                {"first": diag, "second": diag2},
            )
    trial, R, lay = out
    new_mesh = old.mesh.with_vertices(trial.u)
    Y, W = init_curvature(new_mesh, cfg.p, cfg.quad_degree)
    return FlowState(
        mesh=new_mesh,
        Y=Y,
        W=W,
        lam=trial.lam,
        gam=trial.gam,
        t=old.t + tau,
        tau=min(cfg.scale_s * tau, cfg.tau_max),
        step=old.step + 1,
        residual=float(np.linalg.norm(R)),
        dt=tau,
        norms=_norms(R, lay),
    )
