"""Acceptance criteria 1-11.

Each test records a verdict through the ``criterion`` fixture; the terminal
summary then prints one PASS/FAIL line per criterion.
"""

import time
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pwillmore import flow, shapes
from pwillmore.flow import FlowConfig, Trial, flow_step, init_state, replace_mesh
from pwillmore.geometry import (
    conformal_distortion,
    enclosed_volume,
    mean_curvature_vector,
    own_metrics,
    p_willmore_energy,
    surface_area,
)
from pwillmore.mesh import face_quality
from pwillmore.regularize import (
    RegularizeConfig,
    conformal_gradient,
    fan_angles,
    reference_metrics,
    regularize,
    rescale_angles,
    target_angles,
)

PI = np.pi
SIXTEEN_PI = 16 * PI


def run_loop(mesh, cfg, steps, reg=None, on_step=None):
    """Flow ``steps`` steps, regularizing after each one unless ``reg`` is None."""
    state = init_state(mesh, cfg)
    angles = target_angles(mesh, reg.reference) if reg is not None else None
    for _ in range(steps):
        prev = state
        state = flow_step(state, cfg)
        if on_step is not None:
            on_step(prev, state)
        if reg is not None:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RuntimeWarning)
                res = regularize(state.mesh, reg, angles)
            state = replace_mesh(state, res.mesh, cfg)
    return state


# ---------------------------------------------------------------- 1


def test_c01_sphere_energy(criterion):
    t0 = time.perf_counter()
    rel = {}
    for level in (4, 5):
        m = shapes.icosphere(level)
        rel[level] = p_willmore_energy(m, mean_curvature_vector(m), 2) / SIXTEEN_PI - 1
    wall = time.perf_counter() - t0
    ok = abs(rel[4]) <= 0.03 and abs(rel[5]) <= 0.01 and wall <= 30
    detail = f"sphere energy/16pi - 1: L4 {rel[4]:.2e}, L5 {rel[5]:.2e}, {wall:.1f} s"
    assert criterion(1, ok, detail), detail


# ---------------------------------------------------------------- 2


def mean_radius(m):
    return np.linalg.norm(m.vertices, axis=1).mean()


def test_c02_mcf_radius_law(criterion):
    m = shapes.icosphere(3)
    cfg = FlowConfig(p=0, tau0=1e-3)
    r0 = mean_radius(m)
    errs = []

    def check(prev, new):
        exact = np.sqrt(r0**2 - 4 * new.t)
        errs.append(abs(mean_radius(new.mesh) / exact - 1))

    t0 = time.perf_counter()
    st_ = run_loop(m, cfg, 100, on_step=check)
    wall = time.perf_counter() - t0
    ok = len(errs) == 100 and max(errs) <= 0.01 and wall <= 60 and st_.t == pytest.approx(0.1)
    detail = f"MCF radius worst rel err {max(errs):.2e} over {len(errs)} steps, {wall:.1f} s"
    assert criterion(2, ok, detail), detail


# ---------------------------------------------------------------- 3


@pytest.fixture(scope="module")
def ellipsoid_2k():
    return shapes.ellipsoid(axes=(1.5, 1.0, 1.0), freq=11)


@pytest.mark.slow
@pytest.mark.parametrize(
    "p, tau0, s",
    [(0, 1e-3, 1.0), (2, 1e-4, 1.05), (4, 1e-6, 1.05)],
)
def test_c03_energy_monotone(criterion, ellipsoid_2k, p, tau0, s):
    cfg = FlowConfig(p=p, tau0=tau0, scale_s=s, tau_max=10.0 if s > 1 else tau0)
    energies = [p_willmore_energy(ellipsoid_2k, init_state(ellipsoid_2k, cfg).Y, p)]

    def record(prev, new):
        energies.append(p_willmore_energy(new.mesh, new.Y, p))

    st_ = run_loop(ellipsoid_2k, cfg, 100, on_step=record)
    e = np.array(energies)
    worst = float(np.max(np.diff(e) / e[:-1]))
    ok = st_.step >= 100 and worst <= 1e-10
    detail = f"p={p}: {ellipsoid_2k.n_faces} faces, max rel rise {worst:.1e}"
    if p == 2:
        ok = ok and abs(e[-1] / SIXTEEN_PI - 1) <= 0.05
        detail += f", final/16pi {e[-1] / SIXTEEN_PI:.4f}"
    assert criterion(3, ok, detail), detail


# ---------------------------------------------------------------- 4, 5


@pytest.fixture(scope="module")
def jittered_sphere():
    return shapes.jitter_tangential(shapes.icosphere(3), 0.1, rng=0, project_radius=1.0)


@pytest.mark.slow
def test_c04_area_constraint(criterion, jittered_sphere):
    m = jittered_sphere
    cfg = FlowConfig(p=2, tau0=1e-4, fix_area=True)
    st_ = run_loop(m, cfg, 100, reg=RegularizeConfig())
    drift = abs(surface_area(st_.mesh) / surface_area(m) - 1)
    detail = f"area drift {drift:.2e} over 100 flow+regularize steps"
    assert criterion(4, drift < 3e-3, detail), detail


@pytest.mark.slow
def test_c05_volume_constraint(criterion, jittered_sphere):
    m = jittered_sphere
    cfg = FlowConfig(p=2, tau0=1e-4, fix_volume=True)
    per_step = []

    def check(prev, new):
        per_step.append(abs(enclosed_volume(new.mesh) / enclosed_volume(prev.mesh) - 1))

    st_ = run_loop(m, cfg, 100, reg=RegularizeConfig(), on_step=check)
    total = abs(enclosed_volume(st_.mesh) / enclosed_volume(m) - 1)
    ok = max(per_step) <= 1e-6 and total <= 1e-3
    detail = f"volume drift per flow step {max(per_step):.1e}, total {total:.2e}"
    assert criterion(5, ok, detail), detail


# ---------------------------------------------------------------- 6


def test_c06_conformal_gradient_fd(criterion):
    rng = np.random.default_rng(2024)
    m = shapes.icosahedron()
    m = m.with_vertices(m.vertices + 0.1 * rng.normal(size=m.vertices.shape))
    assert m.n_faces == 20
    t0 = time.perf_counter()
    ref = reference_metrics(m, fan_angles(m))
    grad = conformal_gradient(m, ref)
    h = 1e-6
    errs = []
    for _ in range(20):
        phi = rng.normal(size=m.vertices.shape)
        fp = conformal_distortion(m.with_vertices(m.vertices + h * phi), ref)
        fm = conformal_distortion(m.with_vertices(m.vertices - h * phi), ref)
        fd = (fp - fm) / (2 * h)
        errs.append(abs(np.sum(grad * phi) - fd) / abs(fd))
    wall = time.perf_counter() - t0
    ok = max(errs) <= 1e-5 and wall <= 5
    detail = f"CD gradient vs FD worst rel err {max(errs):.1e} (20 directions), {wall:.2f} s"
    assert criterion(6, ok, detail), detail


# ---------------------------------------------------------------- 7


def test_c07_cauchy_riemann(criterion):
    def z2(x, y):
        return x * x - y * y, 2 * x * y, 0.0

    box = ((1.0, 2.0), (1.0, 2.0))
    values = []
    for n in (4, 8, 16, 32):
        dom = shapes.grid(n, bounds=box)
        values.append(conformal_distortion(shapes.grid(n, bounds=box, func=z2), own_metrics(dom)))
    ratios = np.array(values[:-1]) / np.array(values[1:])

    dom = shapes.grid(1)
    shear = dom.with_vertices(dom.vertices + np.outer(dom.vertices[:, 1], [1.0, 0.0, 0.0]))
    cd_shear = conformal_distortion(shear, own_metrics(dom))
    ok = np.all(ratios >= 2) and abs(cd_shear - 0.5) <= 1e-10
    detail = f"z^2 CD ratios {np.round(ratios, 3).tolist()}, shear CD {cd_shear:.12f}"
    assert criterion(7, ok, detail), detail


# ---------------------------------------------------------------- 8


@pytest.mark.parametrize("mode, reduction", [("nonlinear", 0.5), ("linear", 0.3)])
def test_c08_regularization(criterion, mode, reduction):
    m = shapes.jitter_tangential(shapes.icosphere(3), 0.1, rng=1, project_radius=1.0)
    res = regularize(m, RegularizeConfig(mode=mode))
    drop = 1 - res.cd_after / res.cd_before
    q0, q1 = face_quality(m).min(), face_quality(res.mesh).min()
    ok = drop >= reduction and res.constraint_residual <= 1e-10 and np.all(np.isfinite(res.rho))
    if mode == "nonlinear":
        ok = ok and q1 > q0
    detail = f"{mode}: CD -{100 * drop:.0f}%, quality {q0:.3f}->{q1:.3f}, residual {res.constraint_residual:.1e}"
    assert criterion(8, ok, detail), detail


# ---------------------------------------------------------------- 9


WORKED = [
    ([PI / 3] * 3, [6, 6, 6], [PI / 3] * 3),
    ([PI / 2, PI / 4, PI / 4], [4, 8, 8], [PI / 8, 7 * PI / 16, 7 * PI / 16]),
    ([PI / 6, PI / 6, PI / 12], [1, 1, 1], [2 * PI / 5, 2 * PI / 5, PI / 5]),
]


def test_c09_worked_examples(criterion):
    worst = 0.0
    for angles, valences, expected in WORKED:
        out = rescale_angles(angles, valences)
        worst = max(worst, np.abs(out - expected).max(), abs(out.sum() - PI))
    ok = worst <= 1e-12
    assert criterion(9, ok, f"worked examples max deviation {worst:.1e}"), worst


def _triangles():
    return (
        st.tuples(st.floats(1e-3, PI - 2e-3), st.floats(0.0, 1.0))
        .map(lambda t: (t[0], t[1] * (PI - t[0] - 1e-3) + 5e-4))
        .map(lambda t: np.array([t[0], t[1], PI - t[0] - t[1]]))
    )


def test_c09_random_triangles(criterion):
    count = []

    @settings(max_examples=1000, deadline=None, database=None)
    @given(_triangles(), st.lists(st.integers(3, 12), min_size=3, max_size=3))
    def prop(angles, valences):
        out = rescale_angles(angles, valences)
        count.append(1)
        assert abs(out.sum() - PI) <= 1e-12
        assert np.all(out > 0)

    try:
        prop()
        ok = True
    except AssertionError:
        ok = False
    detail = f"property test over {len(count)} random triangles"
    assert criterion(9, ok and len(count) >= 1000, detail), detail


# ---------------------------------------------------------------- 10


def _fd_jacobian(state, trial, cfg, h=1e-6):
    lay = flow.flow_layout(state.mesh, cfg)
    x = lay.pack(trial)
    J = np.zeros((lay.n, lay.n))
    for k in range(lay.n):
        e = np.zeros(lay.n)
        e[k] = h
        rp, _ = flow.assemble_flow_residual(state, lay.unpack(x + e, trial), cfg)
        rm, _ = flow.assemble_flow_residual(state, lay.unpack(x - e, trial), cfg)
        J[:, k] = (rp - rm) / (2 * h)
    return J


@pytest.mark.parametrize("p", [1, 2, 4])
def test_c10_jacobian_fd(criterion, p):
    m = shapes.icosahedron()
    cfg = FlowConfig(p=p, fix_area=True, fix_volume=True, tau0=1e-3)
    state = init_state(m, cfg)
    rng = np.random.default_rng(100 + p)
    errs = []
    for _ in range(10):
        v = m.vertices
        trial = Trial(
            v + 0.02 * rng.normal(size=v.shape),
            state.Y + 0.02 * rng.normal(size=v.shape),
            state.W + 0.02 * rng.normal(size=v.shape),
            rng.normal(),
            rng.normal(),
        )
        J = flow.flow_jacobian(state, trial, cfg).toarray()
        errs.append(np.linalg.norm(J - _fd_jacobian(state, trial, cfg)) / np.linalg.norm(J))
    detail = f"p={p}: Jacobian vs FD worst rel err {max(errs):.1e} (10 trials)"
    assert criterion(10, max(errs) <= 1e-5, detail), detail


# ---------------------------------------------------------------- 11


@pytest.mark.parametrize("c", [0.1, 10.0])
def test_c11_scaling_translation(criterion, c):
    m = shapes.jitter_tangential(shapes.icosphere(2), 0.2, rng=4)
    Y = mean_curvature_vector(m)
    a, v, e = surface_area(m), enclosed_volume(m), p_willmore_energy(m, Y, 2)

    def rel(x, y):
        return float(np.max(np.abs(np.asarray(x) - y)) / np.max(np.abs(y)))

    mc = m.with_vertices(c * m.vertices)
    Yc = mean_curvature_vector(mc)
    mt = m.with_vertices(m.vertices + c * np.array([3.0, -7.0, 11.0]))
    Yt = mean_curvature_vector(mt)
    errs = [
        rel(surface_area(mc), c**2 * a),
        rel(enclosed_volume(mc), c**3 * v),
        rel(Yc, Y / c),
        rel(p_willmore_energy(mc, Yc, 2), e),
        rel(surface_area(mt), a),
        rel(enclosed_volume(mt), v),
        rel(Yt, Y),
        rel(p_willmore_energy(mt, Yt, 2), e),
    ]
    detail = f"c={c}: worst rel deviation {max(errs):.1e}"
    assert criterion(11, max(errs) <= 1e-9, detail), detail
