"""Test surfaces: platonic solids, icospheres, ellipsoids, tori, planar grids."""

from __future__ import annotations

import numpy as np

from .mesh import Mesh


def tetrahedron(edge: float = 1.0) -> Mesh:
    """Regular tetrahedron with the given edge length, outward orientation."""
    v = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=float)
    v *= edge / (2.0 * np.sqrt(2.0))
    f = [[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]]
    return Mesh(v, f)


def cube(size: float = 1.0) -> Mesh:
    """Axis-aligned cube [0, size]^3 split into 12 triangles."""
    v = size * np.array(
        [[x, y, z] for x in (0, 1) for y in (0, 1) for z in (0, 1)], dtype=float
    )
    # vertex index = 4x + 2y + z
    quads = [
        [0, 1, 3, 2],  # x = 0
        [4, 6, 7, 5],  # x = 1
        [0, 4, 5, 1],  # y = 0
        [2, 3, 7, 6],  # y = 1
        [0, 2, 6, 4],  # z = 0
        [1, 5, 7, 3],  # z = 1
    ]
    f = []
    for a, b, c, d in quads:
        f += [[a, b, c], [a, c, d]]
    return Mesh(v, f)


def icosahedron(radius: float = 1.0) -> Mesh:
    t = (1.0 + np.sqrt(5.0)) / 2.0
    v = np.array(
        [
            [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
            [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
            [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
        ],
        dtype=float,
    )
    v *= radius / np.linalg.norm(v[0])
    f = [
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ]
    return Mesh(v, f)


def subdivide(m: Mesh) -> Mesh:
    """Split every triangle 1-to-4 at edge midpoints."""
    f = m.faces
    edges = np.sort(np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]]), axis=1)
    uniq, inv = np.unique(edges, axis=0, return_inverse=True)
    inv = inv.ravel()
    mid = 0.5 * (m.vertices[uniq[:, 0]] + m.vertices[uniq[:, 1]])
    nv = m.n_vertices
    F = len(f)
    a, b, c = f[:, 0], f[:, 1], f[:, 2]
    ab, bc, ca = (nv + inv[:F], nv + inv[F : 2 * F], nv + inv[2 * F :])
    new = np.concatenate(
        [
            np.stack([a, ab, ca], 1),
            np.stack([ab, b, bc], 1),
            np.stack([ca, bc, c], 1),
            np.stack([ab, bc, ca], 1),
        ]
    )
    return Mesh(np.vstack([m.vertices, mid]), new)


def icosphere(level: int = 3, radius: float = 1.0, center=(0.0, 0.0, 0.0)) -> Mesh:
    """Subdivided icosahedron with all vertices on the sphere (20 * 4**level faces)."""
    m = icosahedron()
    for _ in range(level):
        m = subdivide(m)
        v = m.vertices / np.linalg.norm(m.vertices, axis=1, keepdims=True)
        m = m.with_vertices(v)
    return m.with_vertices(radius * m.vertices + np.asarray(center, dtype=float))


def geodesic_sphere(freq: int = 4, radius: float = 1.0) -> Mesh:
    """Icosahedron with each face split into ``freq**2`` triangles, projected
    to the sphere (``20 * freq**2`` faces; any frequency, not only powers of 2).
    """
    if freq < 1:
        raise ValueError("freq must be >= 1")
    base = icosahedron()
    index = {}
    verts = []

    def vid(face, i, j, k):
        # key on (corner vertex, weight) pairs so shared edges coincide
        key = tuple(sorted((int(face[c]), w) for c, w in zip(range(3), (i, j, k)) if w))
        if key not in index:
            index[key] = len(verts)
            p = sum(w * base.vertices[v] for v, w in key) / freq
            verts.append(p / np.linalg.norm(p))
        return index[key]

    faces = []
    for f in base.faces:
        for i in range(freq):
            for j in range(freq - i):
                k = freq - i - j
                a, b, c = vid(f, k, i, j), vid(f, k - 1, i + 1, j), vid(f, k - 1, i, j + 1)
                faces.append([a, b, c])
                if k >= 2:
                    d = vid(f, k - 2, i + 1, j + 1)
                    faces.append([b, d, c])
    return Mesh(radius * np.array(verts), faces)


def ellipsoid(axes=(1.5, 1.0, 1.0), level: int = 3, freq: int | None = None) -> Mesh:
    """Icosphere (or geodesic sphere of frequency ``freq``) stretched along the axes."""
    m = icosphere(level) if freq is None else geodesic_sphere(freq)
    return m.with_vertices(m.vertices * np.asarray(axes, dtype=float))


def torus(major: float = 1.0, minor: float = 0.4, n_major: int = 24, n_minor: int = 12) -> Mesh:
    """Torus of revolution about the z axis."""
    i, j = np.meshgrid(np.arange(n_major), np.arange(n_minor), indexing="ij")
    th = 2 * np.pi * i / n_major
    ph = 2 * np.pi * j / n_minor
    rr = major + minor * np.cos(ph)
    v = np.stack([rr * np.cos(th), rr * np.sin(th), minor * np.sin(ph)], -1).reshape(-1, 3)
    idx = lambda a, b: (a % n_major) * n_minor + (b % n_minor)  # noqa: E731
    f = []
    for a in range(n_major):
        for b in range(n_minor):
            p00, p10, p11, p01 = idx(a, b), idx(a + 1, b), idx(a + 1, b + 1), idx(a, b + 1)
            f += [[p00, p10, p11], [p00, p11, p01]]
    return Mesh(v, f)


def grid(n: int, bounds=((0.0, 1.0), (0.0, 1.0)), func=None) -> Mesh:
    """Planar n x n grid of squares, each cut along its (0,0)-(1,1) diagonal.

    ``func(x, y) -> (X, Y, Z)`` optionally maps the domain point-wise.
    Returns the mapped mesh; use ``func=None`` for the flat domain itself.
    """
    (x0, x1), (y0, y1) = bounds
    x, y = np.meshgrid(np.linspace(x0, x1, n + 1), np.linspace(y0, y1, n + 1), indexing="ij")
    x, y = x.ravel(), y.ravel()
    if func is None:
        v = np.stack([x, y, np.zeros_like(x)], 1)
    else:
        v = np.stack(np.broadcast_arrays(*func(x, y)), 1).astype(float)
    f = []
    for a in range(n):
        for b in range(n):
            p00 = a * (n + 1) + b
            p10, p01, p11 = p00 + n + 1, p00 + 1, p00 + n + 2
            f += [[p00, p10, p11], [p00, p11, p01]]
    return Mesh(v, f)


def vertex_normals(m: Mesh) -> np.ndarray:
    """Area-weighted unit vertex normals."""
    p = m.corners()
    n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    acc = np.zeros_like(m.vertices)
    for k in range(3):
        np.add.at(acc, m.faces[:, k], n)
    return acc / np.linalg.norm(acc, axis=1, keepdims=True)


def jitter_tangential(m: Mesh, fraction: float = 0.1, rng=None, project_radius=None) -> Mesh:
    """Move each vertex randomly within its tangent plane.

    The step length is uniform in ``[0, fraction * mean edge length]``.  With
    ``project_radius`` the result is pushed back onto that sphere about the
    origin, which keeps an icosphere exactly spherical.
    """
    rng = np.random.default_rng(rng)
    nrm = vertex_normals(m)
    d = rng.normal(size=m.vertices.shape)
    d -= np.sum(d * nrm, axis=1, keepdims=True) * nrm
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    h = m.mean_edge_length()
    v = m.vertices + d * (fraction * h * rng.uniform(size=(m.n_vertices, 1)))
    if project_radius is not None:
        v *= project_radius / np.linalg.norm(v, axis=1, keepdims=True)
    return m.with_vertices(v)
