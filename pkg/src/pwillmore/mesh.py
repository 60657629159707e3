"""Indexed triangle meshes: construction, OBJ/PLY I/O and validation."""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)

#: inradius/circumradius below this ratio marks a face as degenerate
DEGENERATE_TOL = 1e-8


class MeshError(ValueError):
    """Raised for malformed mesh data or files."""


class Mesh:
    """Immutable indexed triangle surface.

    Parameters
    ----------
    vertices : array_like of shape (V, 3)
        Vertex positions.
    faces : array_like of shape (F, 3)
        Vertex index triples, counterclockwise when seen from outside.
    """

    __slots__ = ("vertices", "faces")

    def __init__(self, vertices, faces):
        v = np.array(vertices, dtype=float).reshape(-1, 3)
        f = np.array(faces, dtype=np.int64).reshape(-1, 3)
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise MeshError(
                f"face index out of range (have {len(v)} vertices, "
                f"max index {f.max()})"
            )
        if f.size and np.any(
            (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
        ):
            raise MeshError("face repeats a vertex")
        if not np.all(np.isfinite(v)):
            raise MeshError("non-finite vertex coordinate")
        v.flags.writeable = False
        f.flags.writeable = False
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    def __setattr__(self, name, value):
        raise AttributeError("Mesh is immutable")

    def __repr__(self):
        return f"Mesh(V={self.n_vertices}, F={self.n_faces})"

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def with_vertices(self, vertices) -> "Mesh":
        """Same connectivity, new positions."""
        return Mesh(vertices, self.faces)

    def corners(self, vertices=None) -> np.ndarray:
        """Per-face corner positions, shape (F, 3, 3)."""
        v = self.vertices if vertices is None else np.asarray(vertices)
        return v[self.faces]

    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted pairs, shape (E, 2)."""
        e = np.concatenate(
            [self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]]
        )
        return np.unique(np.sort(e, axis=1), axis=0)

    def mean_edge_length(self) -> float:
        e = self.edges()
        return float(
            np.linalg.norm(self.vertices[e[:, 0]] - self.vertices[e[:, 1]], axis=1).mean()
        )


@dataclass(frozen=True)
class MeshDiagnostics:
    is_closed: bool
    is_oriented: bool
    min_face_quality: float
    genus: int | None
    boundary_edge_count: int

    @property
    def ok(self) -> bool:
        """True when the mesh may enter the flow or regularization."""
        return (
            self.is_closed
            and self.is_oriented
            and self.min_face_quality > DEGENERATE_TOL
        )

    def problems(self) -> list[str]:
        out = []
        if not self.is_closed:
            out.append(f"mesh not closed ({self.boundary_edge_count} boundary edges)")
        if not self.is_oriented:
            out.append("mesh not consistently oriented")
        if not self.min_face_quality > DEGENERATE_TOL:
            out.append(f"degenerate face (quality {self.min_face_quality:.3g})")
        return out


def face_quality(m: Mesh, vertices=None) -> np.ndarray:
    """Inradius / circumradius per face (0.5 for equilateral)."""
    p = m.corners(vertices)
    a = np.linalg.norm(p[:, 1] - p[:, 2], axis=1)
    b = np.linalg.norm(p[:, 2] - p[:, 0], axis=1)
    c = np.linalg.norm(p[:, 0] - p[:, 1], axis=1)
    area2 = np.linalg.norm(np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1)
    s = 0.5 * (a + b + c)
    with np.errstate(divide="ignore", invalid="ignore"):
        r_in = 0.5 * area2 / s
        r_circ = a * b * c / (2.0 * area2)
        q = r_in / r_circ
    return np.where(np.isfinite(q), q, 0.0)


def validate_mesh(m: Mesh) -> MeshDiagnostics:
    """Topological and geometric diagnostics; never raises."""
    f = m.faces
    directed = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    undirected = np.sort(directed, axis=1)
    _, inv, counts = np.unique(undirected, axis=0, return_inverse=True, return_counts=True)
    inv = inv.ravel()
    boundary = int(np.sum(counts == 1))
    manifold = bool(np.all(counts <= 2))
    is_closed = bool(f.size) and boundary == 0 and manifold

    # every directed edge must appear once; its twin runs the other way
    _, dcounts = np.unique(directed, axis=0, return_counts=True)
    forward = directed[:, 0] < directed[:, 1]
    n_fwd = np.bincount(inv, weights=forward, minlength=len(counts))
    pairs_opposite = np.all(n_fwd[counts == 2] == 1)
    is_oriented = bool(np.all(dcounts == 1)) and bool(pairs_opposite) and manifold

    quality = face_quality(m)
    genus = None
    if is_closed:
        chi = m.n_vertices - len(counts) + m.n_faces
        genus = (2 - chi) // 2
    return MeshDiagnostics(
        is_closed=is_closed,
        is_oriented=is_oriented,
        min_face_quality=float(quality.min()) if quality.size else 0.0,
        genus=genus,
        boundary_edge_count=boundary,
    )


def vertex_valences(m: Mesh) -> np.ndarray:
    """Number of faces incident to each vertex."""
    return np.bincount(m.faces.ravel(), minlength=m.n_vertices)


# --------------------------------------------------------------------- I/O


def _triangulate(poly: list[int], where: str) -> list[list[int]]:
    if len(poly) < 3 or len(poly) > 4:
        raise MeshError(f"{where}: face with {len(poly)} vertices")
    if len(poly) == 4:
        logger.warning("%s: quad face fan-triangulated", where)
        return [[poly[0], poly[1], poly[2]], [poly[0], poly[2], poly[3]]]
    return [poly]


def _read_obj(path) -> Mesh:
    verts, faces = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            where = f"{path}:{lineno}"
            try:
                if parts[0] == "v":
                    verts.append([float(x) for x in parts[1:4]])
                    if len(verts[-1]) != 3:
                        raise MeshError(f"{where}: vertex needs 3 coordinates")
                elif parts[0] == "f":
                    # 'f 1/2/3 ...' keeps the position index only
                    idx = []
                    for tok in parts[1:]:
                        i = int(tok.split("/")[0])
                        idx.append(i - 1 if i > 0 else len(verts) + i)
                    faces.extend(_triangulate(idx, where))
            except ValueError as exc:
                if isinstance(exc, MeshError):
                    raise
                raise MeshError(f"{where}: cannot parse {line.strip()!r}") from exc
    return Mesh(np.array(verts, dtype=float).reshape(-1, 3), faces)


def _read_ply(path) -> Mesh:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise MeshError(f"{path}: missing 'ply' magic")
    n_vert = n_face = None
    vprops: list[str] = []
    current = None
    body = None
    for i, line in enumerate(lines[1:], 1):
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "format":
            if parts[1] != "ascii":
                raise MeshError(f"{path}: only ASCII PLY is supported")
        elif parts[0] == "element":
            current = parts[1]
            if current == "vertex":
                n_vert = int(parts[2])
            elif current == "face":
                n_face = int(parts[2])
        elif parts[0] == "property" and current == "vertex":
            vprops.append(parts[-1])
        elif parts[0] == "end_header":
            body = i + 1
            break
    if body is None or n_vert is None:
        raise MeshError(f"{path}: incomplete PLY header")
    try:
        ix = [vprops.index(k) for k in ("x", "y", "z")]
    except ValueError as exc:
        raise MeshError(f"{path}: vertex element lacks x/y/z") from exc
    rows = [ln for ln in lines[body:] if ln.strip()]
    if len(rows) < n_vert + (n_face or 0):
        raise MeshError(f"{path}: truncated PLY body")
    try:
        verts = [[float(ln.split()[k]) for k in ix] for ln in rows[:n_vert]]
        faces = []
        for j, ln in enumerate(rows[n_vert : n_vert + (n_face or 0)]):
            vals = [int(x) for x in ln.split()]
            if vals[0] != len(vals) - 1:
                raise MeshError(f"{path}: face {j} count mismatch")
            faces.extend(_triangulate(vals[1:], f"{path}: face {j}"))
    except (ValueError, IndexError) as exc:
        if isinstance(exc, MeshError):
            raise
        raise MeshError(f"{path}: cannot parse PLY body") from exc
    return Mesh(np.array(verts, dtype=float).reshape(-1, 3), faces)


def load_mesh(path) -> Mesh:
    """Read an OBJ or ASCII PLY file; quads are split along their 0-2 diagonal."""
    path = os.fspath(path)
    ext = os.path.splitext(path)[1].lower()
    if ext == ".ply":
        return _read_ply(path)
    if ext == ".obj":
        return _read_obj(path)
    with open(path) as fh:
        head = fh.readline().strip()
    return _read_ply(path) if head == "ply" else _read_obj(path)


def save_mesh(m: Mesh, path) -> None:
    """Write OBJ (default) or ASCII PLY, coordinates with 17 significant digits."""
    if m.n_faces == 0:
        raise MeshError("refusing to write a mesh without faces")
    path = os.fspath(path)
    fmt = "%.17g %.17g %.17g"
    if path.lower().endswith(".ply"):
        with open(path, "w") as fh:
            fh.write("ply\nformat ascii 1.0\n")
            fh.write(f"element vertex {m.n_vertices}\n")
            fh.write("property double x\nproperty double y\nproperty double z\n")
            fh.write(f"element face {m.n_faces}\n")
            fh.write("property list uchar int vertex_indices\nend_header\n")
            np.savetxt(fh, m.vertices, fmt=fmt)
            np.savetxt(fh, m.faces, fmt="3 %d %d %d")
    else:
        with open(path, "w") as fh:
            np.savetxt(fh, m.vertices, fmt="v " + fmt)
            np.savetxt(fh, m.faces + 1, fmt="f %d %d %d")
