"""Discrete closed curves and surfaces, and their first/second-order geometry.

Conventions used throughout the package:

* normals point outward, so convex bodies have positive mean curvature;
* the mean curvature is the *trace* of the shape operator, ``H = k1 + ... + kn``
  (``H = n / r`` on a round n-sphere of radius ``r``);
* dual (vertex) areas are barycentric: a third of the incident triangle areas,
  half of the incident edge lengths on curves.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import sparse


class MeshError(ValueError):
    """Raised when a mesh violates its structural invariants."""


class DegenerateMeshError(MeshError):
    """A vertex or element has (near) zero measure.

    ``index`` is the offending vertex index when one can be named.
    """

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message if index is None else f"{message} (vertex {index})")
        self.index = index


# ---------------------------------------------------------------------------
# mesh types


@dataclass(frozen=True, eq=False)
class CurveMesh:
    """Closed polygon in the plane, vertices in counter-clockwise order."""

    vertices: np.ndarray
    check_simple: bool = field(default=True, repr=False)

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2:
            raise MeshError(f"curve vertices must have shape (N, 2), got {v.shape}")
        if len(v) < 3:
            raise MeshError("a closed curve needs at least 3 vertices")
        if not np.all(np.isfinite(v)):
            raise MeshError("curve vertices must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)

        lengths = np.linalg.norm(np.roll(v, -1, axis=0) - v, axis=1)
        if np.any(lengths <= 0.0):
            i = int(np.argmin(lengths))
            raise DegenerateMeshError("consecutive curve vertices coincide", i)
        if signed_area(v) <= 0.0:
            raise MeshError("curve must be positively oriented (counter-clockwise)")
        if self.check_simple and not _is_simple(v):
            raise MeshError("curve is self-intersecting")

    dim = 1

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    def with_vertices(self, vertices: np.ndarray) -> CurveMesh:
        return CurveMesh(vertices, check_simple=False)

    def scaled(self, factor: float) -> CurveMesh:
        return CurveMesh(self.vertices * factor, check_simple=False)


@dataclass(frozen=True, eq=False)
class SurfaceMesh:
    """Closed, consistently oriented triangle mesh in R^3."""

    vertices: np.ndarray
    triangles: np.ndarray
    area_floor: float = 1e-14
    check_topology: bool = field(default=True, repr=False)

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float)
        t = np.array(self.triangles, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise MeshError(f"surface vertices must have shape (N, 3), got {v.shape}")
        if t.ndim != 2 or t.shape[1] != 3:
            raise MeshError(f"triangles must have shape (F, 3), got {t.shape}")
        if not np.all(np.isfinite(v)):
            raise MeshError("surface vertices must be finite")
        if t.min() < 0 or t.max() >= len(v):
            raise MeshError("triangle index out of range")
        v.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)

        if self.check_topology:
            _check_closed_oriented(t, len(v))
        areas = triangle_areas(v, t)
        bad = np.flatnonzero(areas <= self.area_floor)
        if len(bad):
            raise DegenerateMeshError(
                f"triangle {int(bad[0])} has area {areas[bad[0]]:.3e} below floor",
                int(t[bad[0], 0]),
            )
        if enclosed_volume(v, t) <= 0.0:
            raise MeshError("surface must enclose positive volume (outward orientation)")

    dim = 2

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    def with_vertices(self, vertices: np.ndarray) -> SurfaceMesh:
        out = SurfaceMesh(vertices, self.triangles, self.area_floor, check_topology=False)
        # connectivity is shared, so is the cached edge list
        if "edges" in self.__dict__:
            out.__dict__["edges"] = self.edges
        return out

    def scaled(self, factor: float) -> SurfaceMesh:
        return self.with_vertices(self.vertices * factor)

    @cached_property
    def edges(self) -> np.ndarray:
        """Unique undirected edges as sorted index pairs."""
        t = self.triangles
        e = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        e = np.unique(np.sort(e, axis=1), axis=0)
        e.setflags(write=False)
        return e


Mesh = CurveMesh | SurfaceMesh


def signed_area(vertices: np.ndarray) -> float:
    x, y = vertices[:, 0], vertices[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _cross(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # np.cross carries heavy per-call overhead; this runs once per element per step
    return np.column_stack(
        [
            a[:, 1] * b[:, 2] - a[:, 2] * b[:, 1],
            a[:, 2] * b[:, 0] - a[:, 0] * b[:, 2],
            a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0],
        ]
    )


def triangle_areas(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    p = vertices[triangles]
    return 0.5 * np.linalg.norm(_cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1)


def enclosed_volume(vertices: np.ndarray, triangles: np.ndarray) -> float:
    p = vertices[triangles]
    return float(np.sum(p[:, 0] * _cross(p[:, 1], p[:, 2]))) / 6.0


@dataclass(frozen=True, eq=False)
class _Faces:
    area_vec: np.ndarray  # (F, 3) area times unit normal
    area: np.ndarray  # (F,)
    cot: np.ndarray  # (F, 3) cotangent of the angle at each corner
    opp_sq: np.ndarray  # (F, 3) squared length of the edge opposite each corner


def _faces(vertices: np.ndarray, triangles: np.ndarray) -> _Faces:
    p = vertices[triangles]
    e = [p[:, (k + 2) % 3] - p[:, (k + 1) % 3] for k in range(3)]  # opposite corner k
    area_vec = 0.5 * _cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    area = np.sqrt(np.sum(area_vec * area_vec, axis=1))
    # at corner k the sides are -e[k+2] and e[k+1]
    dots = np.column_stack([-np.sum(e[(k + 2) % 3] * e[(k + 1) % 3], axis=1) for k in range(3)])
    cot = dots / (2.0 * area)[:, None]
    opp_sq = np.column_stack([np.sum(x * x, axis=1) for x in e])
    return _Faces(area_vec, area, cot, opp_sq)


def _check_closed_oriented(triangles: np.ndarray, n_vertices: int) -> None:
    t = triangles
    directed = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    if np.any(directed[:, 0] == directed[:, 1]):
        raise MeshError("triangle with repeated vertex")
    code = directed[:, 0] * n_vertices + directed[:, 1]
    uniq, counts = np.unique(code, return_counts=True)
    if np.any(counts > 1):
        a, b = divmod(int(uniq[counts > 1][0]), n_vertices)
        raise MeshError(f"edge ({a}, {b}) is used twice with the same orientation")
    reverse = directed[:, 1] * n_vertices + directed[:, 0]
    missing = ~np.isin(reverse, uniq)
    if np.any(missing):
        a, b = directed[np.flatnonzero(missing)[0]]
        raise MeshError(f"edge ({a}, {b}) is a boundary edge; surface must be closed")


def _is_simple(v: np.ndarray) -> bool:
    """True when no two non-adjacent polygon edges intersect."""
    n = len(v)
    a = v
    b = np.roll(v, -1, axis=0)
    d = b - a

    def orient(p, q, r):
        return (q[..., 0] - p[..., 0]) * (r[..., 1] - p[..., 1]) - (q[..., 1] - p[..., 1]) * (
            r[..., 0] - p[..., 0]
        )

    i, j = np.triu_indices(n, k=2)
    keep = ~((i == 0) & (j == n - 1))
    i, j = i[keep], j[keep]
    # bounding-box prefilter keeps the quadratic check cheap
    lo = np.minimum(a, b)
    hi = np.maximum(a, b)
    overlap = np.all((lo[i] <= hi[j]) & (lo[j] <= hi[i]), axis=1)
    i, j = i[overlap], j[overlap]
    if len(i) == 0:
        return True
    o1 = orient(a[i], b[i], a[j])
    o2 = orient(a[i], b[i], b[j])
    o3 = orient(a[j], b[j], a[i])
    o4 = orient(a[j], b[j], b[i])
    scale = np.max(np.abs(d)) ** 2 * 1e-14
    crossing = (o1 * o2 < -scale) & (o3 * o4 < -scale)
    return not bool(np.any(crossing))


# ---------------------------------------------------------------------------
# generators


def regular_polygon(n: int, radius: float = 1.0) -> CurveMesh:
    """Regular ``n``-gon inscribed in the circle of the given radius."""
    theta = 2.0 * np.pi * np.arange(n) / n
    return CurveMesh(radius * np.column_stack([np.cos(theta), np.sin(theta)]))


def _icosahedron() -> tuple[np.ndarray, np.ndarray]:
    p = (1.0 + np.sqrt(5.0)) / 2.0
    v = np.array(
        [
            [-1, p, 0], [1, p, 0], [-1, -p, 0], [1, -p, 0],
            [0, -1, p], [0, 1, p], [0, -1, -p], [0, 1, -p],
            [p, 0, -1], [p, 0, 1], [-p, 0, -1], [-p, 0, 1],
        ],
        dtype=float,
    )
    f = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ],
        dtype=np.int64,
    )
    return v / np.linalg.norm(v, axis=1, keepdims=True), f


def _unit_icosphere(level: int) -> tuple[np.ndarray, np.ndarray]:
    v, f = _icosahedron()
    for _ in range(level):
        e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
        e = np.sort(e, axis=1)
        uniq, inv = np.unique(e, axis=0, return_inverse=True)
        inv = inv.reshape(-1)
        mid = v[uniq[:, 0]] + v[uniq[:, 1]]
        mid /= np.linalg.norm(mid, axis=1, keepdims=True)
        m = len(v) + inv.reshape(3, -1).T  # midpoints of edges (01, 12, 20)
        v = np.concatenate([v, mid])
        a, b, c = f[:, 0], f[:, 1], f[:, 2]
        m01, m12, m20 = m[:, 0], m[:, 1], m[:, 2]
        f = np.concatenate(
            [
                np.column_stack([a, m01, m20]),
                np.column_stack([b, m12, m01]),
                np.column_stack([c, m20, m12]),
                np.column_stack([m01, m12, m20]),
            ]
        )
    return v, f


def icosphere(radius: float = 1.0, level: int = 3) -> SurfaceMesh:
    """Subdivided icosahedron projected onto the sphere (10*4**level + 2 vertices)."""
    v, f = _unit_icosphere(level)
    return SurfaceMesh(radius * v, f)


def ellipsoid(a: float, b: float, c: float, level: int = 3) -> SurfaceMesh:
    """Icosphere stretched to semi-axes ``(a, b, c)``."""
    v, f = _unit_icosphere(level)
    return SurfaceMesh(v * np.array([a, b, c], dtype=float), f)


def perturbed_icosphere(
    radius: float = 1.0, level: int = 3, amplitude: float = 0.05, seed: int = 0
) -> SurfaceMesh:
    """Icosphere with a smooth radial bump ``r = R (1 + amplitude * p(x))``.

    ``p`` is a seeded random combination of degree-2 and degree-3 polynomials in
    the unit-sphere coordinates, scaled so that ``max |p| = 1``.
    """
    v, f = _unit_icosphere(level)
    rng = np.random.default_rng(seed)
    x, y, z = v.T
    basis = np.column_stack(
        [x * y, y * z, z * x, x * x - y * y, 3 * z * z - 1, x * y * z, x * (5 * z * z - 1)]
    )
    p = basis @ rng.normal(size=basis.shape[1])
    p /= np.max(np.abs(p))
    return SurfaceMesh(radius * v * (1.0 + amplitude * p)[:, None], f)


# ---------------------------------------------------------------------------
# io


def read_off(path: str | Path) -> SurfaceMesh:
    """Read an ASCII OFF file with triangular faces."""
    tokens = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            tokens.extend(line.split())
    if not tokens or tokens[0] != "OFF":
        raise MeshError(f"{path}: missing OFF header")
    nv, nf = int(tokens[1]), int(tokens[2])
    pos = 4
    verts = np.array(tokens[pos : pos + 3 * nv], dtype=float).reshape(nv, 3)
    pos += 3 * nv
    faces = []
    for k in range(nf):
        count = int(tokens[pos])
        if count != 3:
            raise MeshError(f"{path}: face {k} has {count} vertices; only triangles supported")
        faces.append([int(s) for s in tokens[pos + 1 : pos + 4]])
        pos += 1 + count
    return SurfaceMesh(verts, np.array(faces, dtype=np.int64).reshape(-1, 3))


def write_off(mesh: SurfaceMesh, path: str | Path) -> None:
    lines = ["OFF", f"{mesh.n_vertices} {len(mesh.triangles)} 0"]
    lines += [" ".join(f"{c:.17g}" for c in p) for p in mesh.vertices]
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles]
    Path(path).write_text("\n".join(lines) + "\n")


def read_curve_csv(path: str | Path) -> CurveMesh:
    """Read a closed curve from CSV with header ``x,y`` (closure is implicit)."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or not {"x", "y"} <= set(rows[0]):
        raise MeshError(f"{path}: expected columns x,y")
    return CurveMesh(np.array([[float(r["x"]), float(r["y"])] for r in rows]))


def write_curve_csv(mesh: CurveMesh, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y"])
        for x, y in mesh.vertices:
            w.writerow([f"{x:.17g}", f"{y:.17g}"])


def load_mesh(path: str | Path) -> Mesh:
    path = Path(path)
    if path.suffix.lower() == ".off":
        return read_off(path)
    if path.suffix.lower() == ".csv":
        return read_curve_csv(path)
    raise MeshError(f"unsupported mesh format: {path.suffix}")


# ---------------------------------------------------------------------------
# geometry


@dataclass(frozen=True, eq=False)
class GeometryState:
    """Per-vertex geometry of a mesh.

    Attributes
    ----------
    normals : (N, d) unit outward normals
    mean_curvature : (N,) H, the trace of the shape operator
    principal : (N, n) principal curvatures, ascending
    shape_operator : (N, n, n) shape operator in the tangent frame ``frames``
    frames : (N, n, d) orthonormal tangent basis per vertex
    dual_area : (N,) barycentric vertex areas (the discrete area element)
    total_area, volume : float
    min_edge : float, shortest edge length

    ``shape_operator`` and ``principal`` are fitted on first access.
    """

    normals: np.ndarray
    mean_curvature: np.ndarray
    frames: np.ndarray
    dual_area: np.ndarray
    total_area: float
    volume: float
    min_edge: float
    # the 1-ring fit is the costly part and time steppers never need it
    _shape_fit: Callable[[], np.ndarray] = field(repr=False)

    @property
    def dim(self) -> int:
        return self.frames.shape[1]

    @property
    def length_scale(self) -> float:
        """Radius of the round circle/sphere with the same total area."""
        if self.dim == 1:
            return self.total_area / (2.0 * np.pi)
        return float(np.sqrt(self.total_area / (4.0 * np.pi)))

    @cached_property
    def shape_operator(self) -> np.ndarray:
        return self._shape_fit()

    @cached_property
    def principal(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.shape_operator)

    @property
    def second_fundamental_norm2(self) -> np.ndarray:
        """|A|^2, the sum of squared principal curvatures."""
        return np.sum(self.principal**2, axis=1)

    def ambient_shape_operator(self) -> np.ndarray:
        """Shape operator as an (N, d, d) tensor acting on ambient vectors."""
        return np.einsum("nia,nij,njb->nab", self.frames, self.shape_operator, self.frames)


def curve_stiffness(vertices: np.ndarray, edge_weights: np.ndarray | None = None):
    """Inverse-edge-length stiffness matrix of a closed polygon.

    Edge ``i`` joins vertex ``i`` to ``i + 1``.
    """
    n = len(vertices)
    lengths = np.linalg.norm(np.roll(vertices, -1, axis=0) - vertices, axis=1)
    c = 1.0 / lengths
    if edge_weights is not None:
        c = c * edge_weights
    i = np.arange(n)
    j = (i + 1) % n
    rows = np.concatenate([i, j, i, j])
    cols = np.concatenate([j, i, i, j])
    vals = np.concatenate([-c, -c, c, c])
    return sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))


def cotangent_weights(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Half-cotangents per triangle corner, ``(F, 3)``.

    Entry ``k`` belongs to the edge opposite corner ``k``.
    """
    return 0.5 * _faces(vertices, triangles).cot


def cotangent_stiffness(
    vertices: np.ndarray, triangles: np.ndarray, face_weights: np.ndarray | None = None
):
    """Cotangent stiffness matrix, ``K[i, j] = -(cot a + cot b) / 2`` off the diagonal.

    ``face_weights`` scales each triangle's contribution.
    """
    n = len(vertices)
    c = cotangent_weights(vertices, triangles)
    if face_weights is not None:
        c = c * face_weights[:, None]
    i = triangles[:, [1, 2, 0]].ravel()
    j = triangles[:, [2, 0, 1]].ravel()
    c = c.ravel()
    rows = np.concatenate([i, j, i, j])
    cols = np.concatenate([j, i, i, j])
    vals = np.concatenate([-c, -c, c, c])
    return sparse.csr_matrix((vals, (rows, cols)), shape=(n, n))


def mixed_voronoi_areas(
    vertices: np.ndarray, triangles: np.ndarray, faces: _Faces | None = None
) -> np.ndarray:
    """Per-vertex mixed Voronoi areas (circumcentric cells, clipped on obtuse triangles)."""
    fc = _faces(vertices, triangles) if faces is None else faces
    n = len(vertices)
    obtuse_at = fc.cot < 0.0
    obtuse = np.any(obtuse_at, axis=1)
    out = np.zeros(n)
    for k in range(3):
        k1, k2 = (k + 1) % 3, (k + 2) % 3
        voronoi = (fc.opp_sq[:, k2] * fc.cot[:, k2] + fc.opp_sq[:, k1] * fc.cot[:, k1]) / 8.0
        clipped = np.where(obtuse_at[:, k], fc.area / 2.0, fc.area / 4.0)
        out += np.bincount(triangles[:, k], np.where(obtuse, clipped, voronoi), n)
    return out


def _cotangent_apply(
    vertices: np.ndarray, triangles: np.ndarray, faces: _Faces | None = None
) -> np.ndarray:
    """``K @ vertices`` for the unweighted cotangent stiffness, without assembling K."""
    fc = _faces(vertices, triangles) if faces is None else faces
    n = len(vertices)
    c = 0.5 * fc.cot.ravel()
    i = triangles[:, [1, 2, 0]].ravel()
    j = triangles[:, [2, 0, 1]].ravel()
    d = c[:, None] * (vertices[i] - vertices[j])
    return np.column_stack(
        [np.bincount(i, d[:, k], n) - np.bincount(j, d[:, k], n) for k in range(3)]
    )


def geometry_state(mesh: Mesh) -> GeometryState:
    """Normals, curvatures, shape operator and dual areas of ``mesh``.

    Raises
    ------
    DegenerateMeshError
        If a vertex has zero dual area.
    """
    if isinstance(mesh, CurveMesh):
        return _curve_state(mesh)
    return _surface_state(mesh)


def _curve_state(mesh: CurveMesh) -> GeometryState:
    v = mesh.vertices
    e = np.roll(v, -1, axis=0) - v
    lengths = np.linalg.norm(e, axis=1)
    prev_e = np.roll(e, 1, axis=0)
    prev_len = np.roll(lengths, 1)
    dual = 0.5 * (lengths + prev_len)
    if np.any(dual <= 0.0):
        raise DegenerateMeshError("zero dual length", int(np.argmin(dual)))

    cross = prev_e[:, 0] * e[:, 1] - prev_e[:, 1] * e[:, 0]
    dot = np.einsum("ij,ij->i", prev_e, e)
    turning = np.arctan2(cross, dot)
    H = turning / dual

    edge_normals = np.column_stack([e[:, 1], -e[:, 0]]) / lengths[:, None]
    nrm = edge_normals + np.roll(edge_normals, 1, axis=0)
    nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
    tangent = np.column_stack([-nrm[:, 1], nrm[:, 0]])

    return GeometryState(
        normals=nrm,
        mean_curvature=H,
        frames=tangent[:, None, :],
        dual_area=dual,
        total_area=float(np.sum(lengths)),
        volume=signed_area(v),
        min_edge=float(np.min(lengths)),
        _shape_fit=lambda: H[:, None, None].copy(),
    )


def _tangent_frames(normals: np.ndarray) -> np.ndarray:
    # pick the coordinate axis least aligned with the normal as a seed
    seed = np.zeros_like(normals)
    seed[np.arange(len(normals)), np.argmin(np.abs(normals), axis=1)] = 1.0
    e1 = _cross(normals, seed)
    e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
    e2 = _cross(normals, e1)
    return np.stack([e1, e2], axis=1)


def _surface_state(mesh: SurfaceMesh) -> GeometryState:
    v, t = mesh.vertices, mesh.triangles
    n = len(v)
    fc = _faces(v, t)
    fn, fa = fc.area_vec, fc.area

    dual = np.bincount(t.ravel(), weights=np.repeat(fa / 3.0, 3), minlength=n)
    if np.any(dual <= 0.0):
        raise DegenerateMeshError("zero dual area", int(np.argmin(dual)))

    vn = np.column_stack(
        [np.bincount(t.ravel(), np.repeat(fn[:, k], 3), n) for k in range(3)]
    )
    vn_len = np.linalg.norm(vn, axis=1)
    if np.any(vn_len <= 0.0):
        raise DegenerateMeshError("vertex normal undefined", int(np.argmin(vn_len)))
    vn /= vn_len[:, None]

    # barycentric areas under-weight low-valence vertices by O(1); the Voronoi
    # cell keeps H pointwise consistent, so it is used for H alone
    H = np.sum(_cotangent_apply(v, t, fc) * vn, axis=1) / mixed_voronoi_areas(v, t, fc)

    frames = _tangent_frames(vn)
    edges = mesh.edges

    def shape_fit():
        return _reconcile_trace(_fit_shape_operator(v, edges, vn, frames), H)

    return GeometryState(
        normals=vn,
        mean_curvature=H,
        frames=frames,
        dual_area=dual,
        total_area=float(np.sum(fa)),
        volume=enclosed_volume(v, t),
        min_edge=float(np.min(np.linalg.norm(v[edges[:, 0]] - v[edges[:, 1]], axis=1))),
        _shape_fit=shape_fit,
    )


def _fit_shape_operator(v, edges, normals, frames) -> np.ndarray:
    """Least-squares 1-ring height fit ``w = d u + e v + (a u^2 + 2 b u v + c v^2) / 2``.

    The linear terms absorb the tilt of the area-weighted normal; without them
    the Hessian picks up an O(1) anisotropy on irregular vertices.
    """
    n = len(v)
    src = np.concatenate([edges[:, 0], edges[:, 1]])
    dst = np.concatenate([edges[:, 1], edges[:, 0]])
    d = v[dst] - v[src]
    u = np.einsum("ij,ij->i", d, frames[src, 0])
    s = np.einsum("ij,ij->i", d, frames[src, 1])
    w = np.einsum("ij,ij->i", d, normals[src])
    rows = np.column_stack([u, s, 0.5 * u * u, u * s, 0.5 * s * s])
    m = rows.shape[1]
    outer = (rows[:, :, None] * rows[:, None, :]).reshape(-1, m * m)
    ata = np.column_stack([np.bincount(src, outer[:, k], n) for k in range(m * m)])
    ata = ata.reshape(n, m, m)
    atb = np.column_stack([np.bincount(src, rows[:, k] * w, n) for k in range(m)])
    coef = np.linalg.solve(ata, atb[:, :, None])[:, :, 0]
    a, b, c = coef[:, 2], coef[:, 3], coef[:, 4]
    # neighbours fall below the tangent plane on convex surfaces: flip the sign
    return -np.stack([np.stack([a, b], -1), np.stack([b, c], -1)], axis=1)


def _reconcile_trace(shape: np.ndarray, H: np.ndarray) -> np.ndarray:
    """Scale each shape operator so its trace equals the cotangent ``H``.

    Near-zero fitted traces cannot be scaled; those vertices get a uniform shift.
    """
    tr = np.trace(shape, axis1=1, axis2=2)
    tiny = np.abs(tr) <= 1e-8 * (np.abs(H) + np.max(np.abs(tr)) + 1e-300)
    out = shape.copy()
    ok = ~tiny
    out[ok] *= (H[ok] / tr[ok])[:, None, None]
    shift = 0.5 * (H[tiny] - tr[tiny])
    out[tiny] += shift[:, None, None] * np.eye(2)
    return out


# ---------------------------------------------------------------------------
# weights and pinching


def as_weight_field(values, n_vertices: int) -> np.ndarray:
    """Validate per-vertex weight values ``phi`` (a scalar is broadcast)."""
    phi = np.broadcast_to(np.asarray(values, dtype=float), (n_vertices,)).copy()
    if not np.all(np.isfinite(phi)):
        raise ValueError("weight field must be finite")
    phi.setflags(write=False)
    return phi


def weighted_measure(state: GeometryState, phi: np.ndarray) -> tuple[np.ndarray, float]:
    """Per-vertex weighted measure ``exp(-phi) * dual_area`` and its total."""
    phi = np.asarray(phi, dtype=float)
    if phi.shape != state.dual_area.shape:
        raise ValueError(
            f"weight field has {phi.size} values for {state.dual_area.size} vertices"
        )
    mu = np.exp(-phi) * state.dual_area
    return mu, float(np.sum(mu))


@dataclass(frozen=True)
class PinchingReport:
    """How close the surface is to satisfying ``h >= eps * H * g``.

    ``eps_star`` is ``min_v min_i k_i / H`` and is ``nan`` unless ``H > 0``
    everywhere. ``ratios`` holds ``a_i = k_i / H`` per vertex; ``spread`` is the
    largest per-vertex gap ``max_i a_i - min_i a_i`` (zero at umbilic points).
    """

    eps_star: float
    ratios: np.ndarray
    spread: float
    H_positive: bool
    satisfies_half: bool


def pinching_report(state: GeometryState, tol: float = 5e-3) -> PinchingReport:
    """Pinching constant and curvature ratios.

    ``satisfies_half`` tests ``eps_star >= 1/2 - tol``: the trace-reconciled
    curvatures give ``min k_i / H <= 1/n`` with equality only at exactly umbilic
    points, so a round mesh lands a hair below one half.
    """
    H = state.mean_curvature
    if not np.all(H > 0.0):
        return PinchingReport(
            eps_star=float("nan"),
            ratios=np.full_like(state.principal, np.nan),
            spread=float("nan"),
            H_positive=False,
            satisfies_half=False,
        )
    ratios = state.principal / H[:, None]
    eps_star = float(np.min(ratios))
    spread = float(np.max(np.ptp(ratios, axis=1)))
    return PinchingReport(
        eps_star=eps_star,
        ratios=ratios,
        spread=spread,
        H_positive=True,
        satisfies_half=eps_star >= 0.5 - tol,
    )
