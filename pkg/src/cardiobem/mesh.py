"""Triangulated surfaces, domain configuration and nodal fields.

Conventions used throughout the toolkit:

* lengths are centimetres, potentials millivolts, conductivities mS/cm;
* surface meshes are closed, watertight, consistently wound triangle meshes
  with outward orientation (positive enclosed volume).  Normals and areas are
  always recomputed from vertex coordinates, never trusted from a file;
* vertex indices are 0-based everywhere, including on disk;
* nodal fields live on mesh vertices (piecewise-linear collocation densities).

The 2D counterpart :class:`CurveMesh` (closed polygonal loops, used by the
annulus verification cases) mirrors the same interface: ``elements`` are
vertex index pairs, ``areas`` are segment lengths and the enclosed "volume"
is the signed plane area.
"""

from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import GeometryError, ParseError, PointOnBoundary, ShapeMismatch

__all__ = [
    "SurfaceMesh",
    "CurveMesh",
    "DomainConfig",
    "NodalField",
    "PointLocation",
    "load_mesh",
    "save_mesh",
    "signed_volume",
    "point_location",
    "points_inside",
    "surface_distance",
    "save_nodal_field",
    "load_nodal_field",
]

logger = logging.getLogger(__name__)

_MESH_TOKENS = itertools.count()

# Deterministic "random" ray directions for parity tests; re-cast along the
# next one when a ray grazes an edge.
_RAY_DIRECTIONS = np.array(
    [
        [0.57735026919, 0.57735026919, 0.57735026919],
        [0.85065080835, 0.52573111212, 0.0],
        [-0.23907380037, 0.66158896187, 0.71083353418],
        [0.32798527761, -0.59340005443, 0.73497112566],
        [-0.81649658092, 0.40824829046, 0.40824829046],
        [0.70710678119, 0.0, -0.70710678119],
        [-0.26726124191, -0.53452248382, 0.80178372573],
        [0.48507125007, 0.72760687510, -0.48507125007],
    ]
)


class PointLocation(Enum):
    """Where a query point sits relative to a heart/torso configuration."""

    IN_HEART = "in_heart"
    IN_SHELL = "in_shell"
    OUTSIDE = "outside"
    ON_BOUNDARY = "on_boundary"


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class SurfaceMesh:
    """Closed triangle mesh with outward orientation.

    Parameters
    ----------
    vertices : (n, 3) float array
        Vertex coordinates in cm.
    triangles : (m, 3) int array
        Vertex indices, counter-clockwise seen from outside.
    surface_id : str
        Label used to match nodal fields to their surface.

    Raises
    ------
    GeometryError
        If the mesh is open, inconsistently wound beyond a global flip,
        has degenerate triangles, or encloses no volume.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    surface_id: str = "surface"

    def __post_init__(self) -> None:
        verts = np.asarray(self.vertices, dtype=float)
        tris = np.asarray(self.triangles, dtype=np.int64)
        if verts.ndim != 2 or verts.shape[1] != 3 or verts.shape[0] < 4:
            raise GeometryError("vertices must be an (n>=4, 3) array")
        if tris.ndim != 2 or tris.shape[1] != 3 or tris.shape[0] < 4:
            raise GeometryError("triangles must be an (m>=4, 3) array")
        if not np.all(np.isfinite(verts)):
            raise GeometryError("non-finite vertex coordinates")
        if tris.min() < 0 or tris.max() >= len(verts):
            raise GeometryError("triangle indices out of range")

        _check_watertight(tris)
        if signed_volume(verts, tris) < 0.0:
            logger.info(
                "mesh %r stored with inward orientation; applying global flip",
                self.surface_id,
            )
            tris = tris[:, ::-1]
        vol = signed_volume(verts, tris)
        if vol <= 0.0:
            raise GeometryError("mesh encloses no positive volume")

        normals, areas = _triangle_frames(verts, tris)
        diag = float(np.linalg.norm(verts.max(axis=0) - verts.min(axis=0)))
        # smallest altitude of a triangle is 2*area / longest edge
        edges = verts[tris] - verts[np.roll(tris, 1, axis=1)]  # (m, 3, 3)
        longest = np.linalg.norm(edges, axis=2).max(axis=1)
        altitudes = 2.0 * areas / longest
        if altitudes.min() <= 1e-9 * diag:
            raise GeometryError("degenerate triangle (altitude below 1e-9 of bbox)")

        object.__setattr__(self, "vertices", _freeze(verts))
        object.__setattr__(self, "triangles", _freeze(tris))
        object.__setattr__(self, "_normals", _freeze(normals))
        object.__setattr__(self, "_areas", _freeze(areas))
        object.__setattr__(self, "_volume", vol)
        object.__setattr__(self, "_token", next(_MESH_TOKENS))

    # geometry is 3D; CurveMesh mirrors this with dim == 2
    @property
    def dim(self) -> int:
        return 3

    @property
    def elements(self) -> np.ndarray:
        return self.triangles

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def normals(self) -> np.ndarray:
        """(m, 3) outward unit normals, recomputed from coordinates."""
        return self._normals

    @property
    def areas(self) -> np.ndarray:
        """(m,) triangle areas in cm^2."""
        return self._areas

    @property
    def enclosed_volume(self) -> float:
        """Volume enclosed by the surface (positive by construction)."""
        return self._volume

    @property
    def cache_token(self) -> int:
        """Stable identity used to memoize operators assembled on this mesh."""
        return self._token

    @property
    def vertex_weights(self) -> np.ndarray:
        """Lumped quadrature weights: w_i = sum of adjacent areas / 3.

        These realize the boundary integral of a nodal field,
        ``integral(u dsigma) ~= w . u``, exact for densities constant on the
        one-ring average sense and consistent with piecewise-linear
        integration of the constant on each triangle.
        """
        w = np.zeros(self.n_vertices)
        np.add.at(w, self.triangles.ravel(), np.repeat(self.areas / 3.0, 3))
        return w

    @property
    def edges(self) -> np.ndarray:
        """(k, 2) unique undirected edges (i < j)."""
        e = np.vstack(
            [self.triangles[:, [0, 1]], self.triangles[:, [1, 2]], self.triangles[:, [2, 0]]]
        )
        e.sort(axis=1)
        return np.unique(e, axis=0)

    def element_diameters(self) -> np.ndarray:
        """(m,) longest edge per triangle, used for near-field switching."""
        edges = self.vertices[self.triangles] - self.vertices[np.roll(self.triangles, 1, axis=1)]
        return np.linalg.norm(edges, axis=2).max(axis=1)


@dataclass(frozen=True)
class CurveMesh:
    """Closed polygonal loop(s) in the plane, the 2D analogue of a surface.

    ``segments`` are directed index pairs tracing the loop counter-clockwise
    (outward normals point away from the enclosed region); a globally
    clockwise input is flipped, mirroring the 3D orientation repair.
    """

    vertices: np.ndarray
    segments: np.ndarray
    surface_id: str = "curve"

    def __post_init__(self) -> None:
        verts = np.asarray(self.vertices, dtype=float)
        segs = np.asarray(self.segments, dtype=np.int64)
        if verts.ndim != 2 or verts.shape[1] != 2 or verts.shape[0] < 3:
            raise GeometryError("vertices must be an (n>=3, 2) array")
        if segs.ndim != 2 or segs.shape[1] != 2:
            raise GeometryError("segments must be an (m, 2) array")
        if not np.all(np.isfinite(verts)):
            raise GeometryError("non-finite vertex coordinates")
        if segs.min() < 0 or segs.max() >= len(verts):
            raise GeometryError("segment indices out of range")
        out_deg = np.bincount(segs[:, 0], minlength=len(verts))
        in_deg = np.bincount(segs[:, 1], minlength=len(verts))
        if not (np.all(out_deg == 1) and np.all(in_deg == 1)):
            raise GeometryError("curve is not a disjoint union of closed loops")

        if _signed_area(verts, segs) < 0.0:
            logger.info("curve %r wound clockwise; applying global flip", self.surface_id)
            segs = segs[:, ::-1]
        area = _signed_area(verts, segs)
        if area <= 0.0:
            raise GeometryError("curve encloses no positive area")

        d = verts[segs[:, 1]] - verts[segs[:, 0]]
        lengths = np.linalg.norm(d, axis=1)
        if lengths.min() <= 1e-12 * max(1.0, lengths.max()):
            raise GeometryError("degenerate segment")
        tangents = d / lengths[:, None]
        normals = np.column_stack([tangents[:, 1], -tangents[:, 0]])

        object.__setattr__(self, "vertices", _freeze(verts))
        object.__setattr__(self, "segments", _freeze(segs))
        object.__setattr__(self, "_normals", _freeze(normals))
        object.__setattr__(self, "_areas", _freeze(lengths))
        object.__setattr__(self, "_volume", area)
        object.__setattr__(self, "_token", next(_MESH_TOKENS))

    @property
    def dim(self) -> int:
        return 2

    @property
    def elements(self) -> np.ndarray:
        return self.segments

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def normals(self) -> np.ndarray:
        return self._normals

    @property
    def areas(self) -> np.ndarray:
        """Segment lengths (the 2D surface measure)."""
        return self._areas

    @property
    def enclosed_volume(self) -> float:
        """Enclosed plane area (2D analogue of the volume)."""
        return self._volume

    @property
    def cache_token(self) -> int:
        return self._token

    @property
    def vertex_weights(self) -> np.ndarray:
        w = np.zeros(self.n_vertices)
        np.add.at(w, self.segments.ravel(), np.repeat(self.areas / 2.0, 2))
        return w

    @property
    def edges(self) -> np.ndarray:
        e = self.segments.copy()
        e.sort(axis=1)
        return np.unique(e, axis=0)

    def element_diameters(self) -> np.ndarray:
        return self.areas.copy()


@dataclass(frozen=True)
class NodalField:
    """Values attached to the vertices of one surface.

    ``units`` is a free-form label ("mV", "uA/cm^2", ...); operations never
    convert units, they only propagate the labels they document.
    """

    surface_id: str
    values: np.ndarray
    units: str = "mV"

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 1:
            raise ShapeMismatch("field values must be one-dimensional")
        if not np.all(np.isfinite(vals)):
            raise ShapeMismatch("field contains non-finite values")
        object.__setattr__(self, "values", _freeze(vals))

    @staticmethod
    def for_mesh(mesh, values, units: str = "mV") -> "NodalField":
        """Build a field and check its length against ``mesh``."""
        vals = np.asarray(values, dtype=float)
        if vals.shape != (mesh.n_vertices,):
            raise ShapeMismatch(
                f"field length {vals.shape} does not match mesh "
                f"{mesh.surface_id!r} with {mesh.n_vertices} vertices"
            )
        return NodalField(mesh.surface_id, vals, units)

    def check_on(self, mesh) -> np.ndarray:
        """Return values after verifying the field belongs on ``mesh``."""
        if self.surface_id != mesh.surface_id:
            raise ShapeMismatch(
                f"field on {self.surface_id!r} applied to mesh {mesh.surface_id!r}"
            )
        if len(self.values) != mesh.n_vertices:
            raise ShapeMismatch(
                f"field length {len(self.values)} != {mesh.n_vertices} vertices"
            )
        return self.values


@dataclass(frozen=True)
class DomainConfig:
    """Heart surface strictly inside a torso surface.

    The closed region between the two surfaces is the passive conductor
    shell; the inside of ``heart`` is the active tissue domain.
    """

    heart: SurfaceMesh | CurveMesh
    torso: SurfaceMesh | CurveMesh
    containment_tolerance: float = 1e-6

    def __post_init__(self) -> None:
        if self.heart.dim != self.torso.dim:
            raise GeometryError("heart and torso must share the ambient dimension")
        if self.containment_tolerance <= 0.0:
            raise GeometryError("containment_tolerance must be positive")
        if self.heart.surface_id == self.torso.surface_id:
            raise GeometryError("heart and torso need distinct surface ids")
        inside = points_inside(self.torso, self.heart.vertices)
        if not inside.all():
            raise GeometryError("heart surface is not strictly inside the torso")
        if points_inside(self.heart, self.torso.vertices).any():
            raise GeometryError("torso surface dips inside the heart")
        gap = min(
            surface_distance(self.torso, self.heart.vertices).min(),
            surface_distance(self.heart, self.torso.vertices).min(),
        )
        if gap <= self.containment_tolerance:
            raise GeometryError(
                f"surfaces come within {gap:.3e} cm of each other "
                f"(tolerance {self.containment_tolerance:.1e})"
            )


# ---------------------------------------------------------------------------
# geometry predicates


def _triangle_frames(verts: np.ndarray, tris: np.ndarray):
    p0, p1, p2 = verts[tris[:, 0]], verts[tris[:, 1]], verts[tris[:, 2]]
    cross = np.cross(p1 - p0, p2 - p0)
    norm = np.linalg.norm(cross, axis=1)
    if np.any(norm == 0.0):
        raise GeometryError("zero-area triangle")
    return cross / norm[:, None], 0.5 * norm


def _check_watertight(tris: np.ndarray) -> None:
    directed = np.vstack(
        [tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]]
    )
    keys = directed[:, 0].astype(np.int64) * (directed.max() + 1) + directed[:, 1]
    uniq, counts = np.unique(keys, return_counts=True)
    if np.any(counts > 1):
        raise GeometryError("inconsistent winding: a directed edge repeats")
    rev = directed[:, 1].astype(np.int64) * (directed.max() + 1) + directed[:, 0]
    if not np.isin(rev, uniq).all():
        raise GeometryError("open surface: an edge is used by only one triangle")


def _signed_area(verts: np.ndarray, segs: np.ndarray) -> float:
    a = verts[segs[:, 0]]
    b = verts[segs[:, 1]]
    return float(0.5 * np.sum(a[:, 0] * b[:, 1] - b[:, 0] * a[:, 1]))


def signed_volume(vertices, triangles=None) -> float:
    """Signed enclosed volume of a closed triangle mesh (divergence theorem).

    Accepts either a :class:`SurfaceMesh` / :class:`CurveMesh` (returning the
    stored positive volume / area) or raw ``(vertices, triangles)`` arrays, in
    which case the sign reflects the winding as given.
    """
    if triangles is None:
        return vertices.enclosed_volume
    verts = np.asarray(vertices, dtype=float)
    tris = np.asarray(triangles, dtype=np.int64)
    if verts.shape[1] == 2:
        return _signed_area(verts, tris)
    p0, p1, p2 = verts[tris[:, 0]], verts[tris[:, 1]], verts[tris[:, 2]]
    return float(np.einsum("ij,ij->", p0, np.cross(p1, p2)) / 6.0)


def _ray_parity(mesh: SurfaceMesh, points: np.ndarray) -> np.ndarray:
    """Crossing-parity containment test, robust to edge grazing by re-cast."""
    verts, tris = mesh.vertices, mesh.triangles
    v0 = verts[tris[:, 0]]
    e1 = verts[tris[:, 1]] - v0
    e2 = verts[tris[:, 2]] - v0
    inside = np.zeros(len(points), dtype=bool)
    pending = np.arange(len(points))
    scale = float(np.linalg.norm(verts.max(0) - verts.min(0)))
    for d in _RAY_DIRECTIONS:
        if len(pending) == 0:
            break
        pts = points[pending]
        p = np.cross(d, e2)  # (m, 3)
        det = np.einsum("mj,mj->m", e1, p)
        ok = np.abs(det) > 1e-14
        inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        s = pts[:, None, :] - v0[None, :, :]  # (p, m, 3)
        u = np.einsum("pmj,mj->pm", s, p) * inv
        q = np.cross(s, e1[None, :, :])
        v = np.einsum("pmj,j->pm", q, d) * inv
        t = np.einsum("pmj,mj->pm", q, e2) * inv
        eps = 1e-10
        hit = ok & (u > eps) & (v > eps) & (u + v < 1.0 - eps) & (t > eps * scale)
        # grazing: intersection parameter close to an edge of any triangle
        margin = ok & (t > eps * scale) & (
            (np.abs(u) <= eps) | (np.abs(v) <= eps) | (np.abs(u + v - 1.0) <= eps)
        )
        ambiguous = margin.any(axis=1)
        parity = (hit.sum(axis=1) % 2).astype(bool)
        settled = ~ambiguous
        inside[pending[settled]] = parity[settled]
        pending = pending[ambiguous]
    if len(pending):
        # all rays grazed an edge; fall back to the last parity computed
        inside[pending] = parity[ambiguous]
    return inside


def _curve_parity(mesh: CurveMesh, points: np.ndarray) -> np.ndarray:
    a = mesh.vertices[mesh.segments[:, 0]]
    b = mesh.vertices[mesh.segments[:, 1]]
    x = points[:, None, 0]
    y = points[:, None, 1]
    ya, yb = a[None, :, 1], b[None, :, 1]
    xa, xb = a[None, :, 0], b[None, :, 0]
    straddles = (ya <= y) != (yb <= y)
    with np.errstate(divide="ignore", invalid="ignore"):
        x_cross = xa + (y - ya) * (xb - xa) / (yb - ya)
    crossings = straddles & (x_cross > x)
    return (crossings.sum(axis=1) % 2).astype(bool)


def points_inside(mesh, points: np.ndarray) -> np.ndarray:
    """Boolean mask of which ``points`` lie strictly inside ``mesh``."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[1] != mesh.dim:
        raise ShapeMismatch(f"points must be (n, {mesh.dim})")
    out = np.zeros(len(pts), dtype=bool)
    if mesh.dim == 2:
        for lo in range(0, len(pts), 4096):
            out[lo : lo + 4096] = _curve_parity(mesh, pts[lo : lo + 4096])
        return out
    chunk = max(1, int(2e6) // max(1, len(mesh.elements)))
    for lo in range(0, len(pts), chunk):
        out[lo : lo + chunk] = _ray_parity(mesh, pts[lo : lo + chunk])
    return out


def _point_triangle_distance(points: np.ndarray, mesh: SurfaceMesh) -> np.ndarray:
    """Min distance from each point to the surface (exact per triangle)."""
    verts, tris = mesh.vertices, mesh.triangles
    p0 = verts[tris[:, 0]]
    e1 = verts[tris[:, 1]] - p0
    e2 = verts[tris[:, 2]] - p0
    n = mesh.normals
    best = np.full(len(points), np.inf)
    chunk = max(1, int(1e6) // max(1, len(tris)))
    segs = [
        (verts[tris[:, 0]], verts[tris[:, 1]]),
        (verts[tris[:, 1]], verts[tris[:, 2]]),
        (verts[tris[:, 2]], verts[tris[:, 0]]),
    ]
    g11 = np.einsum("mj,mj->m", e1, e1)
    g12 = np.einsum("mj,mj->m", e1, e2)
    g22 = np.einsum("mj,mj->m", e2, e2)
    det = g11 * g22 - g12 * g12
    for lo in range(0, len(points), chunk):
        pts = points[lo : lo + chunk]
        s = pts[:, None, :] - p0[None, :, :]
        b1 = np.einsum("pmj,mj->pm", s, e1)
        b2 = np.einsum("pmj,mj->pm", s, e2)
        u = (g22 * b1 - g12 * b2) / det
        v = (g11 * b2 - g12 * b1) / det
        interior = (u >= 0.0) & (v >= 0.0) & (u + v <= 1.0)
        d_plane = np.abs(np.einsum("pmj,mj->pm", s, n))
        d = np.where(interior, d_plane, np.inf)
        for a, b in segs:
            ab = b - a
            tt = np.einsum("pmj,mj->pm", pts[:, None, :] - a[None, :, :], ab)
            tt = np.clip(tt / np.einsum("mj,mj->m", ab, ab), 0.0, 1.0)
            closest = a[None, :, :] + tt[:, :, None] * ab[None, :, :]
            d_edge = np.linalg.norm(pts[:, None, :] - closest, axis=2)
            d = np.minimum(d, d_edge)
        best[lo : lo + chunk] = d.min(axis=1)
    return best


def _point_segment_distance(points: np.ndarray, mesh: CurveMesh) -> np.ndarray:
    a = mesh.vertices[mesh.segments[:, 0]]
    b = mesh.vertices[mesh.segments[:, 1]]
    ab = b - a
    tt = np.einsum("pmj,mj->pm", points[:, None, :] - a[None, :, :], ab)
    tt = np.clip(tt / np.einsum("mj,mj->m", ab, ab), 0.0, 1.0)
    closest = a[None, :, :] + tt[:, :, None] * ab[None, :, :]
    return np.linalg.norm(points[:, None, :] - closest, axis=2).min(axis=1)


def surface_distance(mesh, points: np.ndarray) -> np.ndarray:
    """Euclidean distance from each point to the surface of ``mesh``."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[1] != mesh.dim:
        raise ShapeMismatch(f"points must be (n, {mesh.dim})")
    if mesh.dim == 2:
        return _point_segment_distance(pts, mesh)
    return _point_triangle_distance(pts, mesh)


def point_location(config: DomainConfig, x) -> PointLocation:
    """Classify a point against a heart/torso configuration.

    A point within ``containment_tolerance`` of either surface reports
    :attr:`PointLocation.ON_BOUNDARY`; otherwise parity against the two
    surfaces decides between heart interior, conductor shell and outside.
    """
    pt = np.asarray(x, dtype=float).reshape(1, -1)
    tol = config.containment_tolerance
    if surface_distance(config.heart, pt)[0] <= tol:
        return PointLocation.ON_BOUNDARY
    if surface_distance(config.torso, pt)[0] <= tol:
        return PointLocation.ON_BOUNDARY
    if points_inside(config.heart, pt)[0]:
        return PointLocation.IN_HEART
    if points_inside(config.torso, pt)[0]:
        return PointLocation.IN_SHELL
    return PointLocation.OUTSIDE


# ---------------------------------------------------------------------------
# mesh file I/O


def _detect_format(path: Path, fmt: str | None) -> str:
    if fmt is not None:
        f = fmt.lower().replace("-", "_")
        if f in ("off", "json", "vtk", "vtk_legacy_ascii"):
            return "vtk" if f.startswith("vtk") else f
        raise ParseError(f"unknown mesh format {fmt!r}")
    suffix = path.suffix.lower()
    if suffix == ".off":
        return "off"
    if suffix == ".json":
        return "json"
    if suffix == ".vtk":
        return "vtk"
    raise ParseError(f"cannot infer mesh format from suffix {suffix!r}")


def load_mesh(path, fmt: str | None = None, surface_id: str | None = None) -> SurfaceMesh:
    """Read a closed triangle mesh from OFF, JSON or legacy-ASCII VTK.

    Orientation and normals are recomputed on load; a globally inverted file
    is repaired by flipping every triangle.

    Parameters
    ----------
    path : str or Path
        File to read.
    fmt : {"off", "json", "vtk"}, optional
        Override the suffix-based format detection.
    surface_id : str, optional
        Label for the loaded surface; defaults to the file stem (JSON files
        carry their own id, which wins unless this argument is given).
    """
    p = Path(path)
    kind = _detect_format(p, fmt)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ParseError(f"cannot read {p}: {exc}") from exc
    if kind == "off":
        verts, tris = _parse_off(text, p)
        sid = surface_id or p.stem
    elif kind == "vtk":
        verts, tris, _ = _parse_vtk(text, p)
        sid = surface_id or p.stem
    else:
        verts, tris, file_id = _parse_json(text, p)
        sid = surface_id or file_id or p.stem
    return SurfaceMesh(verts, tris, sid)


def _tokens(text: str):
    for line in text.splitlines():
        body = line.split("#", 1)[0]
        for tok in body.split():
            yield tok


def _parse_off(text: str, path: Path):
    toks = _tokens(text)
    try:
        magic = next(toks)
    except StopIteration:
        raise ParseError(f"{path}: empty OFF file") from None
    if magic.upper() != "OFF":
        raise ParseError(f"{path}: missing OFF header")
    try:
        nv, nf, _ne = (int(next(toks)) for _ in range(3))
        verts = np.array([[float(next(toks)) for _ in range(3)] for _ in range(nv)])
        tris = []
        for _ in range(nf):
            k = int(next(toks))
            if k != 3:
                raise ParseError(f"{path}: only triangular faces are supported")
            tris.append([int(next(toks)) for _ in range(3)])
    except (StopIteration, ValueError) as exc:
        raise ParseError(f"{path}: truncated or malformed OFF data") from exc
    return verts, np.array(tris, dtype=np.int64)


def _parse_vtk(text: str, path: Path):
    lines = text.splitlines()
    if len(lines) < 4 or not lines[0].startswith("# vtk DataFile"):
        raise ParseError(f"{path}: missing VTK DataFile header")
    if lines[2].strip().upper() != "ASCII":
        raise ParseError(f"{path}: only ASCII VTK is supported")
    if lines[3].split() != ["DATASET", "POLYDATA"]:
        raise ParseError(f"{path}: only DATASET POLYDATA is supported")
    toks = _tokens("\n".join(lines[4:]))
    verts = tris = None
    point_data: dict[str, np.ndarray] = {}
    try:
        while True:
            try:
                key = next(toks).upper()
            except StopIteration:
                break
            if key == "POINTS":
                n = int(next(toks))
                next(toks)  # dtype label
                flat = [float(next(toks)) for _ in range(3 * n)]
                verts = np.array(flat).reshape(n, 3)
            elif key == "POLYGONS":
                m = int(next(toks))
                size = int(next(toks))
                flat = [int(next(toks)) for _ in range(size)]
                tris, pos = [], 0
                for _ in range(m):
                    k = flat[pos]
                    if k != 3:
                        raise ParseError(f"{path}: non-triangular polygon")
                    tris.append(flat[pos + 1 : pos + 4])
                    pos += 4
                tris = np.array(tris, dtype=np.int64)
            elif key == "POINT_DATA":
                n = int(next(toks))
                while True:
                    try:
                        sub = next(toks).upper()
                    except StopIteration:
                        break
                    if sub != "SCALARS":
                        raise ParseError(f"{path}: unsupported POINT_DATA section {sub}")
                    name = next(toks)
                    next(toks)  # dtype
                    lookup = next(toks).upper()
                    if lookup != "LOOKUP_TABLE":
                        raise ParseError(f"{path}: SCALARS without LOOKUP_TABLE")
                    next(toks)  # table name
                    point_data[name] = np.array([float(next(toks)) for _ in range(n)])
            else:
                raise ParseError(f"{path}: unsupported VTK section {key!r}")
    except (StopIteration, ValueError) as exc:
        raise ParseError(f"{path}: truncated VTK data") from exc
    if verts is None or tris is None:
        raise ParseError(f"{path}: VTK file lacks POINTS or POLYGONS")
    return verts, tris, point_data


def _parse_json(text: str, path: Path):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON: {exc}") from exc
    if not isinstance(doc, dict) or "vertices" not in doc or "triangles" not in doc:
        raise ParseError(f"{path}: JSON mesh needs 'vertices' and 'triangles'")
    verts = np.asarray(doc["vertices"], dtype=float)
    tris = np.asarray(doc["triangles"], dtype=np.int64)
    return verts, tris, doc.get("surface_id")


def save_mesh(mesh: SurfaceMesh, path, fmt: str | None = None,
              point_data: dict[str, np.ndarray] | None = None) -> None:
    """Write a mesh as OFF, JSON or legacy-ASCII VTK POLYDATA.

    JSON writes round-trip coordinates exactly (shortest-repr floats).
    ``point_data`` (name -> per-vertex array) is honoured by the VTK writer
    and rejected for the other formats.
    """
    p = Path(path)
    kind = _detect_format(p, fmt)
    if point_data and kind != "vtk":
        raise ParseError("point_data is only supported by the VTK writer")
    if kind == "json":
        doc = {
            "vertices": [[float(c) for c in row] for row in mesh.vertices],
            "triangles": [[int(i) for i in row] for row in mesh.triangles],
            "surface_id": mesh.surface_id,
        }
        p.write_text(json.dumps(doc, indent=1) + "\n")
        return
    if kind == "off":
        lines = ["OFF", f"{mesh.n_vertices} {len(mesh.triangles)} 0"]
        lines += [" ".join(repr(float(c)) for c in row) for row in mesh.vertices]
        lines += ["3 " + " ".join(str(int(i)) for i in row) for row in mesh.triangles]
        p.write_text("\n".join(lines) + "\n")
        return
    lines = [
        "# vtk DataFile Version 3.0",
        mesh.surface_id,
        "ASCII",
        "DATASET POLYDATA",
        f"POINTS {mesh.n_vertices} double",
    ]
    lines += [" ".join(repr(float(c)) for c in row) for row in mesh.vertices]
    lines.append(f"POLYGONS {len(mesh.triangles)} {4 * len(mesh.triangles)}")
    lines += ["3 " + " ".join(str(int(i)) for i in row) for row in mesh.triangles]
    if point_data:
        lines.append(f"POINT_DATA {mesh.n_vertices}")
        for name, values in point_data.items():
            vals = np.asarray(values, dtype=float)
            if vals.shape != (mesh.n_vertices,):
                raise ShapeMismatch(f"point_data {name!r} has wrong length")
            lines.append(f"SCALARS {name} double 1")
            lines.append("LOOKUP_TABLE default")
            lines += [repr(float(v)) for v in vals]
    p.write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# nodal field I/O (CSV + JSON sidecar manifest)


def save_nodal_field(fld: NodalField, path) -> None:
    """Write ``node_index,value`` CSV plus a ``.json`` sidecar manifest."""
    p = Path(path)
    lines = ["node_index,value"]
    lines += [f"{i},{repr(float(v))}" for i, v in enumerate(fld.values)]
    p.write_text("\n".join(lines) + "\n")
    manifest = {
        "surface_id": fld.surface_id,
        "units": fld.units,
        "length": len(fld.values),
    }
    p.with_suffix(p.suffix + ".json").write_text(json.dumps(manifest, indent=1) + "\n")


def load_nodal_field(path) -> NodalField:
    """Read a nodal field written by :func:`save_nodal_field`."""
    p = Path(path)
    side = p.with_suffix(p.suffix + ".json")
    try:
        manifest = json.loads(side.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot read field manifest {side}: {exc}") from exc
    lines = p.read_text().splitlines()
    if not lines or lines[0].strip() != "node_index,value":
        raise ParseError(f"{p}: missing 'node_index,value' header")
    n = int(manifest["length"])
    values = np.full(n, np.nan)
    for line in lines[1:]:
        if not line.strip():
            continue
        try:
            idx_s, val_s = line.split(",")
            idx = int(idx_s)
            values[idx] = float(val_s)
        except (ValueError, IndexError) as exc:
            raise ParseError(f"{p}: malformed row {line!r}") from exc
    if np.isnan(values).any():
        raise ParseError(f"{p}: missing node indices")
    return NodalField(manifest["surface_id"], values, manifest.get("units", "mV"))


def require_off_surface(mesh, points: np.ndarray, tol: float) -> None:
    """Raise :class:`PointOnBoundary` if any point sits on the surface."""
    d = surface_distance(mesh, points)
    if np.any(d <= tol):
        worst = float(d.min())
        raise PointOnBoundary(
            f"evaluation point within {worst:.3e} cm of surface "
            f"{mesh.surface_id!r} (tolerance {tol:.1e})"
        )
