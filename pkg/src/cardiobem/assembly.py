"""Dense collocation assembly of layer and volume potentials.

Single layer, double layer and Newtonian (volume) potential of the operator
``Delta_M = -div(M grad)``:

    SL(rho)(x)  = integral_S phi_M(x, y) rho(y) dsigma(y)
    DL(rho)(x)  = integral_S d_{nu,M;y} phi_M(x, y) rho(y) dsigma(y)
    T(g)(x)     = integral_D phi_M(x, y) g(y) dy

with piecewise-linear nodal densities and collocation at mesh vertices
(rows = targets, cols = source vertices).  Regular panels use a degree-5
7-point Gauss rule (3D) or 8-point Gauss-Legendre (2D); panels close to the
target are re-integrated by splitting at the point nearest the target and
applying a Duffy-type polar transform per subtriangle, which also provides
the weakly-singular self terms of the single layer.  The double-layer
diagonal on its own surface is fixed by the interior solid-angle row-sum
identity ``D 1 = -1/2``; combined with the ``1/2 I + D`` combination this
reproduces the exact interior-limit operator at polyhedral vertices.

The interior Green representation evaluated here is

    chi_D(x) u(x) = SL(d_{nu,M} u)(x) - DL(u)(x) + T(Delta_M u)(x).

2D note: assembly uses the shifted logarithm -ln(r_M / r0)/(2 pi sqrt(det M))
with a fixed r0 = 4.  A fundamental solution in the plane is defined up to
an additive constant, and every compatible boundary problem (total flux
zero) is invariant under the shift; the nonzero r0 keeps the single-layer
operator of unit-capacity curves (for example the unit circle) away from its
constant-density null vector.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import sparse

from .errors import ParseError, QuadratureFailure, ShapeMismatch
from .grid import InteriorGrid
from .kernels import as_tensor
from .mesh import CurveMesh, NodalField, SurfaceMesh, require_off_surface

__all__ = [
    "LayerOperators",
    "assemble_layer",
    "volume_potential",
    "VolumePotentialResult",
    "green_representation",
    "save_operator",
    "load_operator",
]

LOG_KERNEL_SCALE = 4.0  # r0 in the shifted 2D logarithm, see module docstring

# degree-5 symmetric triangle rule (7 points, weights sum to 1)
_SQ15 = np.sqrt(15.0)
_TRI_RULE_W = np.array(
    [9.0 / 40.0]
    + [(155.0 + _SQ15) / 1200.0] * 3
    + [(155.0 - _SQ15) / 1200.0] * 3
)
_A1 = (6.0 + _SQ15) / 21.0
_A2 = (6.0 - _SQ15) / 21.0
_TRI_RULE_B = np.array(
    [[1 / 3, 1 / 3, 1 / 3]]
    + [np.roll([1 - 2 * _A1, _A1, _A1], k) for k in range(3)]
    + [np.roll([1 - 2 * _A2, _A2, _A2], k) for k in range(3)]
)

_GL_N = 8
_gl_x, _gl_w = leggauss(_GL_N)
_GL01_X = 0.5 * (_gl_x + 1.0)
_GL01_W = 0.5 * _gl_w
# tensor rule on the unit square for the Duffy transform
_DUF_U = np.repeat(_GL01_X, _GL_N)
_DUF_V = np.tile(_GL01_X, _GL_N)
_DUF_W = np.repeat(_GL01_W, _GL_N) * np.tile(_GL01_W, _GL_N)

_NEAR_FACTOR = 1.6  # panels within this many diameters get the split rule

_memo_lock = threading.Lock()
_operator_memo: dict = {}


@dataclass(frozen=True)
class LayerOperators:
    """Assembled dense layer operator.

    ``matrix`` maps nodal densities on ``source_surface`` to potential values
    at the targets (rows = targets, cols = source vertices); ``target`` is
    either a surface id (collocation at its vertices) or the explicit point
    array.
    """

    kind: str
    source_surface: str
    target: object
    matrix: np.ndarray
    tensor: np.ndarray

    def __post_init__(self) -> None:
        if self.kind not in ("single", "double"):
            raise ShapeMismatch("kind must be 'single' or 'double'")
        if not np.all(np.isfinite(self.matrix)):
            raise QuadratureFailure(f"{self.kind}-layer matrix has non-finite entries")

    def apply(self, density: np.ndarray) -> np.ndarray:
        d = np.asarray(density, dtype=float)
        if d.shape[0] != self.matrix.shape[1]:
            raise ShapeMismatch(
                f"density length {d.shape[0]} != {self.matrix.shape[1]} source nodes"
            )
        return self.matrix @ d


class _KernelSet:
    """Fast in-assembly kernels with precomputed inverse and determinant."""

    def __init__(self, M, dim: int):
        self.M = as_tensor(M, dim)
        self.dim = dim
        self.Minv = np.linalg.inv(self.M)
        self.sqrt_det = float(np.sqrt(np.linalg.det(self.M)))

    def r2(self, diff: np.ndarray) -> np.ndarray:
        return np.einsum("...i,ij,...j->...", diff, self.Minv, diff)

    def single(self, diff: np.ndarray) -> np.ndarray:
        r2 = self.r2(diff)
        if self.dim == 3:
            return 1.0 / (4.0 * np.pi * self.sqrt_det * np.sqrt(r2))
        return -0.5 * np.log(r2 / LOG_KERNEL_SCALE ** 2) / (2.0 * np.pi * self.sqrt_det)

    def double(self, diff: np.ndarray, normal: np.ndarray) -> np.ndarray:
        r2 = self.r2(diff)
        proj = np.einsum("...i,...i->...", normal, diff)
        if self.dim == 3:
            return proj / (4.0 * np.pi * self.sqrt_det * r2 ** 1.5)
        return proj / (2.0 * np.pi * self.sqrt_det * r2)


# ---------------------------------------------------------------------------
# panel quadrature caches


def _panel_quadrature(mesh) -> tuple:
    """Quadrature points, per-point normals and the basis scatter matrix.

    Returns ``(points, normals, scatter)`` where ``scatter`` is sparse of
    shape (n_quad_points, n_vertices) carrying basis value x quad weight x
    element measure, so a dense kernel block ``K[targets, quad_points]``
    turns into the collocation matrix as ``K @ scatter``.
    """
    verts = mesh.vertices
    els = mesh.elements
    if mesh.dim == 3:
        corners = verts[els]  # (m, 3, 3)
        pts = np.einsum("qk,mkj->mqj", _TRI_RULE_B, corners).reshape(-1, 3)
        w = (_TRI_RULE_W[None, :] * mesh.areas[:, None])  # (m, q)
        basis = _TRI_RULE_B  # (q, 3)
        nq = len(_TRI_RULE_W)
    else:
        a = verts[els[:, 0]]
        b = verts[els[:, 1]]
        xi = _GL01_X
        pts = (a[:, None, :] * (1 - xi)[None, :, None]
               + b[:, None, :] * xi[None, :, None]).reshape(-1, 2)
        w = _GL01_W[None, :] * mesh.areas[:, None]
        basis = np.column_stack([1 - xi, xi])
        nq = _GL_N
    m = len(els)
    k = els.shape[1]
    rows = np.repeat(np.arange(m * nq), k)
    cols = np.repeat(els[:, None, :], nq, axis=1).reshape(-1)
    data = (w[:, :, None] * basis[None, :, :]).reshape(-1)
    scatter = sparse.csr_matrix((data, (rows, cols)), shape=(m * nq, mesh.n_vertices))
    normals = np.repeat(mesh.normals, nq, axis=0)
    return pts, normals, scatter


def _split_at(point: np.ndarray, corners: np.ndarray) -> list:
    """Split a triangle at an interior/edge point into non-degenerate parts."""
    area2 = np.linalg.norm(np.cross(corners[1] - corners[0], corners[2] - corners[0]))
    parts = []
    for a in range(3):
        b = (a + 1) % 3
        pa, pb = corners[a], corners[b]
        sub = np.linalg.norm(np.cross(pa - point, pb - point))
        if sub > 1e-12 * area2:
            parts.append((point, pa, pb))
    return parts


def _closest_point_in_triangle(x: np.ndarray, corners: np.ndarray) -> np.ndarray:
    e1 = corners[1] - corners[0]
    e2 = corners[2] - corners[0]
    s = x - corners[0]
    g11, g12, g22 = e1 @ e1, e1 @ e2, e2 @ e2
    det = g11 * g22 - g12 * g12
    u = (g22 * (s @ e1) - g12 * (s @ e2)) / det
    v = (g11 * (s @ e2) - g12 * (s @ e1)) / det
    if u >= 0 and v >= 0 and u + v <= 1:
        return corners[0] + u * e1 + v * e2
    best, bd = None, np.inf
    for a in range(3):
        b = (a + 1) % 3
        pa, pb = corners[a], corners[b]
        ab = pb - pa
        t = np.clip((x - pa) @ ab / (ab @ ab), 0.0, 1.0)
        c = pa + t * ab
        d = np.linalg.norm(x - c)
        if d < bd:
            best, bd = c, d
    return best


def _integrate_panel_near_3d(ker: _KernelSet, kind: str, x: np.ndarray,
                             corners: np.ndarray, normal: np.ndarray) -> np.ndarray:
    """Accurate integral of kernel x linear basis over one close panel.

    Splits the panel at the point nearest the target and applies the Duffy
    transform on each subtriangle, concentrating quadrature where the kernel
    peaks.  Returns the 3 basis-weighted integrals (original corner order).
    """
    p = _closest_point_in_triangle(x, corners)
    e1f = corners[1] - corners[0]
    e2f = corners[2] - corners[0]
    g11, g12, g22 = e1f @ e1f, e1f @ e2f, e2f @ e2f
    gdet = g11 * g22 - g12 * g12
    out = np.zeros(3)
    for p0, p1, p2 in _split_at(p, corners):
        e1 = p1 - p0
        e2 = p2 - p0
        # y(u, v) = p0 + u((1-v) e1 + v e2), |J| = 2 area u
        duf_dir = (1 - _DUF_V)[:, None] * e1[None, :] + _DUF_V[:, None] * e2[None, :]
        y = p0[None, :] + _DUF_U[:, None] * duf_dir
        area2 = np.linalg.norm(np.cross(e1, e2))
        jac = area2 * _DUF_U
        diff = x[None, :] - y
        if kind == "single":
            kv = ker.single(diff)
        else:
            kv = ker.double(diff, normal[None, :])
        # barycentric of y in the original triangle
        s = y - corners[0]
        b1 = s @ e1f
        b2 = s @ e2f
        u = (g22 * b1 - g12 * b2) / gdet
        v = (g11 * b2 - g12 * b1) / gdet
        lam = np.column_stack([1.0 - u - v, u, v])
        out += (kv * jac * _DUF_W) @ lam
    return out


def _integrate_panel_near_2d(ker: _KernelSet, kind: str, x: np.ndarray,
                             a: np.ndarray, b: np.ndarray, normal: np.ndarray,
                             singular: bool) -> np.ndarray:
    """Close/singular segment integrals against the two linear basis funcs."""
    if kind == "double" and singular:
        # straight panel through the collocation node: n.(x-y) = 0 exactly
        return np.zeros(2)
    if singular:
        # product integration of the log against a linear density, exact:
        # the collocation node is an endpoint; r_M(s) = s * gamma.
        length = np.linalg.norm(b - a)
        at_a = np.allclose(x, a)
        far = b if at_a else a
        tangent = (far - x) / length
        gamma = np.sqrt(ker.r2(tangent))
        c = 1.0 / (2.0 * np.pi * ker.sqrt_det)
        i0 = length * (np.log(length) - 1.0)                    # int ln s ds
        i1 = length ** 2 * (2.0 * np.log(length) - 1.0) / 4.0   # int s ln s ds
        shift = np.log(gamma / LOG_KERNEL_SCALE)
        near_val = -c * (i0 - i1 / length + shift * length / 2.0)
        far_val = -c * (i1 / length + shift * length / 2.0)
        return np.array([near_val, far_val] if at_a else [far_val, near_val])
    # near but off the panel: split at the closest point, refined Gauss
    ab = b - a
    t = np.clip((x - a) @ ab / (ab @ ab), 0.0, 1.0)
    mid = a + t * ab
    out = np.zeros(2)
    for (p, q) in ((a, mid), (mid, b)):
        seg = q - p
        ln = np.linalg.norm(seg)
        if ln < 1e-15:
            continue
        y = p[None, :] + _GL01_X[:, None] * seg[None, :]
        diff = x[None, :] - y
        kv = ker.single(diff) if kind == "single" else ker.double(diff, normal[None, :])
        s_full = ((y - a) @ ab) / (ab @ ab)
        lam = np.column_stack([1.0 - s_full, s_full])
        out += ((kv * _GL01_W * ln) @ lam)
    return out


def _plain_panel_contrib(ker: _KernelSet, kind: str, x: np.ndarray, mesh,
                         el: int) -> np.ndarray:
    """Contribution of one panel under the regular rule (for subtraction)."""
    verts = mesh.vertices
    idx = mesh.elements[el]
    if mesh.dim == 3:
        corners = verts[idx]
        y = _TRI_RULE_B @ corners
        w = _TRI_RULE_W * mesh.areas[el]
        lam = _TRI_RULE_B
    else:
        a, b = verts[idx[0]], verts[idx[1]]
        y = a[None, :] * (1 - _GL01_X)[:, None] + b[None, :] * _GL01_X[:, None]
        w = _GL01_W * mesh.areas[el]
        lam = np.column_stack([1 - _GL01_X, _GL01_X])
    diff = x[None, :] - y
    if kind == "single":
        kv = ker.single(diff)
    else:
        kv = ker.double(diff, mesh.normals[el][None, :])
    return (kv * w) @ lam


def _assemble_dense(kind: str, ker: _KernelSet, source, targets: np.ndarray,
                    same_surface: bool) -> np.ndarray:
    pts, nrm, scatter = _panel_quadrature(source)
    centroids = source.vertices[source.elements].mean(axis=1)
    diam = source.element_diameters()
    scatter_t = scatter.T.tocsr()
    n_t = len(targets)
    matrix = np.empty((n_t, source.n_vertices))
    chunk = max(1, int(4e6) // max(1, len(pts)))
    for lo in range(0, n_t, chunk):
        x = targets[lo : lo + chunk]
        diff = x[:, None, :] - pts[None, :, :]
        with np.errstate(divide="ignore", invalid="ignore"):
            if kind == "single":
                k = ker.single(diff)
            else:
                k = ker.double(diff, nrm[None, :, :])
        k = np.nan_to_num(k, nan=0.0, posinf=0.0, neginf=0.0)
        matrix[lo : lo + chunk] = (scatter_t @ k.T).T
        # re-integrate panels close to each target
        d_c = np.linalg.norm(x[:, None, :] - centroids[None, :, :], axis=2)
        near = d_c < _NEAR_FACTOR * diam[None, :]
        for i_loc, j in zip(*np.nonzero(near)):
            row = lo + i_loc
            xi = x[i_loc]
            idx = source.elements[j]
            plain = _plain_panel_contrib(ker, kind, xi, source, j)
            if source.dim == 3:
                fixed = _integrate_panel_near_3d(
                    ker, kind, xi, source.vertices[idx], source.normals[j]
                )
            else:
                singular = same_surface and bool(np.any(idx == _vertex_index(source, xi, row)))
                fixed = _integrate_panel_near_2d(
                    ker, kind, xi, source.vertices[idx[0]], source.vertices[idx[1]],
                    source.normals[j], singular,
                )
            matrix[row, idx] += fixed - plain
    return matrix


def _vertex_index(mesh, x: np.ndarray, row: int) -> int:
    # during same-surface assembly the target IS vertex `row`
    return row


def assemble_layer(kind: str, M, source, target=None, *,
                   diagonal: str = "row_sum", cache: bool = True) -> LayerOperators:
    """Assemble a single- or double-layer collocation matrix.

    Parameters
    ----------
    kind : {"single", "double"}
    M : scalar or SPD matrix
        Conductivity tensor of the operator Delta_M.
    source : SurfaceMesh or CurveMesh
        Surface carrying the density.
    target : mesh, (n, dim) array, or None
        Collocation targets; ``None`` (or the source itself) collocates at
        the source vertices through the singular integration path.
    diagonal : {"row_sum", "raw"}
        Same-surface double layer only: "row_sum" enforces D 1 = -1/2 per
        row (single closed surface); "raw" leaves the principal-value
        diagonal for callers assembling multi-surface block systems, which
        must apply the row identity across the full block row themselves.

    Notes
    -----
    Matrices are memoized per (kind, source, target-surface, M) behind a
    lock; pass ``cache=False`` to bypass.
    """
    if kind not in ("single", "double"):
        raise ShapeMismatch(f"unknown layer kind {kind!r}")
    if diagonal not in ("row_sum", "raw"):
        raise ShapeMismatch(f"unknown diagonal policy {diagonal!r}")
    ker = _KernelSet(M, source.dim)
    if target is None:
        target = source
    is_mesh_target = isinstance(target, (SurfaceMesh, CurveMesh))
    same = is_mesh_target and target.cache_token == source.cache_token

    key = None
    if cache and is_mesh_target:
        key = (kind, source.cache_token, target.cache_token,
               ker.M.tobytes(), diagonal)
        with _memo_lock:
            hit = _operator_memo.get(key)
        if hit is not None:
            return hit

    targets = target.vertices if is_mesh_target else np.atleast_2d(np.asarray(target, float))
    if targets.shape[1] != source.dim:
        raise ShapeMismatch(f"targets must be (n, {source.dim})")

    matrix = _assemble_dense(kind, ker, source, targets, same)
    if kind == "double" and same and diagonal == "row_sum":
        np.fill_diagonal(matrix, 0.0)
        matrix[np.arange(len(matrix)), np.arange(len(matrix))] = (
            -0.5 - matrix.sum(axis=1)
        )
    op = LayerOperators(
        kind=kind,
        source_surface=source.surface_id,
        target=target.surface_id if is_mesh_target else targets,
        matrix=matrix,
        tensor=ker.M,
    )
    if key is not None:
        with _memo_lock:
            _operator_memo[key] = op
    return op


# ---------------------------------------------------------------------------
# volume potential


@dataclass(frozen=True)
class VolumePotentialResult:
    """Values of T(g) at the targets plus the skipped-cell error bound."""

    values: np.ndarray
    skipped_cells: int
    skipped_bound: float


def volume_potential(M, grid: InteriorGrid, g: np.ndarray,
                     targets: np.ndarray) -> VolumePotentialResult:
    """Midpoint-rule Newtonian potential of a gridded source.

    Cells whose center lies within one cell diameter of a target are skipped
    for that target; their contribution is bounded by the integral of the
    kernel over the equivalent-volume ball centered at the target and the
    total bound is reported in the result.
    """
    ker = _KernelSet(M, 3)
    g_flat = np.asarray(g, dtype=float).reshape(-1)
    if g_flat.size != grid.n_cells:
        raise ShapeMismatch("g must be sampled on the full grid box")
    centers = grid.interior_centers()
    vals_in = g_flat[grid.inside]
    x = np.atleast_2d(np.asarray(targets, dtype=float))
    out = np.zeros(len(x))
    h = grid.h
    skip_r2 = 3.0 * h * h  # one cell diameter, squared
    r_eq = (3.0 * h ** 3 / (4.0 * np.pi)) ** (1.0 / 3.0)
    lam_max = float(np.linalg.eigvalsh(ker.M).max())
    bound_per_cell = np.sqrt(lam_max) * r_eq ** 2 / (2.0 * ker.sqrt_det)
    n_skipped = 0
    bound = 0.0
    chunk = max(1, int(4e6) // max(1, len(centers)))
    for lo in range(0, len(x), chunk):
        diff = x[lo : lo + chunk, None, :] - centers[None, :, :]
        r2 = ker.r2(diff)
        euclid2 = np.einsum("pcj,pcj->pc", diff, diff)
        keep = euclid2 >= skip_r2
        with np.errstate(divide="ignore"):
            phi = 1.0 / (4.0 * np.pi * ker.sqrt_det * np.sqrt(r2))
        phi = np.where(keep, phi, 0.0)
        out[lo : lo + chunk] = phi @ vals_in * grid.cell_volume
        skip_cols = np.nonzero(~keep)[1]
        n_skipped += skip_cols.size
        bound += float(np.abs(vals_in)[skip_cols].sum() * bound_per_cell)
    if not np.all(np.isfinite(out)):
        raise QuadratureFailure("volume potential produced non-finite values")
    return VolumePotentialResult(values=out, skipped_cells=n_skipped,
                                 skipped_bound=bound)


def green_representation(M, mesh, dirichlet: NodalField, conormal: NodalField,
                         x, g_volume=None, *, boundary_tolerance: float | None = None):
    """Evaluate chi_D u(x) = SL(conormal)(x) - DL(dirichlet)(x) + T(g)(x).

    ``g_volume`` is an optional ``(InteriorGrid, flat values)`` pair for the
    volume term.  For x inside and u solving Delta_M u = g with the given
    traces this returns u(x); outside the closed surface it returns ~0.

    Raises
    ------
    PointOnBoundary
        If any evaluation point is within ``boundary_tolerance`` (default
        1e-9 x bounding-box diagonal) of the surface.
    """
    pts = np.atleast_2d(np.asarray(x, dtype=float))
    scalar_in = np.asarray(x).ndim == 1
    if boundary_tolerance is None:
        box = mesh.vertices.max(axis=0) - mesh.vertices.min(axis=0)
        boundary_tolerance = 1e-9 * float(np.linalg.norm(box))
    require_off_surface(mesh, pts, boundary_tolerance)
    u0 = dirichlet.check_on(mesh)
    u1 = conormal.check_on(mesh)
    sl = assemble_layer("single", M, mesh, pts, cache=False)
    dl = assemble_layer("double", M, mesh, pts, cache=False)
    vals = sl.apply(u1) - dl.apply(u0)
    if g_volume is not None:
        grid, g = g_volume
        vals = vals + volume_potential(M, grid, g, pts).values
    return float(vals[0]) if scalar_in else vals


# ---------------------------------------------------------------------------
# binary operator dump


def save_operator(op: LayerOperators, base_path) -> None:
    """Dump a layer operator as row-major float64 ``.bin`` + ``.json`` header."""
    base = Path(base_path)
    mat = np.ascontiguousarray(op.matrix, dtype=np.float64)
    mat.tofile(base.with_suffix(".bin"))
    header = {
        "dims": list(mat.shape),
        "kind": op.kind,
        "tensor": [[float(v) for v in row] for row in op.tensor],
        "source_surface": op.source_surface,
        "target": op.target if isinstance(op.target, str) else "points",
        "dtype": "float64",
        "order": "C",
    }
    base.with_suffix(".json").write_text(json.dumps(header, indent=1) + "\n")


def load_operator(base_path) -> LayerOperators:
    """Reload a dumped operator bit-exactly."""
    base = Path(base_path)
    try:
        header = json.loads(base.with_suffix(".json").read_text())
        raw = np.fromfile(base.with_suffix(".bin"), dtype=np.float64)
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"cannot read operator dump {base}: {exc}") from exc
    dims = tuple(header["dims"])
    if raw.size != dims[0] * dims[1]:
        raise ParseError(f"operator dump {base}: size mismatch")
    return LayerOperators(
        kind=header["kind"],
        source_surface=header["source_surface"],
        target=header["target"],
        matrix=raw.reshape(dims),
        tensor=np.asarray(header["tensor"], dtype=float),
    )
