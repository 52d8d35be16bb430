"""Parabolic potentials, the heat Green identity, the evolution right side.

All of it concerns the constant-coefficient operator

    L = d_t - div(A grad) + a . grad + a0,     A = scale * M  (SPD),

held by a :class:`~cardiobem.kernels.HeatOperatorSpec`.  Its fundamental
solution is a drifting, decaying Gaussian,

    Psi(x, y, t, tau) = exp(-a0 s) K_A(x - y - a s, s),   s = t - tau,
    K_A(d, s) = exp(-d^T A^{-1} d / (4 s)) / ((4 pi s)^{n/2} sqrt(det A)),

identically zero for s <= 0 (causality).  For x off the closed surface S and
u solving L u = g on the enclosed domain with initial data u0,

    chi(x) u(x, t) = I(u0) + G(g) + V(nu . A grad u) + W(u),

the Poisson integral, the volume heat potential, and the two lateral layer
potentials; the double-layer kernel is -(d_{nu,A;y} Psi + (a . nu) Psi),
the dual pairing of the system {1, d_{nu,A}}.

Time quadrature is composite trapezoid over the density frames below t.  The
last partial step [t - D, t] integrates (t - tau)^{-1/2} exactly against a
linear smooth part; off the surface the smooth part vanishes at tau = t, and
the rule collapses to (2/3) D times the integrand at t - D.  The volume
potential's integrand instead tends to g(x, t) (the kernel is an approximate
identity), so its last step is a trapezoid against that limit.
"""

from __future__ import annotations

import logging
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .assembly import _panel_quadrature
from .direct import solve_neumann_normalized
from .errors import PointOnSurface, ShapeMismatch
from .grid import InteriorGrid
from .kernels import ConductivityModel, HeatOperatorSpec
from .mesh import NodalField, surface_distance

__all__ = [
    "TimeGrid",
    "SpaceTimeField",
    "heat_kernel",
    "heat_kernel_mass",
    "poisson_integral",
    "parabolic_layer_potentials",
    "volume_heat_potential",
    "parabolic_green_reconstruct",
    "assemble_evolution_rhs",
    "ionic_current_linear",
    "save_spacetime_field",
    "load_spacetime_field",
]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TimeGrid:
    """Uniform frame times t0 + k dt, k = 0 .. steps-1, ending at t_end.

    ``steps`` counts the frames including both endpoints, so dt =
    (t_end - t0) / (steps - 1); at the 1 kHz convention a 1 s record is
    steps=1001 over t_end=1000 ms.
    """

    t_end: float
    steps: int
    t0: float = 0.0

    def __post_init__(self) -> None:
        if not self.t_end > self.t0:
            raise ShapeMismatch("time grid needs t_end > t0")
        if self.steps < 2:
            raise ShapeMismatch("time grid needs at least 2 frames")

    @property
    def dt(self) -> float:
        return (self.t_end - self.t0) / (self.steps - 1)

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.steps)


@dataclass(frozen=True)
class SpaceTimeField:
    """Dense (nodes x frames) samples of a field over a TimeGrid.

    ``location`` labels the sampling: a surface_id for lateral traces, or
    "grid" for flat volume-cell samples.
    """

    location: str
    values: np.ndarray
    grid: TimeGrid
    units: str = "mV"

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 2:
            raise ShapeMismatch("space-time values must be (nodes, frames)")
        if vals.shape[1] != self.grid.steps:
            raise ShapeMismatch(
                f"{vals.shape[1]} columns vs {self.grid.steps} time frames"
            )
        if not np.all(np.isfinite(vals)):
            raise ShapeMismatch("space-time field contains non-finite values")
        vals = vals.copy()
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @property
    def n_nodes(self) -> int:
        return self.values.shape[0]

    def frame(self, k: int) -> np.ndarray:
        return self.values[:, k]

    @staticmethod
    def constant_in_time(location: str, vals: np.ndarray, grid: TimeGrid,
                         units: str = "mV") -> "SpaceTimeField":
        v = np.asarray(vals, dtype=float).reshape(-1, 1)
        return SpaceTimeField(location, np.repeat(v, grid.steps, axis=1),
                              grid, units)


# ---------------------------------------------------------------------------
# fundamental solution


def heat_kernel(spec: HeatOperatorSpec, diff: np.ndarray, s) -> np.ndarray:
    """Psi evaluated at x - y = diff, t - tau = s; exactly zero for s <= 0.

    ``diff`` is (..., dim); ``s`` broadcasts against the leading shape.
    """
    diff = np.asarray(diff, dtype=float)
    dim = diff.shape[-1]
    if dim != spec.dim:
        raise ShapeMismatch(f"diff has dimension {dim}, operator {spec.dim}")
    s = np.asarray(s, dtype=float)
    a = spec.A
    a_inv = np.linalg.inv(a)
    det = float(np.linalg.det(a))
    out_shape = np.broadcast_shapes(diff.shape[:-1], s.shape)
    pos = np.broadcast_to(s, out_shape) > 0.0
    s_safe = np.where(pos, np.broadcast_to(s, out_shape), 1.0)
    d = np.broadcast_to(diff, out_shape + (dim,)) \
        - spec.drift * s_safe[..., None]
    q = np.einsum("...i,ij,...j->...", d, a_inv, d)
    val = np.exp(-q / (4.0 * s_safe) - spec.reaction * s_safe)
    val = val / ((4.0 * np.pi * s_safe) ** (dim / 2.0) * np.sqrt(det))
    return np.where(pos, val, 0.0)


def _double_layer_kernel(spec: HeatOperatorSpec, diff: np.ndarray,
                         normals: np.ndarray, s: float) -> np.ndarray:
    """-(d_{nu,A;y} Psi + (a . nu) Psi) on rows of diff/normals, fixed s."""
    if s <= 0.0:
        return np.zeros(len(np.atleast_2d(diff)))
    psi = heat_kernel(spec, diff, s)
    d = np.atleast_2d(diff) - spec.drift * s
    nu_d = np.einsum("ij,ij->i", np.atleast_2d(normals), d)
    a_nu = np.atleast_2d(normals) @ spec.drift
    return -(nu_d / (2.0 * s) + a_nu) * psi


def heat_kernel_mass(spec: HeatOperatorSpec, t: float, half_width: float = None,
                     n: int = 72) -> float:
    """Midpoint-quadrature mass of Psi(., t); exp(-a0 t) analytically.

    The box is centred on the drift displacement with half width
    ``half_width`` (default 8 standard deviations of the widest principal
    axis).  Midpoint quadrature of a Gaussian converges spectrally, so the
    default resolves the mass far below 1e-6.
    """
    if t <= 0.0:
        return 0.0
    sigma = np.sqrt(2.0 * t * np.linalg.eigvalsh(spec.A).max())
    hw = 8.0 * sigma if half_width is None else float(half_width)
    axes = [np.linspace(-hw, hw, n, endpoint=False) + hw / n for _ in range(spec.dim)]
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, spec.dim)
    pts = pts + spec.drift * t
    vals = heat_kernel(spec, pts, t)
    return float(vals.sum() * (2.0 * hw / n) ** spec.dim)


# ---------------------------------------------------------------------------
# potentials


def poisson_integral(spec: HeatOperatorSpec, grid: InteriorGrid, h,
                     x, t: float) -> float:
    """I(h)(x, t), midpoint quadrature over the interior cells; needs t > 0."""
    if t <= 0.0:
        raise ShapeMismatch("the Poisson integral needs t > 0")
    hv = np.asarray(h, dtype=float).reshape(-1)
    if hv.size != grid.n_cells:
        raise ShapeMismatch(f"expected {grid.n_cells} cell samples, got {hv.size}")
    x = np.asarray(x, dtype=float).reshape(-1)
    centers = grid.interior_centers()
    vals = heat_kernel(spec, x[None, :] - centers, t)
    return float((vals @ hv[grid.inside]) * grid.cell_volume)


def _time_weights(times: np.ndarray, t: float):
    """Trapezoid weights over frames strictly below t, plus the product rule.

    Returns (index array, weight array).  The last step [t_last, t] carries
    (2/3)(t - t_last) at t_last: exact for integrands C sqrt(t - tau), the
    off-surface endpoint behaviour.
    """
    below = np.nonzero(times < t - 1e-14 * max(1.0, abs(t)))[0]
    if below.size == 0:
        return below, np.zeros(0)
    k = below[-1] + 1
    w = np.zeros(k)
    if k >= 2:
        dt = np.diff(times[:k])
        w[:-1] += 0.5 * dt
        w[1:] += 0.5 * dt
    w[-1] += (2.0 / 3.0) * (t - times[k - 1])
    return np.arange(k), w


def _check_off_surface(mesh, x: np.ndarray) -> None:
    span = mesh.vertices.max(axis=0) - mesh.vertices.min(axis=0)
    tol = 1e-9 * float(np.linalg.norm(span))
    if float(surface_distance(mesh, x[None, :])[0]) <= tol:
        raise PointOnSurface(
            "lateral potentials are defined off the surface; the target "
            "lies on it within tolerance"
        )


def parabolic_layer_potentials(spec: HeatOperatorSpec, mesh,
                               density: SpaceTimeField, kind: str,
                               x, t: float) -> float:
    """V (kind "single") or W (kind "double") at one off-surface point.

    The surface is a closed mesh; a density supported on part of it (zero
    elsewhere) realizes partial-boundary potentials, the potentials being
    linear in the density.  Frames at or after ``t`` never contribute.
    """
    if kind not in ("single", "double"):
        raise ShapeMismatch("kind must be 'single' or 'double'")
    dens = density.values
    if density.location != mesh.surface_id:
        raise ShapeMismatch(
            f"density on {density.location!r} vs mesh {mesh.surface_id!r}"
        )
    if dens.shape[0] != mesh.n_vertices:
        raise ShapeMismatch("density rows must match mesh vertices")
    times = density.grid.times
    if t > times[-1] + 1e-12 * max(1.0, abs(t)):
        raise ShapeMismatch("evaluation time beyond the density's time grid")
    x = np.asarray(x, dtype=float).reshape(-1)
    _check_off_surface(mesh, x)
    idx, w = _time_weights(times, t)
    if idx.size == 0:
        return 0.0
    pts, nrm, scatter = _panel_quadrature(mesh)
    weighted = scatter @ dens[:, idx]          # (n_quad, k) density x measure
    diff = x[None, :] - pts
    total = 0.0
    for j, (fi, wj) in enumerate(zip(idx, w)):
        s = t - times[fi]
        if kind == "single":
            kern = heat_kernel(spec, diff, s)
        else:
            kern = _double_layer_kernel(spec, diff, nrm, s)
        total += wj * float(kern @ weighted[:, j])
    return float(total)


def volume_heat_potential(spec: HeatOperatorSpec, grid: InteriorGrid,
                          source: SpaceTimeField, x, t: float) -> float:
    """G(g)(x, t) over the interior cells.

    The time integrand tends to g(x, t) as tau -> t (approximate identity),
    so the last step is a trapezoid against that limit, read off the nearest
    interior cell.
    """
    g = source.values
    if g.shape[0] != grid.n_cells:
        raise ShapeMismatch("volume source rows must match grid cells")
    times = source.grid.times
    x = np.asarray(x, dtype=float).reshape(-1)
    below = np.nonzero(times < t - 1e-14 * max(1.0, abs(t)))[0]
    if below.size == 0:
        return 0.0
    k = below[-1] + 1
    centers = grid.interior_centers()
    diff = x[None, :] - centers
    series = np.empty(k + 1)
    for j in range(k):
        vals = heat_kernel(spec, diff, t - times[j])
        series[j] = (vals @ g[grid.inside, j]) * grid.cell_volume
    # limit value: g at the cell nearest x, linearly interpolated in time
    near = int(np.argmin(np.einsum("ij,ij->i", diff, diff)))
    tt = min(t, times[-1])
    j1 = int(np.searchsorted(times, tt, side="right") - 1)
    if j1 >= len(times) - 1:
        gx = g[grid.inside][near, -1]
    else:
        th = (tt - times[j1]) / (times[j1 + 1] - times[j1])
        gx = (1 - th) * g[grid.inside][near, j1] + th * g[grid.inside][near, j1 + 1]
    series[k] = gx
    aug_times = np.append(times[:k], t)
    return float(np.trapezoid(series, aug_times))


def parabolic_green_reconstruct(spec: HeatOperatorSpec, mesh,
                                grid: InteriorGrid,
                                u_trace: SpaceTimeField,
                                flux_trace: SpaceTimeField,
                                u_initial, Lu, x, t: float) -> float:
    """Right side of the heat Green identity at (x, t).

    Equals u(x, t) for x inside the surface and 0 outside (up to quadrature).
    ``flux_trace`` is the M-conormal trace nu . M grad u; the identity pairs
    the kernel with the A-conormal, A = scale M, so the diffusion scale is
    applied here.  ``u_initial`` are flat cell samples at t = 0 (None for
    zero initial data); ``Lu`` a grid-sampled SpaceTimeField source (None
    for a caloric u).  Points on the surface are rejected.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    _check_off_surface(mesh, x)  # raises PointOnSurface == PointOnBoundary
    total = 0.0
    if u_initial is not None:
        total += poisson_integral(spec, grid, u_initial, x, t)
    if Lu is not None:
        total += volume_heat_potential(spec, grid, Lu, x, t)
    scaled_flux = SpaceTimeField(flux_trace.location,
                                 spec.scale * flux_trace.values,
                                 flux_trace.grid, flux_trace.units)
    total += parabolic_layer_potentials(spec, mesh, scaled_flux, "single", x, t)
    total += parabolic_layer_potentials(spec, mesh, u_trace, "double", x, t)
    return float(total)


# ---------------------------------------------------------------------------
# evolutionary right-hand side


def _surface_gradient(mesh, vals: np.ndarray) -> np.ndarray:
    """Area-averaged per-face gradient of the P1 interpolant, (n_verts, 3)."""
    tris = mesh.triangles
    v = mesh.vertices
    e1 = v[tris[:, 1]] - v[tris[:, 0]]
    e2 = v[tris[:, 2]] - v[tris[:, 0]]
    n = np.cross(e1, e2)                       # |n| = 2 area
    nn = np.einsum("ij,ij->i", n, n)
    d1 = vals[tris[:, 1]] - vals[tris[:, 0]]
    d2 = vals[tris[:, 2]] - vals[tris[:, 0]]
    # P1 gradient: (d1 (e2 x n) + d2 (n x e1)) / |n|^2
    g = (d1[:, None] * np.cross(e2, n) + d2[:, None] * np.cross(n, e1)) / nn[:, None]
    areas = mesh.areas
    out = np.zeros_like(v)
    wsum = np.zeros(len(v))
    for k in range(3):
        np.add.at(out, tris[:, k], g * areas[:, None])
        np.add.at(wsum, tris[:, k], areas)
    return out / wsum[:, None]


def _vertex_normals(mesh) -> np.ndarray:
    """Area-weighted average of the face normals, unit length, (n_verts, 3)."""
    out = np.zeros_like(mesh.vertices)
    w = mesh.normals * mesh.areas[:, None]
    for k in range(3):
        np.add.at(out, mesh.triangles[:, k], w)
    return out / np.linalg.norm(out, axis=1)[:, None]


def _full_gradient(mesh, M: np.ndarray, trace: np.ndarray,
                   flux: np.ndarray) -> np.ndarray:
    """Boundary gradient from tangential P1 part plus conormal completion.

    grad u = grad_T u + g nu with g from nu . M (grad_T u + g nu) = flux,
    nu the vertex normal.
    """
    gt = _surface_gradient(mesh, trace)
    nu = _vertex_normals(mesh)
    mnu = nu @ M.T
    g = (flux - np.einsum("ij,ij->i", mnu, gt)) / np.einsum("ij,ij->i", mnu, nu)
    return gt + g[:, None] * nu


def assemble_evolution_rhs(model: ConductivityModel, heart,
                           h: SpaceTimeField,
                           heart_flux_of_ub: SpaceTimeField,
                           c_of_t, spec: HeatOperatorSpec = None
                           ) -> SpaceTimeField:
    """F = h + lam (d_t + a . grad + a0)(N_i(0, psi(t)) + c(t)) on the heart.

    ``spec`` holds the operator's drift a and reaction a0 (both already
    divided by C_m when they come from an ionic law); None means the
    drift-free, reaction-free operator of the model.  The elliptic part of
    the correction drops identically (the Neumann solution is harmonic for
    Delta_e), which is why only first-order terms appear.  Frames with
    identically zero flux skip the solve and contribute exact zeros, so zero
    data returns F = h with a bitwise-zero correction.
    """
    if model.lam is None:
        raise ShapeMismatch("the evolution right side needs a proportional model")
    if spec is None:
        spec = HeatOperatorSpec.from_model(model)
    hv = h.values
    psi = heart_flux_of_ub.values
    if psi.shape[0] != heart.n_vertices or hv.shape[0] != heart.n_vertices:
        raise ShapeMismatch("h and flux must be sampled on the heart vertices")
    if h.grid != heart_flux_of_ub.grid:
        raise ShapeMismatch("h and flux must share one time grid")
    grid = h.grid
    c = np.asarray(c_of_t, dtype=float).reshape(-1)
    if c.size == 1:
        c = np.full(grid.steps, c[0])
    if c.size != grid.steps:
        raise ShapeMismatch(f"c(t) needs {grid.steps} samples, got {c.size}")

    lam = float(model.lam)
    n, k = hv.shape
    corr = np.zeros((n, k))
    drift_term = np.zeros((n, k))
    has_drift = bool(np.any(spec.drift))
    for j in range(k):
        if not np.any(psi[:, j]) and c[j] == 0.0:
            continue
        if np.any(psi[:, j]):
            fld = NodalField(heart.surface_id, psi[:, j], units="mV*mS/cm^2")
            _, rep = solve_neumann_normalized(model.M_i, heart, fld,
                                              project=True)
            w = rep.solution_trace.values
        else:
            w = np.zeros(n)
        corr[:, j] = w + c[j]
        if has_drift and np.any(w):
            grad = _full_gradient(heart, np.asarray(model.M_i), w, psi[:, j])
            drift_term[:, j] = grad @ spec.drift

    dt_corr = np.zeros((n, k))
    if corr.any():
        d = grid.dt
        dt_corr[:, 1:-1] = (corr[:, 2:] - corr[:, :-2]) / (2.0 * d)
        dt_corr[:, 0] = (corr[:, 1] - corr[:, 0]) / d
        dt_corr[:, -1] = (corr[:, -1] - corr[:, -2]) / d

    correction = lam * (dt_corr + drift_term + spec.reaction * corr)
    return SpaceTimeField(h.location, hv + correction, grid, h.units)


def ionic_current_linear(v: SpaceTimeField, a, a0: float, b,
                         grad_v: np.ndarray = None) -> SpaceTimeField:
    """I_ion = sum_j a_j d_j v + a0 v + b, frame by frame.

    ``grad_v`` is (nodes, dim, frames) and only required when a != 0.  ``b``
    broadcasts: scalar, per-node, or full (nodes, frames).
    """
    a = np.asarray(a, dtype=float).reshape(-1)
    vals = a0 * v.values
    if np.any(a):
        if grad_v is None:
            from .errors import MissingInteriorData
            raise MissingInteriorData(
                "a nonzero advection coefficient needs grad_v samples"
            )
        g = np.asarray(grad_v, dtype=float)
        if g.shape != (v.n_nodes, a.size, v.grid.steps):
            raise ShapeMismatch(
                f"grad_v must be (nodes, {a.size}, frames), got {g.shape}"
            )
        vals = vals + np.einsum("ndk,d->nk", g, a)
    vals = vals + np.asarray(b, dtype=float)
    return SpaceTimeField(v.location, vals, v.grid, units="uA/cm^2")


# ---------------------------------------------------------------------------
# storage


def save_spacetime_field(fld: SpaceTimeField, path) -> None:
    """CSV matrix (rows = nodes, cols = frames) plus a JSON sidecar manifest."""
    p = Path(path)
    rows = [",".join(repr(float(x)) for x in row) for row in fld.values]
    p.write_text("\n".join(rows) + "\n")
    manifest = {
        "location": fld.location,
        "units": fld.units,
        "time_grid": {"t0": fld.grid.t0, "t_end": fld.grid.t_end,
                      "steps": fld.grid.steps},
        "shape": list(fld.values.shape),
    }
    p.with_suffix(p.suffix + ".json").write_text(
        json.dumps(manifest, indent=1, sort_keys=True) + "\n"
    )


def load_spacetime_field(path) -> SpaceTimeField:
    p = Path(path)
    manifest = json.loads(p.with_suffix(p.suffix + ".json").read_text())
    vals = np.loadtxt(p, delimiter=",", ndmin=2)
    tg = manifest["time_grid"]
    grid = TimeGrid(t_end=tg["t_end"], steps=int(tg["steps"]), t0=tg["t0"])
    return SpaceTimeField(manifest["location"], vals, grid,
                          units=manifest.get("units", "mV"))
