"""Steady transmembrane-potential reconstruction and its null space.

The pipeline recovers the intracellular potential from the extracellular
trace and the bath flux on the heart surface:

    u_i = -N_i(Delta_e u_e, 0) + c                      (general tensors)
    u_i = -lambda (u_e - <u_e>) + lambda N_e(0, psi) + c  (M_e = lambda M_i)

where N is the mean-normalized Neumann transform (solve_neumann_normalized),
psi = nu_i . M_b grad u_b is the heart-outward bath flux, <.> the lumped
surface mean, and c the calibration constant fixing the arbitrary additive
constant through oint (u_i + c0 u_e) dsigma = 0.  The two formulas agree
identically: the normalized Neumann solution is mean-free, so the lambda
form needs the explicit mean split (the identity
-N_i(Delta_e u_e, 0) = -lambda(u_e - <u_e>) + N_i(0, psi) holds exactly).

Protocol 1 consumes a measured u_e on the heart: (a) Zaremba solve for psi,
(b) the proportional formula, (c) v = u_i - u_e.  Protocol 2 first recovers
u_e and psi from torso data via the regularized Cauchy solver, then runs the
same tail.

The reconstruction's null space is spanned by compactly supported interior
bumps: u in H^2_0 of the heart domain, u_e = u, u_b = 0, u_i from the same
formulas; every such triple leaves the body-surface data untouched.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .cauchy import CauchySolveReport, TikhonovConfig, solve_cauchy_elliptic
from .direct import solve_neumann_normalized, solve_zaremba
from .errors import MissingInteriorData, ShapeMismatch, SupportTouchesBoundary
from .grid import InteriorGrid
from .kernels import ConductivityModel, as_tensor
from .mesh import (DomainConfig, NodalField, save_mesh, save_nodal_field,
                   surface_distance)

__all__ = [
    "ReconstructionOutput",
    "CubicRadial",
    "NullSpaceElement",
    "calibration_constant",
    "reconstruct_ui_proportional",
    "reconstruct_ui_general",
    "run_protocol_1",
    "run_protocol_2",
    "generate_nullspace_element",
    "write_reconstruction",
]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ReconstructionOutput:
    """Recovered heart-surface fields; v = u_i - u_e holds nodewise."""

    u_e: NodalField
    u_i: NodalField
    v: NodalField
    c: float
    diagnostics: dict = field(default_factory=dict)


def calibration_constant(u_b_trace: NodalField, c0: float, mesh) -> float:
    """c = -c0 <u_b>_sigma, the constant fixing oint(u_i + c0 u_e) = 0.

    u_b_trace is the bath potential trace on the heart surface (equal to the
    extracellular trace by transmission); the mean is lumped quadrature.
    """
    vals = u_b_trace.check_on(mesh)
    w = mesh.vertex_weights
    return float(-c0 * (w @ vals) / w.sum())


def _surface_mean(mesh, vals: np.ndarray) -> float:
    w = mesh.vertex_weights
    return float((w @ vals) / w.sum())


def reconstruct_ui_proportional(u_e: NodalField, heart_flux_of_ub: NodalField,
                                model: ConductivityModel, c0: float,
                                heart) -> tuple:
    """Proportional-case intracellular trace from u_e and the bath flux.

    Returns (u_i NodalField, c, diagnostics).  The Neumann step runs with
    tensor M_i (lambda N_{M_e} = N_{M_i} for proportional tensors) and
    projects the flux onto the compatible subspace: discrete conservation
    holds only to quadrature accuracy and the defect is reported instead of
    rejected.
    """
    if model.lam is None:
        raise ShapeMismatch("proportional reconstruction needs the model lambda")
    ue = u_e.check_on(heart)
    lam = float(model.lam)
    _, rep = solve_neumann_normalized(model.M_i, heart, heart_flux_of_ub,
                                      project=True)
    c = calibration_constant(u_e, c0, heart)
    ui = -lam * (ue - _surface_mean(heart, ue)) + rep.solution_trace.values + c
    diagnostics = {
        "neumann_residual": rep.residual_norm,
        "flux_defect": rep.compatibility_defect,
        "normalization": rep.normalization_value,
    }
    return NodalField(heart.surface_id, ui), c, diagnostics


def reconstruct_ui_general(u_e: NodalField, heart_flux_of_ub: NodalField,
                           M_i, M_e, c0: float, heart,
                           interior=None) -> tuple:
    """General-tensor intracellular trace, u_i = -N_i(Delta_e u_e, 0) + c.

    ``interior`` must supply (InteriorGrid, u_e samples on the grid box) so
    the volume source Delta_e u_e is computable by finite differences;
    without it the formula has no data to act on and MissingInteriorData is
    raised.  heart_flux_of_ub enters only through the compatibility defect
    (the flux of the Neumann problem is zero; the volume integral of the
    source balances it by the divergence identity).
    """
    if interior is None:
        raise MissingInteriorData(
            "general reconstruction needs interior grid samples of u_e"
        )
    grid, ue_grid = interior
    if not isinstance(grid, InteriorGrid):
        raise ShapeMismatch("interior must be (InteriorGrid, samples)")
    ue = u_e.check_on(heart)
    tensor_e = as_tensor(M_e, 3)
    g = grid.elliptic_apply(tensor_e, np.asarray(ue_grid, dtype=float))
    zero_flux = NodalField(heart.surface_id, np.zeros(heart.n_vertices),
                           units="mV*mS/cm^2")
    _, rep = solve_neumann_normalized(as_tensor(M_i, 3), heart, zero_flux,
                                      g_volume=(grid, g), project=True)
    c = calibration_constant(u_e, c0, heart)
    ui = -rep.solution_trace.values + c
    diagnostics = {
        "neumann_residual": rep.residual_norm,
        "source_defect": rep.compatibility_defect,
        "normalization": rep.normalization_value,
    }
    return NodalField(heart.surface_id, ui), c, diagnostics


def run_protocol_1(domain: DomainConfig, model: ConductivityModel,
                   u_e_measured: NodalField, c0: float = 1.0) -> ReconstructionOutput:
    """Measured extracellular trace to transmembrane potential.

    (a) Zaremba solve in the shell for the bath flux, (b) proportional
    reconstruction of u_i, (c) v = u_i - u_e.
    """
    heart = domain.heart
    ue = u_e_measured.check_on(heart)
    flux, zrep = solve_zaremba(model.M_b, heart, domain.torso, u_e_measured)
    ui_field, c, diag = reconstruct_ui_proportional(
        u_e_measured, flux, model, c0, heart
    )
    v = ui_field.values - ue
    diag.update({
        "zaremba_residual": zrep.residual_norm,
        "flux_conservation": zrep.compatibility_defect,
        "c": c,
    })
    return ReconstructionOutput(
        u_e=NodalField(heart.surface_id, ue),
        u_i=ui_field,
        v=NodalField(heart.surface_id, v),
        c=c,
        diagnostics=diag,
    )


def run_protocol_2(domain: DomainConfig, model: ConductivityModel,
                   f: NodalField, tikhonov: Optional[TikhonovConfig] = None,
                   c0: float = 1.0) -> ReconstructionOutput:
    """Torso potential to transmembrane potential via the Cauchy solver.

    Recovers the heart trace and flux from torso Cauchy data (insulated body
    surface), then runs the protocol-1 tail on the recovered pair, skipping
    the Zaremba step the Cauchy solve already subsumes.
    """
    heart = domain.heart
    cauchy: CauchySolveReport = solve_cauchy_elliptic(
        model.M_b, heart, domain.torso, f, config=tikhonov
    )
    ui_field, c, diag = reconstruct_ui_proportional(
        cauchy.heart_dirichlet, cauchy.heart_flux, model, c0, heart
    )
    ue = cauchy.heart_dirichlet.values
    v = ui_field.values - ue
    diag.update({
        "chosen_alpha": cauchy.chosen_alpha,
        "cauchy_residual": cauchy.residual_norm,
        "c": c,
    })
    if "degenerate_lcurve_fallback" in cauchy.diagnostics:
        diag["degenerate_lcurve_fallback"] = True
    return ReconstructionOutput(
        u_e=cauchy.heart_dirichlet,
        u_i=ui_field,
        v=NodalField(heart.surface_id, v),
        c=c,
        diagnostics=diag,
    )


# ---------------------------------------------------------------------------
# null space


@dataclass(frozen=True)
class CubicRadial:
    """u = amplitude max(0, 1 - |x-center|^2/radius^2)^3: the smallest
    closed-form bump with u and grad u vanishing on its support boundary."""

    center: tuple
    radius: float
    amplitude: float = 1.0

    def __post_init__(self):
        if not self.radius > 0:
            raise ShapeMismatch("bump radius must be positive")

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        d2 = np.sum((np.atleast_2d(pts) - np.asarray(self.center)) ** 2, axis=1)
        return self.amplitude * np.maximum(0.0, 1.0 - d2 / self.radius ** 2) ** 3

    def gradient(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        diff = pts - np.asarray(self.center)
        d2 = np.sum(diff ** 2, axis=1)
        s = np.maximum(0.0, 1.0 - d2 / self.radius ** 2)
        coef = -6.0 * self.amplitude * s ** 2 / self.radius ** 2
        return coef[:, None] * diff


@dataclass(frozen=True)
class NullSpaceElement:
    """A triple (u_e, u_i, u_b = 0) invisible to the body surface.

    u_interior are the bump samples on the grid, traces are heart-surface
    NodalFields (u_trace and grad_trace_norm are exactly zero by support),
    and u_i_interior the matching intracellular samples where available
    (proportional case: -lambda u exactly).
    """

    bump: CubicRadial
    grid: InteriorGrid
    u_interior: np.ndarray
    u_e_trace: NodalField
    u_i_trace: NodalField
    grad_trace_norm: float
    proportional: bool
    u_i_interior: Optional[np.ndarray] = None
    diagnostics: dict = field(default_factory=dict)


def generate_nullspace_element(heart, grid: InteriorGrid,
                               model: ConductivityModel, bump: CubicRadial,
                               proportional: bool = True) -> NullSpaceElement:
    """Build and certify one null-space triple from a cubic radial bump.

    The support must lie strictly inside the heart surface; the calibrated
    constant of the triple is zero because the trace is identically zero.
    """
    center = np.asarray(bump.center, dtype=float)
    gap = float(surface_distance(heart, center[None, :])[0])
    from .mesh import points_inside
    if not points_inside(heart, center[None, :])[0]:
        raise SupportTouchesBoundary("bump center is outside the heart surface")
    if gap <= bump.radius:
        raise SupportTouchesBoundary(
            f"bump support (radius {bump.radius}) reaches within {gap:.3e} "
            "of the heart surface"
        )
    u_grid = bump(grid.centers())
    trace = bump(heart.vertices)
    grad_trace = bump.gradient(heart.vertices)
    u_e_trace = NodalField(heart.surface_id, trace)
    c = calibration_constant(u_e_trace, 1.0, heart)
    diagnostics = {"c": c, "support_gap": gap - bump.radius}
    if proportional:
        if model.lam is None:
            raise ShapeMismatch("proportional null-space element needs lambda")
        ui_trace = -float(model.lam) * trace + c
        ui_grid = -float(model.lam) * u_grid + c
        element = NullSpaceElement(
            bump=bump, grid=grid, u_interior=u_grid,
            u_e_trace=u_e_trace,
            u_i_trace=NodalField(heart.surface_id, ui_trace),
            grad_trace_norm=float(np.abs(grad_trace).max()),
            proportional=True, u_i_interior=ui_grid,
            diagnostics=diagnostics,
        )
    else:
        ui_field, c_gen, diag = reconstruct_ui_general(
            u_e_trace, NodalField(heart.surface_id, np.zeros(heart.n_vertices)),
            model.M_i, model.M_e, 1.0, heart, interior=(grid, u_grid),
        )
        diagnostics.update(diag)
        diagnostics["c"] = c_gen
        element = NullSpaceElement(
            bump=bump, grid=grid, u_interior=u_grid,
            u_e_trace=u_e_trace, u_i_trace=ui_field,
            grad_trace_norm=float(np.abs(grad_trace).max()),
            proportional=False,
            diagnostics=diagnostics,
        )
    return element


# ---------------------------------------------------------------------------
# output


def write_reconstruction(out: ReconstructionOutput, directory, heart,
                         manifest_extra: Optional[dict] = None,
                         vtk: bool = False) -> dict:
    """Write per-surface CSVs, a JSON run manifest, optionally VTK POLYDATA.

    Returns the manifest dict.  File contents are deterministic: repr-exact
    floats, no timestamps.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = {}
    for name in ("u_e", "u_i", "v"):
        f = getattr(out, name)
        p = directory / f"{name}.csv"
        save_nodal_field(f, p)
        files[name] = p.name
    manifest = {
        "c": out.c,
        "diagnostics": {k: (float(v) if np.isscalar(v) or isinstance(v, (int, float)) else
                            [float(x) for x in np.atleast_1d(v)])
                        for k, v in out.diagnostics.items()
                        if not isinstance(v, (str, bool))},
        "flags": {k: v for k, v in out.diagnostics.items() if isinstance(v, (str, bool))},
        "files": files,
        "surface": heart.surface_id,
    }
    if manifest_extra:
        manifest.update(manifest_extra)
    if vtk:
        vtk_path = directory / "reconstruction.vtk"
        save_mesh(heart, vtk_path, fmt="vtk", point_data={
            "u_e": out.u_e.values, "u_i": out.u_i.values, "v": out.v.values,
        })
        manifest["files"]["vtk"] = vtk_path.name
    (directory / "reconstruction.json").write_text(
        json.dumps(manifest, indent=1, sort_keys=True) + "\n"
    )
    return manifest
