"""Parabolic potentials: heat kernel, Green identity, evolution right side."""

import numpy as np
import pytest

from cardiobem import (
    ConductivityModel,
    HeatOperatorSpec,
    InteriorGrid,
    MissingInteriorData,
    NodalField,
    PointOnSurface,
    ShapeMismatch,
    SpaceTimeField,
    TimeGrid,
    assemble_evolution_rhs,
    heat_kernel,
    heat_kernel_mass,
    ionic_current_linear,
    load_spacetime_field,
    parabolic_green_reconstruct,
    parabolic_layer_potentials,
    poisson_integral,
    save_spacetime_field,
    volume_heat_potential,
)
from cardiobem.direct import solve_neumann_normalized


@pytest.fixture(scope="module")
def aniso_spec():
    # 2D operator with every coefficient active
    return HeatOperatorSpec(M=np.array([[2.0, 0.3], [0.3, 1.0]]), scale=0.5,
                            drift=np.array([0.4, -0.2]), reaction=0.7, dim=2)


def test_time_grid():
    tg = TimeGrid(t_end=1.0, steps=5)
    assert tg.dt == pytest.approx(0.25)
    assert np.allclose(tg.times, [0.0, 0.25, 0.5, 0.75, 1.0])
    with pytest.raises(ShapeMismatch):
        TimeGrid(t_end=1.0, steps=1)
    with pytest.raises(ShapeMismatch):
        TimeGrid(t_end=0.0, steps=5)


def test_spacetime_field_validation():
    tg = TimeGrid(t_end=1.0, steps=4)
    with pytest.raises(ShapeMismatch):
        SpaceTimeField("heart", np.zeros(4), tg)
    with pytest.raises(ShapeMismatch):
        SpaceTimeField("heart", np.zeros((3, 5)), tg)
    bad = np.zeros((3, 4))
    bad[1, 2] = np.nan
    with pytest.raises(ShapeMismatch):
        SpaceTimeField("heart", bad, tg)
    fld = SpaceTimeField.constant_in_time("heart", np.arange(3.0), tg)
    assert fld.values.shape == (3, 4)
    assert fld.n_nodes == 3
    assert np.array_equal(fld.frame(2), np.arange(3.0))
    assert not fld.values.flags.writeable


def test_heat_kernel_closed_form(aniso_spec):
    spec = aniso_spec
    diff = np.array([[0.3, -0.1], [0.0, 0.2], [1.0, 0.5]])
    s = 0.4
    a_inv = np.linalg.inv(spec.A)
    d = diff - spec.drift * s
    q = np.einsum("ij,jk,ik->i", d, a_inv, d)
    want = (np.exp(-q / (4 * s) - spec.reaction * s)
            / ((4 * np.pi * s) ** (spec.dim / 2) * np.sqrt(np.linalg.det(spec.A))))
    assert np.allclose(heat_kernel(spec, diff, s), want, rtol=1e-14)
    with pytest.raises(ShapeMismatch):
        heat_kernel(spec, np.zeros((2, 3)), s)


def test_heat_kernel_causality(aniso_spec):
    diff = np.array([[0.3, -0.1], [0.0, 0.2], [1.0, 0.5]])
    assert np.array_equal(heat_kernel(aniso_spec, diff, 0.0), np.zeros(3))
    assert np.array_equal(heat_kernel(aniso_spec, diff, -0.5), np.zeros(3))
    s = np.array([-1.0, 0.0, 0.3])
    out = heat_kernel(aniso_spec, diff, s)
    assert out[0] == 0.0 and out[1] == 0.0 and out[2] > 0.0


def test_heat_kernel_mass(aniso_spec):
    # total mass decays exactly like exp(-a0 t); drift only moves the bump
    for t in (0.5, 2.0):
        assert heat_kernel_mass(aniso_spec, t) == pytest.approx(
            np.exp(-aniso_spec.reaction * t), abs=1e-9)
    assert heat_kernel_mass(aniso_spec, 0.0) == 0.0
    clipped = heat_kernel_mass(aniso_spec, 0.5, half_width=0.3)
    assert 0.0 < clipped < np.exp(-0.35)


def test_poisson_semigroup(heart2):
    # I(K(. - x0, t0))(x, t) == K(x - x0, t0 + t) while the tails stay
    # inside the ball; midpoint quadrature of a resolved Gaussian is
    # spectrally accurate
    spec = HeatOperatorSpec(M=np.eye(3), scale=1.0, dim=3)
    grid = InteriorGrid.for_mesh(heart2, h=0.05)
    x0 = np.array([0.05, -0.1, 0.0])
    u0 = heat_kernel(spec, grid.centers() - x0, 0.01)
    x = np.array([0.12, 0.02, -0.05])
    got = poisson_integral(spec, grid, u0, x, 0.012)
    want = float(heat_kernel(spec, x - x0, 0.022))
    assert got == pytest.approx(want, rel=1e-12)
    with pytest.raises(ShapeMismatch):
        poisson_integral(spec, grid, u0, x, 0.0)
    with pytest.raises(ShapeMismatch):
        poisson_integral(spec, grid, u0[:-1], x, 0.01)


def test_green_identity_constant(model, heart2):
    # u == 1 is caloric for the reaction-free operator: the Poisson term
    # and the double layer of 1 must sum to the indicator of the ball
    spec = HeatOperatorSpec.from_model(model)
    tg = TimeGrid(t_end=0.5, steps=24)
    grid = InteriorGrid.for_mesh(heart2, h=0.14)
    nv = heart2.n_vertices
    trace = SpaceTimeField.constant_in_time("heart", np.ones(nv), tg)
    flux = SpaceTimeField.constant_in_time("heart", np.zeros(nv), tg,
                                           units="mV*mS/cm^2")
    inside = parabolic_green_reconstruct(spec, heart2, grid, trace, flux,
                                         np.ones(grid.n_cells), None,
                                         np.array([0.2, -0.1, 0.15]), 0.3)
    outside = parabolic_green_reconstruct(spec, heart2, grid, trace, flux,
                                          np.ones(grid.n_cells), None,
                                          np.array([1.5, 0.0, 0.0]), 0.3)
    assert abs(inside - 1.0) < 1e-4
    assert abs(outside) < 1e-4


def test_green_identity_source(heart2):
    # u = t: zero initial data and flux, unit volume source.  Unit
    # diffusivity keeps the kernel resolved by the cell size at every
    # quadrature time, which the physical operator's tiny scale would not.
    spec = HeatOperatorSpec(M=np.eye(3), scale=1.0, dim=3)
    tg = TimeGrid(t_end=0.5, steps=24)
    grid = InteriorGrid.for_mesh(heart2, h=0.14)
    nv = heart2.n_vertices
    trace = SpaceTimeField("heart", np.tile(tg.times, (nv, 1)), tg)
    flux = SpaceTimeField.constant_in_time("heart", np.zeros(nv), tg,
                                           units="mV*mS/cm^2")
    source = SpaceTimeField("grid", np.ones((grid.n_cells, tg.steps)), tg)
    inside = parabolic_green_reconstruct(spec, heart2, grid, trace, flux,
                                         None, source,
                                         np.array([0.2, -0.1, 0.15]), 0.3)
    outside = parabolic_green_reconstruct(spec, heart2, grid, trace, flux,
                                          None, source,
                                          np.array([1.6, 0.2, 0.0]), 0.3)
    assert inside == pytest.approx(0.3, rel=5e-3)
    assert abs(outside) < 2e-2


def test_layer_potential_validation(model, heart2):
    spec = HeatOperatorSpec.from_model(model)
    tg = TimeGrid(t_end=0.5, steps=8)
    dens = SpaceTimeField.constant_in_time("heart", np.ones(heart2.n_vertices), tg)
    x = np.array([0.2, 0.1, 0.0])
    with pytest.raises(ShapeMismatch):
        parabolic_layer_potentials(spec, heart2, dens, "triple", x, 0.3)
    with pytest.raises(ShapeMismatch):
        parabolic_layer_potentials(spec, heart2, dens, "single", x, 0.7)
    other = SpaceTimeField.constant_in_time("torso", np.ones(heart2.n_vertices), tg)
    with pytest.raises(ShapeMismatch):
        parabolic_layer_potentials(spec, heart2, other, "single", x, 0.3)
    with pytest.raises(PointOnSurface):
        parabolic_layer_potentials(spec, heart2, dens, "double",
                                   heart2.vertices[0], 0.3)
    # no frame lies strictly below t0: the potentials vanish identically
    assert parabolic_layer_potentials(spec, heart2, dens, "single", x, 0.0) == 0.0


def test_volume_potential_validation(model, heart2):
    spec = HeatOperatorSpec.from_model(model)
    tg = TimeGrid(t_end=0.5, steps=8)
    grid = InteriorGrid.for_mesh(heart2, h=0.2)
    src = SpaceTimeField("grid", np.ones((grid.n_cells, tg.steps)), tg)
    assert volume_heat_potential(spec, grid, src, np.array([0.1, 0.0, 0.0]), 0.0) == 0.0
    bad = SpaceTimeField("grid", np.ones((grid.n_cells - 1, tg.steps)), tg)
    with pytest.raises(ShapeMismatch):
        volume_heat_potential(spec, grid, bad, np.array([0.1, 0.0, 0.0]), 0.3)


@pytest.fixture(scope="module")
def compatible_flux(heart2):
    rng = np.random.default_rng(3)
    psi = rng.standard_normal(heart2.n_vertices)
    w = heart2.vertex_weights
    return psi - (w @ psi) / w.sum()


def test_evolution_rhs_static_flux(model, heart2, compatible_flux):
    # time-constant flux and zero reaction: the correction differentiates
    # a constant, so the right side is h, bit for bit
    tg = TimeGrid(t_end=0.5, steps=12)
    h = SpaceTimeField("heart", np.outer(np.arange(heart2.n_vertices, dtype=float),
                                         np.cos(tg.times)), tg)
    flux = SpaceTimeField.constant_in_time("heart", compatible_flux, tg,
                                           units="mV*mS/cm^2")
    out = assemble_evolution_rhs(model, heart2, h, flux, 0.0)
    assert np.array_equal(out.values, h.values)


def test_evolution_rhs_time_derivative(model, heart2, compatible_flux):
    # flux linear in t: the finite differences are exact and the Neumann
    # solve is linear in its data, so F - h = lam * beta * w0 everywhere
    tg = TimeGrid(t_end=0.5, steps=12)
    beta = 2.0
    psi_t = compatible_flux[:, None] * (1.0 + beta * tg.times)[None, :]
    h = SpaceTimeField.constant_in_time("heart", np.zeros(heart2.n_vertices), tg)
    flux = SpaceTimeField("heart", psi_t, tg, units="mV*mS/cm^2")
    out = assemble_evolution_rhs(model, heart2, h, flux, 0.0)
    _, rep = solve_neumann_normalized(
        model.M_i, heart2,
        NodalField("heart", compatible_flux, units="mV*mS/cm^2"), project=True)
    want = model.lam * beta * rep.solution_trace.values
    err = np.abs(out.values - want[:, None]).max() / np.abs(want).max()
    assert err < 1e-10


def test_evolution_rhs_reaction(model, heart2, compatible_flux):
    # static flux with a reaction coefficient: F - h = lam * a0 * (w0 + c)
    tg = TimeGrid(t_end=0.5, steps=12)
    spec = HeatOperatorSpec.from_model(model, reaction=0.8)
    h = SpaceTimeField.constant_in_time("heart", np.zeros(heart2.n_vertices), tg)
    flux = SpaceTimeField.constant_in_time("heart", compatible_flux, tg,
                                           units="mV*mS/cm^2")
    out = assemble_evolution_rhs(model, heart2, h, flux, 0.5, spec=spec)
    _, rep = solve_neumann_normalized(
        model.M_i, heart2,
        NodalField("heart", compatible_flux, units="mV*mS/cm^2"), project=True)
    want = model.lam * 0.8 * (rep.solution_trace.values + 0.5)
    err = np.abs(out.values - want[:, None]).max() / np.abs(want).max()
    assert err < 1e-12


def test_evolution_rhs_validation(model, heart2, compatible_flux):
    tg = TimeGrid(t_end=0.5, steps=6)
    nv = heart2.n_vertices
    h = SpaceTimeField.constant_in_time("heart", np.zeros(nv), tg)
    flux = SpaceTimeField.constant_in_time("heart", compatible_flux, tg,
                                           units="mV*mS/cm^2")
    skew = ConductivityModel(M_i=np.diag([1.0, 2.0, 3.0]),
                             M_e=np.diag([2.0, 4.0, 7.0]))
    with pytest.raises(ShapeMismatch):
        assemble_evolution_rhs(skew, heart2, h, flux, 0.0)
    other = SpaceTimeField.constant_in_time("heart", compatible_flux,
                                            TimeGrid(t_end=0.5, steps=7),
                                            units="mV*mS/cm^2")
    with pytest.raises(ShapeMismatch):
        assemble_evolution_rhs(model, heart2, h, other, 0.0)
    with pytest.raises(ShapeMismatch):
        assemble_evolution_rhs(model, heart2, h, flux, np.zeros(5))
    short = SpaceTimeField.constant_in_time("heart", np.zeros(nv - 1), tg)
    with pytest.raises(ShapeMismatch):
        assemble_evolution_rhs(model, heart2, short, flux, 0.0)


def test_ionic_current_linear():
    tg = TimeGrid(t_end=0.3, steps=4)
    rng = np.random.default_rng(11)
    v = SpaceTimeField("heart", rng.standard_normal((5, 4)), tg)
    b = rng.standard_normal(5)
    out = ionic_current_linear(v, np.zeros(3), 2.0, b[:, None])
    assert np.allclose(out.values, 2.0 * v.values + b[:, None])
    assert out.units == "uA/cm^2"
    a = np.array([0.5, -1.0, 0.25])
    with pytest.raises(MissingInteriorData):
        ionic_current_linear(v, a, 2.0, 0.0)
    with pytest.raises(ShapeMismatch):
        ionic_current_linear(v, a, 2.0, 0.0, grad_v=np.zeros((5, 2, 4)))
    g = rng.standard_normal((5, 3, 4))
    out = ionic_current_linear(v, a, 2.0, 1.5, grad_v=g)
    want = 2.0 * v.values + np.einsum("ndk,d->nk", g, a) + 1.5
    assert np.allclose(out.values, want)


def test_spacetime_round_trip(tmp_path):
    tg = TimeGrid(t_end=0.5, steps=3, t0=0.1)
    rng = np.random.default_rng(4)
    fld = SpaceTimeField("heart", rng.standard_normal((6, 3)), tg, units="uA/cm^2")
    path = tmp_path / "field.csv"
    save_spacetime_field(fld, path)
    back = load_spacetime_field(path)
    assert np.array_equal(back.values, fld.values)
    assert back.grid == fld.grid
    assert back.location == "heart"
    assert back.units == "uA/cm^2"
