"""The evolution operator: kernel invariants and the heat Green identity.

The time-dependent membrane balance reduces, for proportional
conductivities, to a scalar operator d_t - div(A grad) + a . grad + a0 on
the heart interior, with A a scaled conductivity tensor.  Its fundamental
solution is a drifting, decaying Gaussian; everything downstream (layer
potentials, the reconstruction identity, the evolutionary right side)
rests on three exact properties checked here, followed by the identity
itself on a ball and the assembled right side of the surface evolution
law.
"""

import numpy as np

from cardiobem import (
    ConductivityModel,
    HeatOperatorSpec,
    InteriorGrid,
    SpaceTimeField,
    TimeGrid,
    assemble_evolution_rhs,
    heat_kernel,
    heat_kernel_mass,
    icosphere,
    ionic_current_linear,
    parabolic_green_reconstruct,
)


def main():
    model = ConductivityModel()
    spec = HeatOperatorSpec.from_model(model)
    print(f"diffusion scale 1/(chi C_m (1+lambda)) = {spec.scale:.3e} cm^2/ms")

    # 1. causality: the kernel vanishes identically for s <= 0
    pts = np.array([[0.3, 0.1, 0.0], [0.0, 0.0, 0.1]])
    early = np.abs(heat_kernel(spec, pts, 0.0)).max()
    print(f"kernel at s = 0:       {early:.1f} (exact zero)")

    # 2. unit mass: space integral is 1 for the reaction-free operator
    mass = heat_kernel_mass(spec, 0.25)
    print(f"kernel mass at t=0.25: 1 {mass - 1.0:+.1e}")

    # 3. the kernel solves the PDE pointwise (finite differences)
    x = np.array([0.3, -0.2, 0.1])
    t, dx, dt = 0.25, 1e-3, 2e-4
    ut = (heat_kernel(spec, x, t + dt) - heat_kernel(spec, x, t - dt)) / (2 * dt)
    lap = 0.0
    for i in range(3):
        e = np.zeros(3)
        e[i] = dx
        lap += spec.A[i, i] * (
            heat_kernel(spec, x + e, t) - 2 * heat_kernel(spec, x, t)
            + heat_kernel(spec, x - e, t)) / dx ** 2
    print(f"pde residual:          {abs(float(ut - lap)):.1e}")

    # the Green identity: u = |x|^2 + 6t is caloric for unit diffusivity;
    # its trace and conormal flux on the sphere reconstruct the interior
    # value and cancel to zero outside
    unit = HeatOperatorSpec(M=1.0, scale=1.0, dim=3)
    print("\ncaloric reconstruction of |x|^2 + 6t at the center, t = 0.5:")
    print("level  cells  frames   value    rel err")
    for level, h, steps in ((2, 0.14, 24), (3, 0.10, 48)):
        mesh = icosphere(level, 1.0, surface_id="ball")
        grid = InteriorGrid.for_mesh(mesh, h=h)
        tg = TimeGrid(t_end=0.5, steps=steps)
        trace = SpaceTimeField("ball", np.add.outer(
            np.sum(mesh.vertices ** 2, axis=1), 6.0 * tg.times), tg)
        flux = SpaceTimeField("ball", np.repeat(
            2.0 * np.linalg.norm(mesh.vertices, axis=1)[:, None], tg.steps, 1), tg)
        u0 = np.sum(grid.centers() ** 2, axis=1)
        val = parabolic_green_reconstruct(unit, mesh, grid, trace, flux, u0,
                                          None, np.zeros(3), 0.5)
        print(f"  {level}    {int(grid.inside.sum()):5d}   {steps:3d}"
              f"    {val:.4f}  {abs(val - 3.0) / 3.0:.2%}")

    # evolutionary right side: time-constant flux contributes nothing
    # beyond h itself, and a linear-in-time flux adds exactly its slope
    heart = icosphere(2, 1.0, surface_id="heart")
    tg = TimeGrid(t_end=0.5, steps=12)
    rng = np.random.default_rng(1)
    psi = rng.standard_normal(heart.n_vertices)
    psi -= heart.vertex_weights @ psi / heart.vertex_weights.sum()
    h_field = SpaceTimeField.constant_in_time(
        "heart", np.zeros(heart.n_vertices), tg)
    static = SpaceTimeField.constant_in_time("heart", psi, tg,
                                             units="mV*mS/cm^2")
    out = assemble_evolution_rhs(model, heart, h_field, static, 0.0)
    print(f"\nstatic flux: correction sup {np.abs(out.values).max():.1e}"
          " (a constant differentiates to zero)")
    ramp = SpaceTimeField("heart", psi[:, None] * (1 + 2.0 * tg.times), tg,
                          units="mV*mS/cm^2")
    out = assemble_evolution_rhs(model, heart, h_field, ramp, 0.0)
    drift = out.values.std(axis=1).max() / np.abs(out.values).max()
    print(f"ramped flux: correction constant in time to {drift:.1e},"
          " proportional to the slope")

    # a linear ionic law plugs into the same record algebra
    v = SpaceTimeField("heart", 20.0 * np.outer(psi, np.sin(4 * tg.times)), tg)
    ion = ionic_current_linear(v, np.zeros(3), 0.05, 1.0)
    print(f"linear ionic current: {ion.units},"
          f" range {np.ptp(ion.values):.2f}")


if __name__ == "__main__":
    main()
