"""Body-surface potentials to the heart: the regularized Cauchy step.

The chest measurement f determines the heart trace and flux only through a
severely ill-posed sideways problem: both Cauchy data live on the torso
(the flux is zero there, the body is insulated) and must be propagated
inward through the shell.  Tikhonov regularization over a log grid of
alpha values turns that into a family of least-squares solves; the corner
of the L-curve picks the alpha that balances data fit against solution
size.

The script solves the same dataset three ways: noise-free, with 1% additive
noise, and with the regularization deliberately swept so the trade-off and
the corner are visible in numbers.
"""

from pathlib import Path

import numpy as np

from cardiobem import (
    ConductivityModel,
    DomainConfig,
    FixedAlpha,
    HarmonicSpec,
    HarmonicTerm,
    NodalField,
    Shell3D,
    TikhonovConfig,
    icosphere,
    rmse,
    run_protocol_2,
    save_lcurve,
    solve_cauchy_elliptic,
    synth_bidomain_steady,
)


def main():
    model = ConductivityModel()
    geometry = Shell3D(1.0, 2.0)
    spec = HarmonicSpec(
        terms=(HarmonicTerm(1, 0, a=5.0), HarmonicTerm(2, 1, a=2.0)),
        geometry=geometry,
    )
    oracle = synth_bidomain_steady(geometry, model, spec)
    heart = icosphere(2, 1.0, surface_id="heart")
    torso = icosphere(2, 2.0, surface_id="torso")
    domain = DomainConfig(heart=heart, torso=torso)
    fields = oracle.fields_on(heart, torso)
    span = np.ptp(fields["v"].values)
    config = TikhonovConfig.log_grid(count=16, alpha_min=1e-10, alpha_max=1e2)

    clean = run_protocol_2(domain, model, fields["f"], config)
    print(f"clean data:  rmse(v) {rmse(clean.v, fields['v']) / span:.2%}"
          f" of range, alpha {clean.diagnostics['chosen_alpha']:.1e}")

    rng = np.random.default_rng(7)
    noise = 0.01 * np.abs(fields["f"].values).max()
    noisy_f = NodalField("torso", fields["f"].values
                         + noise * rng.standard_normal(torso.n_vertices))
    noisy = run_protocol_2(domain, model, noisy_f, config)
    print(f"1% noise:    rmse(v) {rmse(noisy.v, fields['v']) / span:.2%}"
          f" of range, alpha {noisy.diagnostics['chosen_alpha']:.1e}")

    # sweep the grid by hand on the noisy data: under-regularized solves
    # blow up, over-regularized ones flatten out
    report = solve_cauchy_elliptic(model.M_b, heart, torso, noisy_f,
                                   config=config)
    print("\n  alpha     residual    seminorm    rmse(v) vs truth")
    for alpha in report.diagnostics["alpha_grid"][::2]:
        fixed = TikhonovConfig(alpha_grid=config.alpha_grid,
                               selection=FixedAlpha(alpha))
        out = run_protocol_2(domain, model, noisy_f, fixed)
        k = int(np.argmin(np.abs(report.diagnostics["alpha_grid"] - alpha)))
        rho = report.diagnostics["residuals"][k]
        eta = report.diagnostics["seminorms"][k]
        marker = "  <- L-curve corner" if alpha == noisy.diagnostics[
            "chosen_alpha"] else ""
        print(f"  {alpha:8.1e}  {rho:.3e}  {eta:.3e}"
              f"  {rmse(out.v, fields['v']) / span:8.2%}{marker}")

    out_dir = Path("demo_output")
    out_dir.mkdir(exist_ok=True)
    save_lcurve(report, out_dir / "lcurve.csv")
    print(f"\nresidual rises and seminorm falls monotonically in alpha;")
    print(f"full sweep written to {out_dir / 'lcurve.csv'}")


if __name__ == "__main__":
    main()
