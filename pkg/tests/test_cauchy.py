"""Tikhonov-regularized data completion: grids, selection rules, sweeps."""

import numpy as np
import pytest

from cardiobem import (
    DegenerateLCurve,
    DiscrepancyPrinciple,
    FixedAlpha,
    NodalField,
    ShapeMismatch,
    TikhonovConfig,
    lcurve_corner,
    save_lcurve,
    solve_cauchy_elliptic,
)


def test_log_grid():
    cfg = TikhonovConfig.log_grid(12, 1e-8, 1.0)
    assert len(cfg.alpha_grid) == 12
    assert cfg.alpha_grid[0] == pytest.approx(1e-8)
    assert cfg.alpha_grid[-1] == pytest.approx(1.0)
    assert np.all(np.diff(cfg.alpha_grid) > 0)


def test_config_validation():
    with pytest.raises(ShapeMismatch):
        TikhonovConfig(np.array([1.0]))
    with pytest.raises(ShapeMismatch):
        TikhonovConfig(np.array([1.0, 0.5]))  # not increasing
    with pytest.raises(ShapeMismatch):
        TikhonovConfig(np.logspace(-8, 0, 4))  # too short for the L-curve
    with pytest.raises(ShapeMismatch):
        TikhonovConfig(np.logspace(-8, 0, 9), penalty="ridge")
    with pytest.raises(ShapeMismatch):
        FixedAlpha(-1.0)
    with pytest.raises(ShapeMismatch):
        DiscrepancyPrinciple(-2.0)


def test_lcurve_corner_synthetic():
    # two log-log power-law arms meeting at index 5
    alphas = np.logspace(-6, 2, 11)
    rho = np.where(np.arange(11) < 5, 1.0, np.logspace(0, 4, 11))
    eta = np.where(np.arange(11) < 5, np.logspace(6, 0, 11), 1.0)
    pts = np.column_stack([np.log(rho), np.log(eta)])
    assert abs(lcurve_corner(pts) - 5) <= 1
    # exactly collinear points have no corner (exact arithmetic on purpose;
    # a straight line polluted by fp noise is legitimately non-degenerate)
    with pytest.raises(DegenerateLCurve):
        lcurve_corner(np.column_stack([np.arange(10.0), -np.arange(10.0)]))


def test_fixed_alpha_snaps_to_grid(model, domain2, fields2):
    grid = TikhonovConfig.log_grid().alpha_grid
    cfg = TikhonovConfig(grid, selection=FixedAlpha(3e-5))
    rep = solve_cauchy_elliptic(model.M_b, domain2.heart, domain2.torso,
                                fields2["f"], config=cfg)
    assert rep.chosen_alpha in grid
    assert rep.chosen_alpha == grid[np.argmin(np.abs(np.log(grid)
                                                     - np.log(3e-5)))]


def test_discrepancy_principle(model, domain2, fields2):
    grid = TikhonovConfig.log_grid().alpha_grid
    loose = TikhonovConfig(grid, selection=DiscrepancyPrinciple(1e9))
    rep = solve_cauchy_elliptic(model.M_b, domain2.heart, domain2.torso,
                                fields2["f"], config=loose)
    assert rep.chosen_alpha == grid[-1]  # everything feasible: largest alpha

    tight = TikhonovConfig(grid, selection=DiscrepancyPrinciple(1e-300))
    rep = solve_cauchy_elliptic(model.M_b, domain2.heart, domain2.torso,
                                fields2["f"], config=tight)
    assert rep.diagnostics.get("discrepancy_unreachable") is True
    assert rep.chosen_alpha == grid[np.argmin(rep.diagnostics["residuals"])]


def test_zero_data_short_circuit(model, domain2):
    f = NodalField("torso", np.zeros(domain2.torso.n_vertices))
    rep = solve_cauchy_elliptic(model.M_b, domain2.heart, domain2.torso, f)
    assert rep.diagnostics.get("zero_data") is True
    assert np.all(rep.heart_dirichlet.values == 0.0)
    assert np.all(rep.heart_flux.values == 0.0)
    assert rep.residual_norm == 0.0


@pytest.mark.parametrize("penalty", ["identity", "surface_gradient"])
def test_cauchy_recovers_oracle(model, domain2, fields2, penalty):
    cfg = TikhonovConfig.log_grid(penalty=penalty)
    rep = solve_cauchy_elliptic(model.M_b, domain2.heart, domain2.torso,
                                fields2["f"], config=cfg)
    true_trace = fields2["heart_trace_ub"].values
    true_flux = fields2["heart_flux"].values
    err_trace = (np.linalg.norm(rep.heart_dirichlet.values - true_trace)
                 / np.linalg.norm(true_trace))
    err_flux = (np.linalg.norm(rep.heart_flux.values - true_flux)
                / np.linalg.norm(true_flux))
    assert err_trace < 0.05
    # the flux carries one more derivative of the completion error
    assert err_flux < 0.20


def test_sweep_monotone_and_saved(tmp_path, model, domain2, fields2):
    rep = solve_cauchy_elliptic(model.M_b, domain2.heart, domain2.torso,
                                fields2["f"])
    rho = rep.diagnostics["residuals"]
    eta = rep.diagnostics["seminorms"]
    assert np.all(np.diff(rho) >= 0)
    assert np.all(np.diff(eta) <= 0)
    assert len(rep.lcurve_points) == len(rho)

    path = tmp_path / "lc.csv"
    save_lcurve(rep, path)
    rows = np.loadtxt(path, delimiter=",", skiprows=1)
    assert rows.shape == (len(rho), 3)
    assert rows[:, 1] == pytest.approx(rho)
    assert rows[:, 2] == pytest.approx(eta)
