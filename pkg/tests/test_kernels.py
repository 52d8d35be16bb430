"""Conductivity tensors and elliptic/parabolic fundamental solutions."""

import numpy as np
import pytest

from cardiobem import (
    ConductivityModel,
    HeatOperatorSpec,
    ShapeMismatch,
    as_tensor,
    elliptic_fundamental,
)
from cardiobem.kernels import (
    BATH_CONDUCTIVITY,
    MEMBRANE_CAPACITANCE,
    SIGMA_LE,
    SIGMA_LI,
    SURFACE_TO_VOLUME,
)


def test_default_model():
    m = ConductivityModel()
    assert m.lam == pytest.approx(SIGMA_LE / SIGMA_LI)
    assert m.lam == pytest.approx(3.75)
    assert m.m_b == BATH_CONDUCTIVITY == 7.0
    assert np.array_equal(m.M_b, 7.0 * np.eye(3))
    assert m.chi == SURFACE_TO_VOLUME == 400.0
    assert m.C_m == MEMBRANE_CAPACITANCE == 1.0


def test_proportionality_detection():
    prop = ConductivityModel(M_i=np.diag([1.0, 2.0, 3.0]),
                             M_e=np.diag([2.0, 4.0, 6.0]))
    assert prop.lam == pytest.approx(2.0)
    skew = ConductivityModel(M_i=np.diag([1.0, 2.0, 3.0]),
                             M_e=np.diag([2.0, 4.0, 7.0]))
    assert skew.lam is None


def test_as_tensor():
    assert np.array_equal(as_tensor(2.0, 3), 2.0 * np.eye(3))
    t = np.diag([1.0, 2.0, 3.0])
    assert np.array_equal(as_tensor(t, 3), t)
    with pytest.raises(ShapeMismatch):
        as_tensor(np.eye(2), 3)


def test_fundamental_3d():
    # isotropic: 1/(4 pi r)
    val = elliptic_fundamental(np.eye(3), np.array([[2.0, 0.0, 0.0]]), np.zeros(3))
    assert val[0] == pytest.approx(1.0 / (8 * np.pi), rel=1e-12)
    # anisotropic closed form: 1/(4 pi sqrt(det M) |x|_{M^-1})
    M = np.diag([1.0, 4.0, 9.0])
    x = np.array([[0.3, -0.5, 0.7]])
    rm = np.sqrt(x[0] @ np.linalg.inv(M) @ x[0])
    expect = 1.0 / (4 * np.pi * np.sqrt(np.linalg.det(M)) * rm)
    assert elliptic_fundamental(M, x, np.zeros(3))[0] == pytest.approx(expect, rel=1e-12)


def test_fundamental_2d():
    # -log(r_M) / (2 pi sqrt(det M)); vanishes at r = 1 for the identity
    val = elliptic_fundamental(np.eye(2), np.array([[1.0, 0.0]]), np.zeros(2))
    assert val[0] == pytest.approx(0.0, abs=1e-15)
    val = elliptic_fundamental(np.eye(2), np.array([[4.0, 0.0]]), np.zeros(2))
    assert val[0] == pytest.approx(-np.log(4.0) / (2 * np.pi), rel=1e-12)


@pytest.mark.parametrize("M", [np.eye(3), np.diag([1.0, 4.0, 9.0])])
def test_fundamental_solves_pde(M):
    # -div(M grad Phi) = 0 away from the pole, by central differences
    x0 = np.array([0.4, -0.3, 0.6])
    h = 1e-4

    def phi(p):
        return elliptic_fundamental(M, p.reshape(1, -1), np.zeros(3))[0]

    lap = 0.0
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        lap += M[i, i] * (phi(x0 + e) - 2 * phi(x0) + phi(x0 - e)) / h ** 2
    assert abs(lap) < 1e-4 * abs(phi(x0)) / np.linalg.norm(x0) ** 2


def test_heat_operator_spec_from_model():
    model = ConductivityModel()
    spec = HeatOperatorSpec.from_model(model)
    assert spec.scale == pytest.approx(1.0 / (400.0 * 1.0 * 4.75))
    assert np.array_equal(spec.M, as_tensor(SIGMA_LE, 3))
    assert spec.dim == 3
    # the diffusion tensor folds the scale in
    assert np.array_equal(spec.A, spec.scale * spec.M)

    skew = ConductivityModel(M_i=np.diag([1.0, 2.0, 3.0]),
                             M_e=np.diag([2.0, 4.0, 7.0]))
    with pytest.raises(ShapeMismatch):
        HeatOperatorSpec.from_model(skew)
