"""Shared fixtures: meshes, the conductivity model, and oracle datasets.

Everything here is session-scoped because mesh refinement and the dense
operator assembly dominate the suite's runtime; tests must treat fixture
objects as read-only (SurfaceMesh and the field containers are frozen, so
accidental mutation raises).
"""

import pytest

from cardiobem import (
    ConductivityModel,
    DomainConfig,
    HarmonicSpec,
    HarmonicTerm,
    Shell3D,
    icosphere,
    synth_bidomain_steady,
)


@pytest.fixture(scope="session")
def model():
    # sigma_li = 12, sigma_le = 45 (lambda = 3.75), bath 7 mS/cm
    return ConductivityModel()


@pytest.fixture(scope="session")
def heart2():
    return icosphere(2, 1.0, surface_id="heart")


@pytest.fixture(scope="session")
def torso2():
    return icosphere(2, 2.0, surface_id="torso")


@pytest.fixture(scope="session")
def domain2(heart2, torso2):
    return DomainConfig(heart=heart2, torso=torso2)


@pytest.fixture(scope="session")
def heart3():
    return icosphere(3, 1.0, surface_id="heart")


@pytest.fixture(scope="session")
def torso3():
    return icosphere(3, 2.0, surface_id="torso")


@pytest.fixture(scope="session")
def domain3(heart3, torso3):
    return DomainConfig(heart=heart3, torso=torso3)


@pytest.fixture(scope="session")
def shell_spec():
    # degree-2 extracellular potential on the r=1..2 shell, 10 mV amplitude
    return HarmonicSpec(terms=(HarmonicTerm(2, 1, a=10.0),),
                        geometry=Shell3D(1.0, 2.0))


@pytest.fixture(scope="session")
def shell_oracle(model, shell_spec):
    return synth_bidomain_steady(Shell3D(1.0, 2.0), model, shell_spec)


@pytest.fixture(scope="session")
def fields2(shell_oracle, heart2, torso2):
    """Oracle dataset sampled on the level-2 shell meshes."""
    return shell_oracle.fields_on(heart2, torso2)


@pytest.fixture(scope="session")
def fields3(shell_oracle, heart3, torso3):
    """Oracle dataset sampled on the level-3 shell meshes."""
    return shell_oracle.fields_on(heart3, torso3)
