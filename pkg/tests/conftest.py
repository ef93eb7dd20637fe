import numpy as np
import pytest

from elastophase.phases import PhaseSystem
from elastophase.stored_energy import StoredEnergySpec

U2 = np.diag([1.2, 1 / 1.2])


@pytest.fixture(scope="session")
def double_well():
    return PhaseSystem.from_family("double-well", [[-1.0], [1.0]], R=1.5)


@pytest.fixture(scope="session")
def elastic_sys():
    """Wells at z = 1 and z = 0, matching the two-term mixture."""
    return PhaseSystem.from_family("double-well", [[1.0], [0.0]], R=1.5)


@pytest.fixture(scope="session")
def spec():
    return StoredEnergySpec([1.0, 0.7], [np.eye(2), U2])


@pytest.fixture(scope="session")
def stationary_spec():
    return StoredEnergySpec.stationary([1.0, 0.7], [np.eye(2), U2])


@pytest.fixture(scope="session")
def flat_spec():
    """Phase-independent elasticity with zero energy at the identity."""
    return StoredEnergySpec([0.0, 0.0], [np.eye(2), np.eye(2)])
