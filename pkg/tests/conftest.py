import numpy as np
import pytest

from spe_qrng.config import reference_config
from spe_qrng.optics import ComponentSet


@pytest.fixture(scope="session")
def reference():
    """Bundled measured dataset (components, detector, angles, counts)."""
    return reference_config()


@pytest.fixture(scope="session")
def measured_components(reference):
    return reference.components


@pytest.fixture(scope="session")
def ideal_components():
    return ComponentSet.ideal()


def random_density(rng: np.random.Generator) -> np.ndarray:
    """Ginibre-sampled 4x4 density matrix (independent of package code)."""
    g = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    rho = g @ g.conj().T
    return rho / np.trace(rho).real


def random_pure(rng: np.random.Generator, dim: int = 4) -> np.ndarray:
    psi = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    psi /= np.linalg.norm(psi)
    return np.outer(psi, psi.conj())
