import sys
import os
sys.path.append(os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

import numpy as np
import pytest

from numerics.distortion import DistortionFn, LogKernel
from numerics.sources import Quadrature, SourceSpec, build_quadrature


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def squared():
    return DistortionFn.squared_error()


@pytest.fixture(scope="session")
def uniform_source():
    return SourceSpec.uniform(-8.0, 8.0)


@pytest.fixture(scope="session")
def uniform_quad(uniform_source):
    return build_quadrature(uniform_source, 300, "midpoint")


def make_instance(rho, weights=None, beta=1.0):
    """Kernel and quadrature from an explicit rho matrix."""
    rho = np.atleast_2d(np.asarray(rho, dtype=np.float64))
    m = rho.shape[0]
    weights = np.full(m, 1.0 / m) if weights is None else np.asarray(weights, dtype=np.float64)
    quad = Quadrature(nodes=np.linspace(-1.0, 1.0, m), weights=weights, rule="midpoint", raw_mass=1.0)
    return LogKernel(beta=float(beta), log_entries=-float(beta) * rho, rho_entries=rho), quad
