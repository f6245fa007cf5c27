import numpy as np
import pytest

from dynsbm.core import ModelParams, scenario_preset


@pytest.fixture
def s1():
    return scenario_preset("scenario1")


@pytest.fixture
def s1_inhom():
    return scenario_preset("scenario1_inhomogeneous")


@pytest.fixture
def s2():
    return scenario_preset("scenario2")


def random_params(rng, Q=2, T=2, kappa=3, homogeneous=True, alpha=1.0):
    """Random valid parameters with strictly positive entries."""
    pi = rng.dirichlet(np.full(Q, alpha) + 1)
    R = 1 if homogeneous else max(T - 1, 1)
    rho = rng.dirichlet(np.full(Q, alpha) + 1, size=(R, Q))
    bp = rng.dirichlet(np.full(kappa, alpha) + 1, size=(T, Q, Q))
    bp = np.where(np.triu(np.ones((Q, Q), bool))[None, :, :, None], bp, bp.transpose(0, 2, 1, 3))
    return ModelParams(pi, rho, bp, homogeneous)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
