"""
Shared fixtures and the finite-difference gradient helper
"""
import os

import numpy as np
import pytest

from sdrme.core import Dataset, ExtendedModel
from sdrme.models import FlidModel, GenGammaModel, PoissonModel, RbmModel, sample_discrete_exact, sample_gengamma

DATA_DIR = os.path.join(os.path.dirname(__file__), "data")
LOG2 = float(np.log(2.0))


def fd_gradient(func, x, rel_step=1e-6):
    """Central differences of a scalar function"""
    x = np.asarray(x, dtype=float)
    grad = np.zeros_like(x)
    for j in range(len(x)):
        h = rel_step * (1.0 + abs(x[j]))
        e = np.zeros_like(x)
        e[j] = h
        grad[j] = (func(x + e) - func(x - e)) / (2.0 * h)
    return grad


def fd_jacobian_rows(func, x, rel_step=1e-6):
    """Central differences of a vector-valued function, one column per coordinate"""
    x = np.asarray(x, dtype=float)
    cols = []
    for j in range(len(x)):
        h = rel_step * (1.0 + abs(x[j]))
        e = np.zeros_like(x)
        e[j] = h
        cols.append((func(x + e) - func(x - e)) / (2.0 * h))
    return np.stack(cols, axis=-1)


def assert_gradient(objective, x, rtol=1e-6, atol=1e-7):
    """objective returns (value, gradient); compare its gradient with central differences"""
    _, grad = objective(np.asarray(x, dtype=float))
    fd = fd_gradient(lambda z: objective(z)[0], x)
    np.testing.assert_allclose(grad, fd, rtol=rtol, atol=atol)


@pytest.fixture
def poisson():
    return PoissonModel(x_max=60)


@pytest.fixture
def poisson_extended(poisson):
    return ExtendedModel(poisson)


@pytest.fixture
def poisson_data(poisson):
    return sample_discrete_exact(poisson, [LOG2], 500, seed=1)


@pytest.fixture
def rbm():
    return RbmModel(d_v=4, d_h=2)


@pytest.fixture
def rbm_data(rbm):
    theta = np.random.default_rng(2).uniform(-1.0, 1.0, rbm.n_params)
    return sample_discrete_exact(rbm, theta, 400, seed=3)


@pytest.fixture
def flid():
    return FlidModel(V=4, L=2)


@pytest.fixture
def flid_data(flid):
    theta = np.random.default_rng(4).uniform(0.0, 1.0, flid.n_params)
    return sample_discrete_exact(flid, theta, 400, seed=5)


@pytest.fixture
def gengamma():
    return GenGammaModel()


@pytest.fixture
def gengamma_data():
    return sample_gengamma(1.3, 1.3, 400, seed=6)


@pytest.fixture
def two_state_data():
    """Poisson truncated to {0, 1} with 30 zeros and 70 ones"""
    return Dataset(np.array([0.0] * 30 + [1.0] * 70))


@pytest.fixture
def counts_csv():
    return os.path.join(DATA_DIR, "poisson_counts.csv")
