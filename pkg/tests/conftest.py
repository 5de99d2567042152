import numpy as np
import pytest

from jacksonflow import operators as ops
from jacksonflow.fields import PathField


def piecewise_linear(rng, M, dt, T=1.0, n_knots=4, scale=1.0, start_nonneg=True):
    """Random piecewise-linear paths with kinks at grid times."""
    K = int(round(T / dt))
    t = np.arange(K + 1) * dt
    knots = np.unique(np.concatenate([[0, K], rng.integers(1, K, n_knots)]))
    vals = rng.normal(0.0, scale, (M, knots.size))
    if start_nonneg:
        vals[:, 0] = np.abs(vals[:, 0])
    X = np.vstack([np.interp(t, t[knots], v) for v in vals])
    return PathField(X, dt)


def random_substochastic(rng, N, max_row=0.95, density=0.7):
    P = rng.uniform(0, 1, (N, N)) * (rng.uniform(0, 1, (N, N)) < density)
    rows = P.sum(axis=1, keepdims=True)
    target = rng.uniform(0, max_row, (N, 1))
    P = np.where(rows > 0, P / np.where(rows > 0, rows, 1) * target, 0.0)
    return P


def random_blockwise(rng, n, scale=1.0, density=0.6):
    grid = rng.uniform(0, scale, (n, n)) * (rng.uniform(0, 1, (n, n)) < density)
    return ops.Kernel("blockwise", grid=grid)


def swap_kernel(mass=0.5):
    """Two cells, each sending ``mass`` to the other."""
    return ops.from_matrix([[0.0, mass], [mass, 0.0]])


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
