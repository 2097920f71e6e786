"""Shared test utilities: finite differences and random instance builders."""

import numpy as np
import pytest

from mixmnl.model import AgentData, ChoiceDataset, PopulationParams


def fd_grad(f, x, h=1e-6):
    """Central-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2.0 * h)
    return g


def fd_hess_diag(f, x, h=1e-3):
    """Five-point central second differences along each coordinate."""
    x = np.asarray(x, dtype=float)
    d = np.zeros_like(x)
    f0 = f(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        d[i] = (-f(x + 2 * e) + 16.0 * f(x + e) - 30.0 * f0
                + 16.0 * f(x - e) - f(x - 2 * e)) / (12.0 * h**2)
    return d


def rel_err(approx_val, exact_val, floor=1.0):
    """Sup-norm error relative to the larger of the exact scale and ``floor``."""
    approx_val = np.asarray(approx_val, dtype=float)
    exact_val = np.asarray(exact_val, dtype=float)
    scale = max(float(np.abs(exact_val).max()), floor)
    return float(np.abs(approx_val - exact_val).max()) / scale


def random_spd(rng, K, scale=1.0):
    a = rng.normal(0.0, scale, (K, K))
    return a @ a.T + scale * np.eye(K)


def random_lower(rng, K, diag_low=0.3, diag_high=1.2):
    m = np.tril(rng.normal(0.0, 0.3, (K, K)), -1)
    m[np.diag_indices(K)] = rng.uniform(diag_low, diag_high, K)
    return m


def random_agent(rng, J, K, T):
    xs = rng.normal(0.0, 1.0, (T, J, K))
    ys = rng.integers(0, J, T)
    return AgentData(xs, ys)


def random_dataset(rng, H, J, K, T):
    return ChoiceDataset([random_agent(rng, J, K, T) for _ in range(H)], J, K)


def random_population(rng, K, scale=0.5):
    return PopulationParams(rng.normal(0.0, 1.0, K), random_spd(rng, K, scale))


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
