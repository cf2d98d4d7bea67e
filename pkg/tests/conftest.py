"""Shared test utilities: finite differences and cached datasets."""

import numpy as np
import pytest

from shrinknet.data import digits_datasets


def fd_grad(f, x, eps=1e-6):
    """Central-difference gradient of scalar f at array x."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.ravel()
    gflat = g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f(x)
        flat[i] = orig - eps
        lo = f(x)
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * eps)
    return g


def rel_err(approx, exact):
    """Worst-case relative error with an absolute floor for tiny entries."""
    approx = np.asarray(approx, dtype=np.float64)
    exact = np.asarray(exact, dtype=np.float64)
    scale = np.maximum(np.abs(exact), 1e-8)
    return float(np.max(np.abs(approx - exact) / scale))


@pytest.fixture(scope="session")
def digits_pair():
    """Small digit classification splits shared across tests."""
    return digits_datasets(n_train=2000, n_test=500, seed=0)
