"""Shared test helpers: central finite-difference gradient checking."""

import numpy as np


def fd_grad(func, arr, h=1e-5):
    """Central-difference gradient of scalar func() w.r.t. arr (in place)."""
    g = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        orig = arr[i]
        arr[i] = orig + h
        fp = func()
        arr[i] = orig - h
        fm = func()
        arr[i] = orig
        g[i] = (fp - fm) / (2.0 * h)
    return g


def rel_err(a, b, floor=1e-8):
    denom = np.maximum(np.abs(a) + np.abs(b), floor)
    return float((np.abs(a - b) / denom).max())


def check_grads(func, arrays, grads, h=1e-5, tol=1e-6):
    """Assert every analytic gradient matches finite differences."""
    for arr, g in zip(arrays, grads):
        fd = fd_grad(func, arr, h)
        err = rel_err(fd, g)
        assert err < tol, f"gradient mismatch: rel err {err} >= {tol}"
