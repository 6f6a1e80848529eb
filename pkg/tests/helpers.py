"""Shared test oracles: finite differences and tolerance conventions."""

from __future__ import annotations

import numpy as np

FD_STEP = 1e-4
GRAD_RTOL = 1e-5
GRAD_FLOOR = 1e-8


def fd_gradient(f, array: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Central finite-difference gradient of the scalar ``f()`` with respect
    to ``array``, perturbing it in place one entry at a time."""
    grad = np.zeros_like(array)
    flat = array.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + h
        up = f()
        flat[i] = saved - h
        down = f()
        flat[i] = saved
        gflat[i] = (up - down) / (2.0 * h)
    return grad


def assert_grad_close(analytic: np.ndarray, numeric: np.ndarray) -> None:
    """Componentwise relative tolerance 1e-5 with absolute floor 1e-8."""
    np.testing.assert_allclose(analytic, numeric, rtol=GRAD_RTOL, atol=GRAD_FLOOR)


def fd_gradient_sampled(f, array: np.ndarray, coords, h: float = FD_STEP) -> np.ndarray:
    """Finite differences at selected flat coordinates only (for big models)."""
    flat = array.ravel()
    out = np.zeros(len(coords))
    for j, i in enumerate(coords):
        saved = flat[i]
        flat[i] = saved + h
        up = f()
        flat[i] = saved - h
        down = f()
        flat[i] = saved
        out[j] = (up - down) / (2.0 * h)
    return out
