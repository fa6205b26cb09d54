"""Shared fixtures and numeric helpers for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from pdeblocks import Field1D, make_grid


def sine_field(grid, mode=1, amp=1.0, phase=0.0):
    return Field1D(grid, amp * np.sin(2.0 * np.pi * mode * grid.x / grid.length + phase))


def rel_l2_arr(pred: np.ndarray, truth: np.ndarray) -> float:
    return float(np.linalg.norm(pred - truth) / np.linalg.norm(truth))


def fd_gradient_check(loss_fn, param: np.ndarray, grad: np.ndarray, rng,
                      n_coords: int = 20, eps: float = 1e-4,
                      tol: float = 1e-5) -> float:
    """Central finite differences on randomly chosen coordinates of param.

    loss_fn() must re-evaluate the scalar loss reading param in place.
    Returns the worst relative error; asserts it is within tol.
    """
    flat = param.ravel()
    gflat = grad.ravel()
    idx = rng.choice(flat.size, size=min(n_coords, flat.size), replace=False)
    worst = 0.0
    for i in idx:
        orig = flat[i]
        step = eps * max(1.0, abs(orig))
        flat[i] = orig + step
        up = loss_fn()
        flat[i] = orig - step
        down = loss_fn()
        flat[i] = orig
        fd = (up - down) / (2.0 * step)
        rel = abs(fd - gflat[i]) / max(abs(fd), abs(gflat[i]), 1e-8)
        worst = max(worst, rel)
    assert worst <= tol, f"worst finite-difference relative error {worst:.3e} > {tol:.1e}"
    return worst


@pytest.fixture
def grid32():
    return make_grid(32, 1.0)


@pytest.fixture
def grid128():
    return make_grid(128, 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
