"""Shared test helpers: finite-difference oracles and small stub denoisers."""

import numpy as np

from motionedit import autodiff as ad


def fd_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar-valued f at x."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = grad.reshape(-1)
    xf = x.reshape(-1)
    for i in range(xf.size):
        bumped = xf.copy()
        bumped[i] = xf[i] + h
        hi = f(bumped.reshape(x.shape))
        bumped[i] = xf[i] - h
        lo = f(bumped.reshape(x.shape))
        flat[i] = (hi - lo) / (2.0 * h)
    return grad


def rel_err(a: np.ndarray, b: np.ndarray, eps: float = 1e-12) -> float:
    a, b = np.asarray(a), np.asarray(b)
    return float(np.abs(a - b).max() / (np.abs(b).max() + eps))


class ScaleStub:
    """Denoiser stub eps(x, t) = k * x; elementwise and condition-free."""

    def __init__(self, k: float):
        self.k = k

    def predict(self, x, t):
        return ad.smul(ad.as_tensor(x), self.k)


class ConstStub:
    """Denoiser stub eps(x, t) = c everywhere."""

    def __init__(self, c: float, shape):
        self.c = np.full(shape, float(c))

    def predict(self, x, t):
        return ad.add(ad.smul(ad.as_tensor(x), 0.0), ad.constant(self.c))


class ZeroStub:
    def predict(self, x, t):
        return ad.smul(ad.as_tensor(x), 0.0)
