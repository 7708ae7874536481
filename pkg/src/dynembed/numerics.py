"""Shared scalar/array numeric kernels.

Everything here must be overflow-safe across the full float64 range;
both the differentiation tape and the plain-numpy inference paths call
these kernels so that the two paths produce bit-identical values.
"""
from __future__ import annotations

import math

import numpy as np

# Smallest positive subnormal.  Intensities are clamped here so they stay
# strictly positive even when the compatibility score is ~ -1e3, where the
# unclamped softplus underflows to exactly 0.0.
TINY = 5e-324


def sigmoid(x):
    """Logistic function, stable for large |x|; scalar in, scalar out."""
    if np.ndim(x) == 0:
        x = float(x)
        if x >= 0.0:
            return 1.0 / (1.0 + math.exp(-x))
        e = math.exp(x)
        return e / (1.0 + e)
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def softplus(x):
    """log(1 + exp(x)) without overflow."""
    return np.logaddexp(0.0, x)


def inverse_softplus(y: float) -> float:
    """Solve softplus(x) = y for y > 0."""
    if y <= 0.0:
        raise ValueError("inverse_softplus needs a positive argument")
    # log(exp(y) - 1), stable for both tails
    if y > 30.0:
        return y
    return math.log(math.expm1(y))


def scaled_softplus(x, psi):
    """psi * log(1 + exp(x / psi)), clamped away from exact zero.

    The clamp keeps the value a valid point-process rate (strictly
    positive) for arbitrarily negative x.
    """
    out = psi * np.logaddexp(0.0, np.asarray(x, dtype=np.float64) / psi)
    return np.maximum(out, TINY)


def scaled_softplus_grads(x: float, psi: float) -> tuple[float, float]:
    """Partial derivatives of ``scaled_softplus`` w.r.t. x and psi."""
    u = x / psi
    s = sigmoid(u)
    # d/dx [psi * sp(x/psi)] = sigmoid(x/psi)
    # d/dpsi              = sp(u) - u * sigmoid(u)
    return s, float(np.logaddexp(0.0, u)) - u * s


def softmax(x: np.ndarray) -> np.ndarray:
    """Shift-invariant softmax of a 1-D array."""
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(x - np.max(x))
    return e / np.sum(e)
