"""Differentiable stand-ins for sign(x) used in the backward pass.

Forward is always exactly sign (with sign(0) = +1); the surrogate only
defines the derivative used during training:

* ``clip_ste``: F(x) = clip(-1, x, 1), derivative 1 on |x| < 1, else 0.
* ``approx_sign2``: piecewise second-order polynomial, triangular derivative
  2 - 2|x| on [-1, 1).
* ``approx_sign3``: piecewise third-order polynomial, quadratic derivative
  3(1 - |x|)^2 on [-1, 1).

Knots use right-limit branch values (half-open intervals).
"""

from __future__ import annotations

import enum

import numpy as np


class SurrogateKind(enum.Enum):
    CLIP_STE = "clip_ste"
    APPROX_SIGN2 = "approx_sign2"
    APPROX_SIGN3 = "approx_sign3"


def sign(x: np.ndarray) -> np.ndarray:
    """Hard sign with sign(0) = +1, preserving dtype."""
    x = np.asarray(x)
    return np.where(x >= 0, 1.0, -1.0).astype(x.dtype, copy=False)


def surrogate_primitive(x, kind: SurrogateKind) -> np.ndarray:
    """The approximation F itself. F(-1) = -1, F(1) = 1, monotone, |F| <= 1."""
    x = np.asarray(x, dtype=np.float64) if np.isscalar(x) else np.asarray(x)
    if kind is SurrogateKind.CLIP_STE:
        return np.clip(x, -1.0, 1.0)
    if kind is SurrogateKind.APPROX_SIGN2:
        branches = [-1.0, 2.0 * x + x * x, 2.0 * x - x * x, 1.0]
    elif kind is SurrogateKind.APPROX_SIGN3:
        branches = [-1.0, (x + 1.0) ** 3 - 1.0, (x - 1.0) ** 3 + 1.0, 1.0]
    else:
        raise ValueError(f"unknown surrogate kind: {kind!r}")
    conds = [x < -1.0, (x >= -1.0) & (x < 0.0), (x >= 0.0) & (x < 1.0), x >= 1.0]
    return np.select(conds, branches)


def surrogate_derivative(x, kind: SurrogateKind) -> np.ndarray:
    """dF/dx: zero outside [-1, 1), right-limit branch at the knots."""
    x = np.asarray(x, dtype=np.float64) if np.isscalar(x) else np.asarray(x)
    inside = (x >= -1.0) & (x < 1.0)
    if kind is SurrogateKind.CLIP_STE:
        return np.where(np.abs(x) < 1.0, 1.0, 0.0)
    if kind is SurrogateKind.APPROX_SIGN2:
        d = np.where(x < 0, 2.0 + 2.0 * x, 2.0 - 2.0 * x)
    elif kind is SurrogateKind.APPROX_SIGN3:
        d = np.where(x < 0, 3.0 * (x + 1.0) ** 2, 3.0 * (x - 1.0) ** 2)
    else:
        raise ValueError(f"unknown surrogate kind: {kind!r}")
    return np.where(inside, d, 0.0)
