"""Smooth time ramps and the cutoffs built from them.

The base ramp is ``r(s) = int_0^s phi / int_0^1 phi`` with
``phi(s) = exp(-1/(s(1-s)))`` on ``(0, 1)``; it is 0 for ``s <= 0``, 1 for
``s >= 1`` and flat to infinite order at both ends.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from numpy.polynomial import Polynomial

__all__ = ["ramp", "ramp_derivative", "window", "ramp_down"]

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(96)


def _phi(s: np.ndarray) -> np.ndarray:
    out = np.zeros_like(s)
    m = (s > 0) & (s < 1)
    out[m] = np.exp(-1.0 / (s[m] * (1.0 - s[m])))
    return out


def _integral(s: np.ndarray) -> np.ndarray:
    """``int_0^s phi`` for ``0 <= s <= 1/2`` by Gauss-Legendre."""
    u = 0.5 * s[..., None] * (_GL_NODES + 1.0)
    return 0.5 * s * np.sum(_GL_WEIGHTS * _phi(u), axis=-1)


_Z = 2.0 * float(_integral(np.array(0.5)))


def ramp(s) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    out = np.where(s >= 1.0, 1.0, 0.0)
    lo = (s > 0) & (s <= 0.5)
    hi = (s > 0.5) & (s < 1.0)
    out[lo] = _integral(s[lo]) / _Z
    out[hi] = 1.0 - _integral(1.0 - s[hi]) / _Z
    return out


@lru_cache(maxsize=None)
def _numerator(m: int) -> Polynomial:
    """``p_m`` with ``phi^(m) = phi p_m / (s(1-s))^(2m)``."""
    q = Polynomial([0.0, 1.0, -1.0])
    dq = q.deriv()
    p = Polynomial([1.0])
    for j in range(m):
        p = p.deriv() * q * q - 2 * j * q * dq * p + dq * p
    return p


def ramp_derivative(s, m: int) -> np.ndarray:
    """``d^m r / ds^m``; ``m = 0`` returns the ramp itself."""
    if m == 0:
        return ramp(s)
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = (s > 0) & (s < 1)
    x = s[inside]
    k = m - 1
    out[inside] = np.exp(-1.0 / (x * (1 - x))) * _numerator(k)(x) / (x * (1 - x)) ** (2 * k) / _Z
    return out


def window(t, start: float, width: float, m: int = 0) -> np.ndarray:
    """``m``-th derivative of ``1 on [start+width, ...)`` rising over ``[start, start+width]``."""
    s = (np.asarray(t, dtype=float) - start) / width
    return ramp_derivative(s, m) / width**m


def ramp_down(t, start: float, width: float, m: int = 0) -> np.ndarray:
    """``m``-th derivative of ``1 - window(t, start, width)``."""
    w = window(t, start, width, m)
    return 1.0 - w if m == 0 else -w
