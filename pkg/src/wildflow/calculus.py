"""Fourier-multiplier operators on the flat torus.

Every operator here is diagonal in Fourier space.  Symbols are evaluated on
the derivative wavenumbers of :class:`~wildflow.field.Grid`, so compositions
agree to rounding on fields without Nyquist content.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .field import Field, Grid, derive, ik, multiply, sup_norm

__all__ = [
    "MultiplierOp",
    "frac_laplacian",
    "inverse_laplacian",
    "hodge_project",
    "leray",
    "antidivergence",
    "antidivergence_symbol",
    "biot_savart",
    "sharp_codiff",
    "p1_symmetry_check",
    "random_band_limited",
    "identity_suite",
    "IDENTITIES",
]


@dataclass(frozen=True)
class MultiplierOp:
    """A scalar Fourier multiplier applied to every component.

    ``symbol(grid)`` returns an array on the half-spectrum grid;
    ``zero_mode`` fixes how the mean is treated.
    """

    name: str
    symbol: Callable[[Grid], np.ndarray]
    zero_mode: str = "annihilate"  # or "identity" / "error"
    calderon_zygmund: bool = False

    def __call__(self, f: Field) -> Field:
        g = f.grid
        m = np.array(self.symbol(g), dtype=complex, copy=True)
        zero = (0,) * g.d
        if self.zero_mode == "annihilate":
            m[zero] = 0.0
        elif self.zero_mode == "identity":
            m[zero] = 1.0
        elif self.zero_mode == "error":
            if np.any(np.abs(f.hat[(...,) + zero]) > 0):
                raise ValueError(f"{self.name}: input has a nonzero mean")
            m[zero] = 0.0
        return f.with_hat(f.hat * m)


def _frac_symbol(gamma: float, nu: float) -> Callable[[Grid], np.ndarray]:
    def sym(g: Grid) -> np.ndarray:
        return nu * (4 * np.pi**2 * g.k2) ** gamma

    return sym


def frac_laplacian(f: Field, gamma: float, nu: float = 1.0) -> Field:
    """``nu (-Delta)^gamma``: mode ``k`` scaled by ``nu (2 pi |k|)^(2 gamma)``."""
    if not 0 < gamma <= 1:
        raise ValueError(f"gamma must lie in (0, 1], got {gamma}")
    return MultiplierOp("frac_laplacian", _frac_symbol(gamma, nu))(f)


def _inv_lap_symbol(g: Grid) -> np.ndarray:
    k2 = g.k2
    with np.errstate(divide="ignore"):
        s = np.where(k2 > 0, 1.0 / (4 * np.pi**2 * np.where(k2 > 0, k2, 1.0)), 0.0)
    return s


def inverse_laplacian(f: Field) -> Field:
    """``(-Delta)^{-1}`` on the mean-zero part; the mean is annihilated."""
    return MultiplierOp("inverse_laplacian", _inv_lap_symbol)(f)


def _grad_part_hat(h: np.ndarray, g: Grid) -> np.ndarray:
    kv = g.deriv_modes
    kdot = sum(kv[j] * h[j] for j in range(g.d)) / np.where(g.k2 > 0, g.k2, 1.0)
    return np.stack([kv[j] * kdot for j in range(g.d)])


def hodge_project(v: Field) -> tuple[Field, Field, Field]:
    """Split ``v`` into gradient, solenoidal mean-zero and mean parts."""
    if v.order != 1:
        raise ValueError("Hodge projection needs a vector field or 1-form")
    g = v.grid
    h = v.hat
    p1 = _grad_part_hat(h, g)
    p3 = np.zeros_like(h)
    zero = (slice(None),) + (0,) * g.d
    p3[zero] = h[zero]
    p1[zero] = 0.0
    p2 = h - p1 - p3
    return v.with_hat(p1), v.with_hat(p2), v.with_hat(p3)


def leray(v: Field) -> Field:
    """Divergence-free part (solenoidal plus mean)."""
    g = v.grid
    h = v.hat
    p1 = _grad_part_hat(h, g)
    p1[(slice(None),) + (0,) * g.d] = 0.0
    return v.with_hat(h - p1)


def antidivergence_symbol(g: Grid) -> np.ndarray:
    """Mode-wise tensor ``S[i, j, k]`` with ``(R v)_ij = S_ijk v_k`` in Fourier space.

    Built from the kernel ``-(d-2)/(d-1) Lap^-2 d_i d_j d_k
    - 1/(d-1) Lap^-1 d_k delta_ij + Lap^-1 d_i delta_jk + Lap^-1 d_j delta_ik``
    with ``d_j -> 2 pi i k_j`` and ``Lap -> -4 pi^2 |k|^2``.
    """
    d = g.d
    k2 = np.where(g.k2 > 0, g.k2, 1.0)
    lap = -4 * np.pi**2 * k2
    dj = [ik(g, j) for j in range(d)]
    S = np.zeros((d, d, d) + g.hat_shape, dtype=complex)
    c3 = -(d - 2) / (d - 1)
    for i in range(d):
        for j in range(d):
            for k in range(d):
                val = c3 * dj[i] * dj[j] * dj[k] / lap**2
                if i == j:
                    val = val - dj[k] / lap / (d - 1)
                if j == k:
                    val = val + dj[i] / lap
                if i == k:
                    val = val + dj[j] / lap
                S[i, j, k] = np.broadcast_to(val, g.hat_shape)
    S[(...,) + (0,) * d] = 0.0
    return S


_SYMBOL_CACHE: dict = {}


def _antidiv_sym(g: Grid) -> np.ndarray:
    if g not in _SYMBOL_CACHE:
        s = antidivergence_symbol(g)
        s.setflags(write=False)
        _SYMBOL_CACHE[g] = s
    return _SYMBOL_CACHE[g]


def antidivergence(v: Field) -> Field:
    """Symmetric trace-free ``R v`` with ``div R v = v - mean v``."""
    if v.order != 1:
        raise ValueError("antidivergence needs a vector field")
    S = _antidiv_sym(v.grid)
    h = np.einsum("ijk...,k...->ij...", S, v.hat)
    return Field.from_hat(v.grid, "tensor2", h, v.t)


def biot_savart(v: Field) -> Field:
    """2-form potential ``(-Delta)^{-1} d v``."""
    if v.order != 1:
        raise ValueError("Biot-Savart needs a vector field")
    z = derive(Field.from_hat(v.grid, "form1", v.hat, v.t), "ext_d")
    return z.with_hat(z.hat * _inv_lap_symbol(v.grid))


def sharp_codiff(z: Field) -> Field:
    """``sharp delta z`` for a 2-form, returned as a vector field."""
    w = derive(z, "codiff")
    return Field.from_hat(z.grid, "vector", w.hat, z.t)


def wiener_norm(f: Field) -> float:
    """Sum of Fourier coefficient moduli, an upper bound for the sup norm."""
    w = f.grid.rfft_weights
    a = np.abs(f.hat)
    if f.order:
        a = np.sqrt(np.sum(a.reshape((-1,) + f.grid.hat_shape) ** 2, axis=0))
    return float(np.sum(w * a))


def divergence_size(v: Field) -> float:
    return wiener_norm(derive(v, "div"))


def p1_symmetry_check(X: Field, Y: Field, tol: float = 1e-8) -> float:
    """``|| P1(X . grad Y) - P1(Y . grad X) ||_0`` for solenoidal ``X``, ``Y``.

    Inputs whose divergence exceeds ``tol`` times their gradient scale are
    rejected.
    """
    for name, F in (("X", X), ("Y", Y)):
        scale = max(1.0, 2 * np.pi * wiener_norm(F.with_hat(F.hat * np.sqrt(F.grid.k2))))
        dv = divergence_size(F)
        if dv > tol * scale:
            raise ValueError(f"{name} is not divergence-free: |div {name}|_0 = {dv:.3e}")
    # P1 is linear, so project the difference once
    a, b = multiply(X, Y, "advect"), multiply(Y, X, "advect")
    return sup_norm(hodge_project(a.with_hat(a.hat - b.hat))[0])


def random_band_limited(grid: Grid, rank: str, kmax: int, rng: np.random.Generator) -> Field:
    """Real field with random Fourier data on ``|k|_inf <= kmax``, scaled to sup norm 1."""
    comps = {"scalar": (), "vector": (grid.d,), "form1": (grid.d,), "tensor2": (grid.d, grid.d)}[rank]
    m = np.ones(grid.hat_shape, dtype=bool)
    for k in grid.modes:
        m &= np.abs(k) <= kmax
    h = np.zeros(comps + grid.hat_shape, dtype=complex)
    cnt = int(m.sum())
    h[..., m] = rng.normal(size=comps + (cnt,)) + 1j * rng.normal(size=comps + (cnt,))
    f = Field(grid, rank, Field.from_hat(grid, rank, h).values)
    return f * (1.0 / sup_norm(f))


IDENTITIES = ("hodge_sum", "div_antidiv", "antidiv_symmetric", "antidiv_tracefree", "codiff_biot_savart", "p1_symmetry")


def identity_suite(n: int = 64, samples: int = 50, seed: int = 0, d: int = 3) -> list[dict]:
    """Residuals of the operator identities on random band-limited fields.

    Each row holds ``sample``, ``identity`` and ``residual``, an upper bound
    for the sup norm of the defect; inputs have sup norm 1.  Product identities use ``kmax = n // 6`` so the
    dealiased products are exact.
    """
    g = Grid(d, n)
    rng = np.random.default_rng(seed)
    kmax = max(1, n // 6)
    rows = []
    def bound(h: np.ndarray, rank: str) -> float:
        # the Wiener norm bounds the sup norm and needs no inverse transform
        return wiener_norm(Field.from_hat(g, rank, h))

    for s in range(samples):
        v = random_band_limited(g, "vector", kmax, rng)
        p1, p2, p3 = hodge_project(v)
        res = {"hodge_sum": bound(p1.hat + p2.hat + p3.hat - v.hat, "vector")}
        R = antidivergence(v)
        dv = derive(R, "div").hat - v.hat
        dv[(...,) + (0,) * d] = 0.0
        res["div_antidiv"] = bound(dv, "vector")
        res["antidiv_symmetric"] = bound(R.hat - np.swapaxes(R.hat, 0, 1), "tensor2")
        res["antidiv_tracefree"] = bound(np.trace(R.hat), "scalar")
        res["codiff_biot_savart"] = bound(sharp_codiff(biot_savart(v)).hat - p2.hat, "vector")
        X = leray(random_band_limited(g, "vector", kmax, rng))
        Y = leray(random_band_limited(g, "vector", kmax, rng))
        res["p1_symmetry"] = p1_symmetry_check(X, Y)
        for name in IDENTITIES:
            rows.append({"sample": s, "identity": name, "residual": float(res[name])})
    return rows
