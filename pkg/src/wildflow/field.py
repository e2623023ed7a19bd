"""Periodic fields on the unit torus sampled on a uniform grid.

Samples live on ``[0, 1)^d`` with ``n`` points per axis; array axis ``i`` is
the coordinate ``x_{i+1}``.  The Fourier mirror is ``rfftn`` over the spatial
axes divided by ``n^d`` so that a constant ``c`` has a single mode of value
``c``.  Modes on a Nyquist plane are treated as unresolved by the derivative
symbols (their first-derivative symbol is zero), which keeps every operator
real and all operator identities exact on fields without Nyquist content.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import cached_property, lru_cache

import numpy as np
from numpy.typing import ArrayLike
from scipy import fft as sfft

__all__ = [
    "Grid",
    "Field",
    "HolderNorm",
    "transform",
    "derive",
    "multiply",
    "holder_norm",
    "mollify",
    "mollifier_symbol",
    "sup_norm",
]

_RANK_COMPONENTS = {"scalar": 0, "vector": 1, "tensor2": 2}


def _rank_order(rank: str) -> int:
    if rank in _RANK_COMPONENTS:
        return _RANK_COMPONENTS[rank]
    if rank.startswith("form"):
        return int(rank[4:])
    raise ValueError(f"unknown rank {rank!r}")


def form_rank(k: int) -> str:
    return f"form{k}"


@dataclass(frozen=True)
class Grid:
    d: int
    n: int

    def __post_init__(self):
        if self.n < 8 or self.n & (self.n - 1):
            raise ValueError(f"grid size must be a power of two >= 8, got {self.n}")
        if self.d < 1:
            raise ValueError("dimension must be positive")

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.d

    @property
    def spacing(self) -> float:
        return 1.0 / self.n

    @property
    def hat_shape(self) -> tuple[int, ...]:
        return (self.n,) * (self.d - 1) + (self.n // 2 + 1,)

    def coords(self) -> list[np.ndarray]:
        """Broadcastable coordinate arrays ``x_1 .. x_d``."""
        x = np.arange(self.n) / self.n
        out = []
        for i in range(self.d):
            shp = [1] * self.d
            shp[i] = self.n
            out.append(x.reshape(shp))
        return out

    def mesh(self) -> list[np.ndarray]:
        return [np.broadcast_to(c, self.shape) for c in self.coords()]

    @cached_property
    def modes(self) -> list[np.ndarray]:
        """Integer wavenumbers per axis in the ``rfftn`` layout, Nyquist as ``+n/2``."""
        n = self.n
        out = []
        for i in range(self.d):
            if i == self.d - 1:
                k = np.arange(n // 2 + 1, dtype=float)
            else:
                k = np.fft.fftfreq(n, 1.0 / n)
                k[n // 2] = n / 2
            shp = [1] * self.d
            shp[i] = k.size
            out.append(k.reshape(shp))
        return out

    @cached_property
    def deriv_modes(self) -> list[np.ndarray]:
        """Wavenumbers used by derivative symbols (Nyquist entries zeroed)."""
        out = []
        for k in self.modes:
            kk = k.copy()
            kk[np.abs(kk) == self.n / 2] = 0.0
            out.append(kk)
        return out

    @cached_property
    def k2(self) -> np.ndarray:
        """``|k|^2`` built from the derivative wavenumbers."""
        return sum(k * k for k in self.deriv_modes)

    @cached_property
    def zero_mask(self) -> np.ndarray:
        return np.broadcast_to(self.k2 == 0, self.hat_shape)

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        kmax = (self.n - 1) // 3
        m = np.ones(self.hat_shape, dtype=bool)
        for k in self.modes:
            m = m & (np.abs(k) <= kmax)
        return m

    @cached_property
    def rfft_weights(self) -> np.ndarray:
        """Multiplicity of each stored half-spectrum mode (for Parseval sums)."""
        w = np.full(self.n // 2 + 1, 2.0)
        w[0] = 1.0
        w[-1] = 1.0
        shp = [1] * self.d
        shp[-1] = w.size
        return np.broadcast_to(w.reshape(shp), self.hat_shape)


def _fwd(values: np.ndarray, d: int) -> np.ndarray:
    axes = tuple(range(-d, 0))
    return sfft.rfftn(values, axes=axes, norm="forward")


def _inv(hat: np.ndarray, grid: Grid) -> np.ndarray:
    axes = tuple(range(-grid.d, 0))
    return sfft.irfftn(hat, s=grid.shape, axes=axes, norm="forward")


class Field:
    """Real samples of a scalar, vector, (2,0)-tensor or k-form.

    Component axes come first: a vector has shape ``(d, n, ..., n)``, a
    tensor or 2-form ``(d, d, n, ..., n)``.  Forms are stored as dense
    antisymmetric arrays.  Instances are treated as immutable.
    """

    __slots__ = ("grid", "rank", "t", "_values", "_hat")

    def __init__(self, grid: Grid, rank: str, values=None, t: float = 0.0, hat=None):
        self.grid = grid
        self.rank = rank
        self.t = float(t)
        order = _rank_order(rank)
        expect = (grid.d,) * order
        if values is None and hat is None:
            raise ValueError("need samples or Fourier coefficients")
        if values is not None:
            values = np.asarray(values, dtype=float)
            if values.shape != expect + grid.shape:
                raise ValueError(f"{rank} field needs shape {expect + grid.shape}, got {values.shape}")
            values.setflags(write=False)
        if hat is not None:
            hat = np.asarray(hat, dtype=complex)
            if hat.shape != expect + grid.hat_shape:
                raise ValueError(f"{rank} spectrum needs shape {expect + grid.hat_shape}, got {hat.shape}")
            hat.setflags(write=False)
        self._values = values
        self._hat = hat
        if rank.startswith("form") and order >= 2 and values is not None:
            _check_antisymmetric(values, order)

    # construction helpers
    @classmethod
    def from_hat(cls, grid: Grid, rank: str, hat, t: float = 0.0) -> "Field":
        return cls(grid, rank, hat=hat, t=t)

    @classmethod
    def zeros(cls, grid: Grid, rank: str, t: float = 0.0) -> "Field":
        order = _rank_order(rank)
        return cls(grid, rank, np.zeros((grid.d,) * order + grid.shape), t=t)

    @classmethod
    def from_function(cls, grid: Grid, rank: str, fn, t: float = 0.0) -> "Field":
        """Sample ``fn(*coords)``; vectors return a list of component arrays."""
        vals = np.asarray(fn(*grid.mesh()), dtype=float)
        order = _rank_order(rank)
        vals = np.broadcast_to(vals, (grid.d,) * order + grid.shape).copy()
        return cls(grid, rank, vals, t=t)

    @property
    def values(self) -> np.ndarray:
        if self._values is None:
            v = _inv(self._hat, self.grid)
            v.setflags(write=False)
            self._values = v
        return self._values

    @property
    def hat(self) -> np.ndarray:
        if self._hat is None:
            h = _fwd(self._values, self.grid.d)
            h.setflags(write=False)
            self._hat = h
        return self._hat

    @property
    def order(self) -> int:
        return _rank_order(self.rank)

    @property
    def has_hat(self) -> bool:
        return self._hat is not None

    def with_values(self, values, rank: str | None = None, t: float | None = None) -> "Field":
        return Field(self.grid, rank or self.rank, values, t=self.t if t is None else t)

    def with_hat(self, hat, rank: str | None = None, t: float | None = None) -> "Field":
        return Field(self.grid, rank or self.rank, hat=hat, t=self.t if t is None else t)

    def mean(self) -> np.ndarray:
        return self.hat[(...,) + (0,) * self.grid.d].real.copy()

    def component(self, *idx) -> np.ndarray:
        return self.values[idx]

    def __add__(self, other: "Field") -> "Field":
        _same(self, other)
        return self.with_values(self.values + other.values)

    def __sub__(self, other: "Field") -> "Field":
        _same(self, other)
        return self.with_values(self.values - other.values)

    def __mul__(self, c: float) -> "Field":
        return self.with_values(self.values * float(c))

    __rmul__ = __mul__

    def __neg__(self) -> "Field":
        return self.with_values(-self.values)

    def __repr__(self) -> str:
        return f"Field(rank={self.rank}, d={self.grid.d}, n={self.grid.n}, t={self.t})"


def _same(f: Field, g: Field) -> None:
    if f.grid != g.grid or f.rank != g.rank:
        raise ValueError(f"incompatible fields: {f!r} vs {g!r}")


def _check_antisymmetric(values: np.ndarray, order: int) -> None:
    for i, j in itertools.combinations(range(order), 2):
        sw = np.swapaxes(values, i, j)
        scale = max(1.0, float(np.max(np.abs(values))))
        if np.max(np.abs(values + sw)) > 1e-10 * scale:
            raise ValueError("form components are not antisymmetric")


def sup_norm(f: Field | np.ndarray, order: int | None = None) -> float:
    """Grid maximum of the pointwise Frobenius norm over component axes."""
    if isinstance(f, Field):
        v, order = f.values, f.order
    else:
        v = np.asarray(f)
        order = 0 if order is None else order
    if order == 0:
        return float(np.max(np.abs(v)))
    flat = v.reshape((-1,) + v.shape[order:])
    return float(np.sqrt(np.max(np.einsum("i...,i...->...", flat, flat))))


# ---------------------------------------------------------------------------
# transforms and derivatives


def transform(f: Field, direction: str) -> Field:
    """Return a copy whose Fourier mirror (``to_fourier``) or samples (``to_physical``) are filled."""
    if direction not in ("to_fourier", "to_physical"):
        raise ValueError(f"unknown direction {direction!r}")
    return Field(f.grid, f.rank, f.values, t=f.t, hat=f.hat)


def inner_l2(f: Field, g: Field) -> float:
    """``int f . g`` over the torus computed from the Fourier mirrors."""
    _same(f, g)
    w = f.grid.rfft_weights
    return float(np.sum(w * (f.hat * np.conj(g.hat)).real))


def ik(grid: Grid, j: int) -> np.ndarray:
    """Symbol of ``d/dx_j``."""
    return 2j * np.pi * grid.deriv_modes[j]


def _partial_hat(hat: np.ndarray, grid: Grid, j: int) -> np.ndarray:
    return hat * ik(grid, j)


def _d_form(hat: np.ndarray, grid: Grid, k: int) -> np.ndarray:
    d = grid.d
    out = np.zeros((d,) * (k + 1) + grid.hat_shape, dtype=complex)
    for idx in itertools.product(range(d), repeat=k + 1):
        if len(set(idx)) < k + 1:
            continue
        acc = 0
        for m in range(k + 1):
            rest = idx[:m] + idx[m + 1:]
            term = _partial_hat(hat[rest], grid, idx[m]) if k else _partial_hat(hat, grid, idx[m])
            acc = acc + (term if m % 2 == 0 else -term)
        out[idx] = acc
    return out


def _codiff_form(hat: np.ndarray, grid: Grid, k: int) -> np.ndarray:
    d = grid.d
    out = np.zeros((d,) * (k - 1) + grid.hat_shape, dtype=complex)
    for j in range(d):
        out -= _partial_hat(hat[j], grid, j)
    return out


def derive(f: Field, op: str) -> Field:
    """Spectral derivative: ``grad``, ``div``, ``ext_d``, ``codiff`` or ``laplacian``.

    ``grad`` of a vector is the Jacobian ``G[i, j] = d_j v_i``; ``div`` of a
    tensor contracts the first index, ``(div T)_i = d_j T[j, i]``.
    """
    g = f.grid
    h = f.hat
    d = g.d
    if op == "laplacian":
        return f.with_hat(h * (-4 * np.pi**2 * g.k2))
    if op == "grad":
        if f.order == 0:
            return Field.from_hat(g, "vector", np.stack([_partial_hat(h, g, j) for j in range(d)]), f.t)
        if f.rank == "vector" or f.rank == "form1":
            jac = np.stack([np.stack([_partial_hat(h[i], g, j) for j in range(d)]) for i in range(d)])
            return Field.from_hat(g, "tensor2", jac, f.t)
        raise ValueError(f"grad not defined for rank {f.rank}")
    if op == "div":
        if f.rank in ("vector", "form1"):
            return Field.from_hat(g, "scalar", sum(_partial_hat(h[j], g, j) for j in range(d)), f.t)
        if f.rank == "tensor2":
            out = np.stack([sum(_partial_hat(h[j, i], g, j) for j in range(d)) for i in range(d)])
            return Field.from_hat(g, "vector", out, f.t)
        raise ValueError(f"div needs a vector or tensor, got {f.rank}")
    if op == "ext_d":
        if f.rank == "scalar" or f.rank.startswith("form") or f.rank == "vector":
            k = f.order
            if k >= d:
                return Field.from_hat(g, form_rank(k + 1), np.zeros((d,) * (k + 1) + g.hat_shape, complex), f.t)
            return Field.from_hat(g, form_rank(k + 1), _d_form(h, g, k), f.t)
        raise ValueError(f"ext_d needs a form, got {f.rank}")
    if op == "codiff":
        if f.rank.startswith("form") or f.rank == "vector":
            k = f.order
            if k == 0:
                raise ValueError("codifferential of a 0-form vanishes; nothing to return")
            rank = "scalar" if k == 1 else form_rank(k - 1)
            return Field.from_hat(g, rank, _codiff_form(h, g, k), f.t)
        raise ValueError(f"codiff needs a form, got {f.rank}")
    raise ValueError(f"unknown derivative {op!r}")


# ---------------------------------------------------------------------------
# products


def dealias(f: Field) -> Field:
    return f.with_hat(f.hat * f.grid.dealias_mask)


def multiply(f: Field, g: Field, contraction: str = "scalar") -> Field:
    """Pointwise product with two-thirds-rule dealiasing.

    Patterns: ``scalar`` (f scalar, g any), ``outer`` (vector x vector),
    ``advect`` (``(f . grad) g`` for vector f), ``double`` (``T : S``),
    ``interior`` (vector f into the first slot of g), ``dot`` (vector . vector).
    """
    if f.grid != g.grid:
        raise ValueError("fields live on different grids")
    grid = f.grid
    fv = dealias(f).values
    if contraction == "scalar":
        if f.order != 0:
            raise ValueError("scalar product needs a scalar left factor")
        out = fv * dealias(g).values
        rank = g.rank
    elif contraction == "outer":
        if f.order != 1 or g.order != 1:
            raise ValueError("outer product needs two vectors")
        gv = dealias(g).values
        out = fv[:, None] * gv[None, :]
        rank = "tensor2"
    elif contraction == "dot":
        if f.order != 1 or g.order != 1:
            raise ValueError("dot product needs two vectors")
        out = np.sum(fv * dealias(g).values, axis=0)
        rank = "scalar"
    elif contraction == "advect":
        if f.order != 1:
            raise ValueError("advecting field must be a vector")
        gg = dealias(g)
        out = 0
        for j in range(grid.d):
            dj = Field.from_hat(grid, g.rank, gg.hat * ik(grid, j)).values
            out = out + fv[j] * dj
        rank = g.rank
    elif contraction == "double":
        if f.order != 2 or g.order != 2:
            raise ValueError("double contraction needs two rank-2 fields")
        out = np.einsum("ij...,ij...->...", fv, dealias(g).values)
        rank = "scalar"
    elif contraction == "interior":
        if f.order != 1 or g.order < 1:
            raise ValueError("interior product needs a vector and a form/tensor")
        out = np.einsum("i...,i...->...", fv, dealias(g).values)
        rank = "scalar" if g.order == 1 else ("vector" if g.rank == "tensor2" else form_rank(g.order - 1))
    else:
        raise ValueError(f"unknown contraction {contraction!r}")
    res = Field(grid, rank, np.asarray(out, dtype=float), t=f.t)
    return res.with_hat(res.hat * grid.dealias_mask)


# ---------------------------------------------------------------------------
# Hölder norms


@dataclass(frozen=True)
class HolderNorm:
    N: int
    alpha: float
    value: float
    sup_part: float
    seminorm: float


def _nabla_power(f: Field, N: int) -> np.ndarray:
    """Samples of ``grad^N f`` with all derivative indices stacked in front."""
    g = f.grid
    h = f.hat
    for _ in range(N):
        h = np.stack([h * ik(g, j) for j in range(g.d)])
    lead = h.shape[: h.ndim - g.d]
    return _inv(h, g).reshape(lead + g.shape) if lead else _inv(h, g)


def _pointwise_norm(v: np.ndarray, d: int) -> np.ndarray:
    lead = v.ndim - d
    if lead == 0:
        return np.abs(v)
    return np.sqrt(np.sum(v.reshape((-1,) + v.shape[lead:]) ** 2, axis=0))


def holder_seminorm(values: np.ndarray, d: int, alpha: float, refine: bool = True) -> float:
    """Lower estimate of ``sup |u(x+h) - u(x)| / |h|^alpha`` over axis-aligned grid offsets.

    Offsets ``s / n`` with ``s = 1, 2, 4, ..., n/2`` are scanned on each axis;
    with ``refine`` every integer offset in ``(s_best/2, 2 s_best)`` is
    scanned around the best dyadic one.
    """
    n = values.shape[-1]
    lead = values.ndim - d

    def ratio(axis: int, s: int) -> float:
        diff = np.roll(values, -s, axis=lead + axis) - values
        return float(np.max(_pointwise_norm(diff, d))) / (s / n) ** alpha

    best = 0.0
    for ax in range(d):
        s, best_s, best_ax = 1, 1, 0.0
        while s <= n // 2:
            r = ratio(ax, s)
            if r > best_ax:
                best_ax, best_s = r, s
            s *= 2
        if refine:
            for s in range(max(1, best_s // 2 + 1), min(n // 2, 2 * best_s - 1) + 1):
                best_ax = max(best_ax, ratio(ax, s))
        best = max(best, best_ax)
    return best


def holder_norm(f: Field, N: int, alpha: float) -> HolderNorm:
    """``||f||_N + [grad^N f]_alpha`` with ``||f||_N = sum_{m<=N} max |grad^m f|``."""
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if N < 0:
        raise ValueError("N must be non-negative")
    d = f.grid.d
    sup = 0.0
    top = None
    for m in range(N + 1):
        v = f.values if m == 0 else _nabla_power(f, m)
        sup += float(np.max(_pointwise_norm(v, d)))
        top = v
    semi = holder_seminorm(top, d, alpha)
    return HolderNorm(N=N, alpha=alpha, value=sup + semi, sup_part=sup, seminorm=semi)


# ---------------------------------------------------------------------------
# mollification


def mollifier_symbol(r: ArrayLike) -> np.ndarray:
    """Radial Fourier profile ``exp(-r^2 / (1 - r^2))`` on ``r < 1``, zero beyond."""
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    inside = r < 1.0
    ri = r[inside]
    out[inside] = np.exp(-(ri * ri) / (1.0 - ri * ri))
    return out


@lru_cache(maxsize=32)
def _mollifier_on_grid(grid: Grid, ell: float) -> np.ndarray:
    kk = np.sqrt(sum(k * k for k in grid.modes))
    m = mollifier_symbol(ell * kk)
    m.setflags(write=False)
    return m


def mollify(f: Field, ell: float) -> Field:
    """Convolve with the length-``ell`` mollifier (a Fourier multiplier)."""
    n = f.grid.n
    if not (1.0 / n < ell < 1.0):
        raise ValueError(f"mollification length must lie in (1/n, 1), got {ell}")
    return f.with_hat(f.hat * _mollifier_on_grid(f.grid, float(ell)))
