"""Pipe flows with a prescribed second moment, and their Fourier tables.

A :class:`DirectionSet` carries integer directions ``k_j``, smooth positive
weights ``Gamma_j(R)`` with ``sum_j Gamma_j(R)^2 khat_j khat_j^T = R`` on the
Frobenius ball of radius 1/2 around the identity, and one thin periodic pipe
per direction.  The pipe profile is a tensor product of compactly supported
bumps in coordinates ``eta = M_j xi`` transverse to ``k_j``; since
``M_j k_j = 0`` each profile is constant along its axis.  Pipes are placed by
a deterministic search so that their supports are pairwise disjoint.

:class:`MikadoTable` stores Fourier data in a sparse "entry" form::

    a_k(R) = sum over a-entries e with mode k of  g_{j_e}(R) * vec_e
    C_k(R) = sum over C-entries e with mode k of  g_{i_e}(R) g_{j_e}(R) * mat_e

which covers both the pipe table (one weight per entry) and the band-limited
Beltrami table used at surrogate scale (products of two weights).
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import integrate

__all__ = [
    "DirectionSet",
    "MikadoTable",
    "build_direction_set",
    "gamma_squared",
    "eval_mikado",
    "mikado_on_grid",
    "tabulate_fourier",
    "beltrami_table",
    "corrector_tensor",
    "in_domain",
    "save_table",
    "load_table",
    "TABLE_FORMAT_VERSION",
    "random_in_domain",
    "property_suite",
    "MIKADO_PROPERTIES",
]

TABLE_FORMAT_VERSION = 1
DOMAIN_RADIUS = 0.5


# ---------------------------------------------------------------------------
# profile


def _bump(s: np.ndarray) -> np.ndarray:
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    m = np.abs(s) < 1
    out[m] = np.exp(-1.0 / (1.0 - s[m] ** 2))
    return out


def _bump_dd(s: np.ndarray) -> np.ndarray:
    """Second derivative of the bump; even and mean-zero."""
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    m = np.abs(s) < 1
    x = s[m]
    out[m] = np.exp(-1.0 / (1.0 - x**2)) * (6 * x**4 - 2) / (1 - x**2) ** 4
    return out


_FACTORS = (_bump_dd, _bump)


@lru_cache(maxsize=None)
def _factor_l2(which: int) -> float:
    f = _FACTORS[which]
    val, _ = integrate.quad(lambda u: float(f(np.array(u))) ** 2, -1, 1, epsabs=1e-14, epsrel=1e-12, limit=200)
    return val


def _profile_1d(which: int, x: np.ndarray, half_width: float) -> np.ndarray:
    """Periodic 1-D factor on the circle, supported in ``|x| < half_width`` mod 1."""
    y = (np.asarray(x, dtype=float) + 0.5) % 1.0 - 0.5
    return _FACTORS[which](y / half_width)


@lru_cache(maxsize=32)
def _factor_hat(which: int, half_width: float, nmax: int, nquad: int = 1 << 16) -> np.ndarray:
    """Fourier coefficients ``int_0^1 f(x) e^{-2 pi i m x} dx`` for ``|m| <= nmax``.

    The factor is smooth and periodic, so the trapezoid rule on ``nquad``
    points is accurate far beyond double precision once ``nquad`` resolves
    the support.
    """
    while nquad * half_width < 512:
        nquad *= 2
    x = np.arange(nquad) / nquad
    c = np.fft.fft(_profile_1d(which, x, half_width)) / nquad
    m = np.arange(-nmax, nmax + 1)
    out = c[m % nquad]
    out.setflags(write=False)
    return out


@lru_cache(maxsize=32)
def _factor_sq_hat(which: int, half_width: float, nmax: int, nquad: int = 1 << 16) -> np.ndarray:
    while nquad * half_width < 512:
        nquad *= 2
    x = np.arange(nquad) / nquad
    c = np.fft.fft(_profile_1d(which, x, half_width) ** 2) / nquad
    m = np.arange(-nmax, nmax + 1)
    out = c[m % nquad]
    out.setflags(write=False)
    return out


# ---------------------------------------------------------------------------
# directions


def _direction_family(d: int) -> list[np.ndarray]:
    dirs = [np.eye(d, dtype=np.int64)[i] for i in range(d)]
    for i, j in itertools.combinations(range(d), 2):
        for s in (1, -1):
            k = np.zeros(d, dtype=np.int64)
            k[i], k[j] = 1, s
            dirs.append(k)
    return dirs


def _vech(m: np.ndarray) -> np.ndarray:
    iu = np.triu_indices(m.shape[0])
    return m[iu]


def _transverse_basis(k: np.ndarray) -> np.ndarray:
    """Integer rows spanning the lattice of integer vectors orthogonal to ``k``.

    Only axis and two-entry ``+-1`` directions are supported; the returned
    matrix has maximal minors with gcd 1 and smallest singular value >= 1.
    """
    d = k.size
    nz = np.flatnonzero(k)
    rows = []
    if nz.size == 1:
        rows = [np.eye(d, dtype=np.int64)[l] for l in range(d) if l != nz[0]]
    elif nz.size == 2 and np.all(np.abs(k[nz]) == 1):
        i, j = nz
        r = np.zeros(d, dtype=np.int64)
        r[i], r[j] = 1, -k[i] * k[j]
        rows = [r] + [np.eye(d, dtype=np.int64)[l] for l in range(d) if l not in (i, j)]
    else:
        raise ValueError(f"no transverse basis rule for direction {k.tolist()}")
    M = np.array(rows, dtype=np.int64)
    if np.any(M @ k != 0):
        raise AssertionError("transverse basis is not orthogonal to its direction")
    minors = [round(np.linalg.det(M[:, list(c)])) for c in itertools.combinations(range(d), d - 1)]
    if math.gcd(*[abs(int(x)) for x in minors]) != 1:
        raise ValueError(f"transverse basis for {k.tolist()} is not primitive")
    return M


def _line_distance(a: np.ndarray, u: np.ndarray, b: np.ndarray, v: np.ndarray, reach: int = 2) -> float:
    """Distance on the torus between the closed geodesics ``a + R u`` and ``b + R v``."""
    d = a.size
    span = np.stack([u, v], axis=1).astype(float)
    q, _ = np.linalg.qr(span)
    if np.linalg.matrix_rank(span) < 2:
        q = q[:, :1]
    zs = np.array(list(itertools.product(range(-reach, reach + 1), repeat=d)), dtype=float)
    diff = (b - a)[None, :] + zs
    perp = diff - (diff @ q) @ q.T
    return float(np.min(np.linalg.norm(perp, axis=1)))


@dataclass(frozen=True)
class DirectionSet:
    """Directions, transverse bases, pipe placement and weight parameters."""

    d: int
    directions: np.ndarray  # (J, d) integers
    transverse: np.ndarray  # (J, d - 1, d) integers
    base_points: np.ndarray  # (J, d) point on each pipe axis
    shifts: np.ndarray  # (J, d - 1) transverse offsets p_j = M_j a_j mod 1
    r_pipe: float
    eta: float  # smoothing constant in the off-diagonal weights
    pair_index: dict = field(default_factory=dict)  # (i, j) -> (index of e_i+e_j, index of e_i-e_j)

    @property
    def count(self) -> int:
        return int(self.directions.shape[0])

    @property
    def unit(self) -> np.ndarray:
        k = self.directions.astype(float)
        return k / np.linalg.norm(k, axis=1, keepdims=True)

    @property
    def half_width(self) -> float:
        """Half side of the transverse support cube in ``eta`` coordinates."""
        return self.r_pipe / math.sqrt(self.d - 1)

    def normalizer(self) -> float:
        hw = self.half_width
        prod = 1.0
        for i in range(self.d - 1):
            prod *= hw * _factor_l2(0 if i == 0 else 1)
        return 1.0 / math.sqrt(prod)


def _diag_margin(d: int) -> float:
    # worst case of |E_ii| + sum_j |E_ij| over Frobenius norm <= 1/2
    return 1.0 - 0.5 * math.sqrt(1.0 + (d - 1) / 2.0)


@lru_cache(maxsize=8)
def build_direction_set(d: int, r_pipe: float | None = None, grid: int | None = None) -> DirectionSet:
    """Axis and face-diagonal directions with disjoint pipes of radius ``r_pipe``.

    Results are cached; the placement search takes seconds in four dimensions.
    """
    if d < 3:
        raise ValueError(f"pipe construction needs d >= 3, got d={d}")
    dirs = _direction_family(d)
    J = len(dirs)
    khat = [k / np.linalg.norm(k) for k in dirs]
    A = np.stack([_vech(np.outer(u, u)) for u in khat], axis=1)
    rank = int(np.linalg.matrix_rank(A))
    need = d * (d + 1) // 2
    if rank < need:
        raise ValueError(f"direction family spans rank {rank} < {need}")
    r_pipe = 1.0 / (8 * J) if r_pipe is None else float(r_pipe)
    M = np.stack([_transverse_basis(k) for k in dirs])
    sig = min(np.linalg.svd(m.astype(float), compute_uv=False).min() for m in M)
    if sig < 1 - 1e-12:
        raise AssertionError("transverse basis contracts lengths; support bound would fail")

    G = grid if grid is not None else max(8, int(math.ceil(1.0 / (2 * r_pipe))))
    cands = np.array(list(itertools.product(range(G), repeat=d)), dtype=float) / G
    # deterministic scrambled order so early candidates are spread out
    order = np.argsort((cands * np.array([1.0, math.sqrt(2), math.sqrt(3), math.sqrt(5)][:d])).sum(axis=1) % 1.0, kind="stable")
    cands = cands[order]
    placed: list[np.ndarray] = []
    for j in range(J):
        u = dirs[j].astype(float)
        found = None
        for c in cands:
            if all(_line_distance(c, u, placed[i], dirs[i].astype(float)) >= 2 * r_pipe for i in range(j)):
                found = c
                break
        if found is None:
            raise ValueError(
                f"no disjoint placement for direction {dirs[j].tolist()} at r_pipe={r_pipe:.4g}; try a smaller radius"
            )
        placed.append(found)
    base = np.stack(placed)
    shifts = np.stack([(M[j] @ base[j]) % 1.0 for j in range(J)])
    pairs = {}
    for idx, k in enumerate(dirs):
        nz = np.flatnonzero(k)
        if nz.size == 2:
            key = (int(nz[0]), int(nz[1]))
            slot = 0 if k[nz[1]] > 0 else 1
            pairs.setdefault(key, [None, None])[slot] = idx
    eta = _diag_margin(d) / (2 * (d - 1))
    return DirectionSet(
        d=d,
        directions=np.stack(dirs),
        transverse=M,
        base_points=base,
        shifts=shifts,
        r_pipe=r_pipe,
        eta=eta,
        pair_index={k: tuple(v) for k, v in pairs.items()},
    )


def in_domain(R: np.ndarray, radius: float = DOMAIN_RADIUS, tol: float = 1e-12) -> np.ndarray:
    """Pointwise test ``R`` symmetric with ``|R - Id|_F <= radius``; ``R`` has shape ``(d, d, ...)``."""
    R = np.asarray(R, dtype=float)
    d = R.shape[0]
    E = R - np.eye(d).reshape((d, d) + (1,) * (R.ndim - 2))
    sym = np.sqrt(np.sum((R - np.swapaxes(R, 0, 1)) ** 2, axis=(0, 1)))
    fro = np.sqrt(np.sum(E**2, axis=(0, 1)))
    return (fro <= radius + tol) & (sym <= tol * (1 + fro))


def gamma_squared(ds: DirectionSet, R: np.ndarray, check: bool = True) -> np.ndarray:
    """Weights ``Gamma_j(R)^2`` (shape ``(J, ...)``) for ``R`` of shape ``(d, d, ...)``."""
    R = np.asarray(R, dtype=float)
    d = ds.d
    if R.shape[:2] != (d, d):
        raise ValueError(f"expected matrices of shape ({d}, {d}, ...), got {R.shape}")
    if check and not np.all(in_domain(R)):
        raise ValueError("R lies outside the ball of radius 1/2 around Id where the weights are positive")
    out = np.empty((ds.count,) + R.shape[2:])
    csum = [np.zeros(R.shape[2:]) for _ in range(d)]
    for (i, j), (ip, im) in ds.pair_index.items():
        rij = 0.5 * (R[i, j] + R[j, i])
        c = np.sqrt(rij**2 + ds.eta**2)
        out[ip] = c + rij
        out[im] = c - rij
        csum[i] = csum[i] + c
        csum[j] = csum[j] + c
    for i in range(d):
        out[i] = R[i, i] - csum[i]
    return out


def _gamma(ds: DirectionSet, R: np.ndarray, check: bool = True) -> np.ndarray:
    return np.sqrt(gamma_squared(ds, R, check))


def _pipe_profiles(ds: DirectionSet, xi: np.ndarray) -> np.ndarray:
    """``psi_j(xi)`` for points ``xi`` of shape ``(..., d)``; returns ``(J, ...)``."""
    xi = np.asarray(xi, dtype=float)
    hw = ds.half_width
    norm = ds.normalizer()
    out = np.empty((ds.count,) + xi.shape[:-1])
    for j in range(ds.count):
        eta = xi @ ds.transverse[j].T.astype(float) - ds.shifts[j]
        val = np.full(xi.shape[:-1], norm)
        for a in range(ds.d - 1):
            val = val * _profile_1d(0 if a == 0 else 1, eta[..., a], hw)
        out[j] = val
    return out


def eval_mikado(ds: DirectionSet, R: np.ndarray, xi: np.ndarray) -> np.ndarray:
    """``W(R, xi) = sum_j Gamma_j(R) psi_j(xi) khat_j`` at points ``xi`` (shape ``(..., d)``)."""
    R = np.asarray(R, dtype=float)
    if R.shape != (ds.d, ds.d):
        raise ValueError("eval_mikado takes a single matrix R")
    g = _gamma(ds, R)
    psi = _pipe_profiles(ds, xi)
    return np.einsum("j,j...,ja->...a", g, psi, ds.unit)


def mikado_on_grid(ds: DirectionSet, R: np.ndarray, n: int, lam: int = 1) -> np.ndarray:
    """``W(R, lam x)`` sampled on the ``n^d`` grid, shape ``(d, n, ..., n)``."""
    x = np.arange(n) / n
    mesh = np.stack(np.meshgrid(*([x] * ds.d), indexing="ij"), axis=-1)
    W = eval_mikado(ds, R, lam * mesh)
    return np.moveaxis(W, -1, 0)


# ---------------------------------------------------------------------------
# tables


@dataclass
class MikadoTable:
    """Sparse Fourier data for ``a_k(R)`` and ``C_k(R)``; see module docstring."""

    kind: str  # "pipes" or "beltrami"
    d: int
    K: int
    m_R: int
    n_weights: int
    a_modes: np.ndarray  # (Na, d) int
    a_weight: np.ndarray  # (Na,) int
    a_vec: np.ndarray  # (Na, d) complex
    c_modes: np.ndarray  # (Nc, d) int
    c_weights: np.ndarray  # (Nc, 2) int
    c_mat: np.ndarray  # (Nc, d, d) complex
    domain_radius: float
    params: dict = field(default_factory=dict)
    decay: dict = field(default_factory=dict)
    _weight_fn: object = None

    # weights ---------------------------------------------------------------
    def weights(self, R: np.ndarray, check: bool = True) -> np.ndarray:
        if self._weight_fn is None:
            raise RuntimeError("table has no weight function attached")
        return self._weight_fn(R, check)

    # mode bookkeeping -------------------------------------------------------
    def modes(self) -> np.ndarray:
        """Distinct nonzero modes carrying a-coefficients, sorted."""
        m = np.unique(self.a_modes, axis=0)
        return m[np.any(m != 0, axis=1)]

    def _group(self, modes: np.ndarray, table_modes: np.ndarray) -> list[np.ndarray]:
        key = {tuple(k): i for i, k in enumerate(modes.tolist())}
        groups: list[list[int]] = [[] for _ in range(len(modes))]
        for e, k in enumerate(table_modes.tolist()):
            i = key.get(tuple(k))
            if i is not None:
                groups[i].append(e)
        return [np.array(g, dtype=np.int64) for g in groups]

    def a_coeffs(self, R: np.ndarray, modes: np.ndarray | None = None, check: bool = True) -> tuple[np.ndarray, np.ndarray]:
        """``(modes, a)`` with ``a`` of shape ``(M, d, ...)`` for ``R`` of shape ``(d, d, ...)``."""
        modes = self.modes() if modes is None else np.asarray(modes, dtype=np.int64)
        g = self.weights(R, check)
        sp = g.shape[1:]
        out = np.zeros((len(modes), self.d) + sp, dtype=complex)
        for i, idx in enumerate(self._group(modes, self.a_modes)):
            for e in idx:
                out[i] += np.multiply.outer(self.a_vec[e], g[self.a_weight[e]])
        return modes, out

    def c_coeffs(self, R: np.ndarray, modes: np.ndarray | None = None, check: bool = True) -> tuple[np.ndarray, np.ndarray]:
        """``(modes, C)`` with ``C`` of shape ``(M, d, d, ...)``; mode 0 included when present."""
        modes = np.unique(self.c_modes, axis=0) if modes is None else np.asarray(modes, dtype=np.int64)
        g = self.weights(R, check)
        sp = g.shape[1:]
        out = np.zeros((len(modes), self.d, self.d) + sp, dtype=complex)
        for i, idx in enumerate(self._group(modes, self.c_modes)):
            for e in idx:
                w = g[self.c_weights[e, 0]] * g[self.c_weights[e, 1]]
                out[i] += np.multiply.outer(self.c_mat[e], w)
        return modes, out

    def series(self, R: np.ndarray, xi: np.ndarray) -> np.ndarray:
        """Truncated ``sum_k a_k(R) e^{2 pi i k.xi}`` (real part) at points ``(..., d)``."""
        modes, a = self.a_coeffs(R)
        ph = np.exp(2j * np.pi * (np.asarray(xi, dtype=float) @ modes.T.astype(float)))
        return np.real(np.einsum("...m,ma->...a", ph, a))

    def orthogonality_residuals(self, R: np.ndarray) -> tuple[float, float]:
        """``max |k.a_k|`` and ``max |k^T C_k|`` over the tabulated modes."""
        modes, a = self.a_coeffs(R)
        ra = np.abs(np.einsum("ma,ma->m", modes.astype(float), a)).max(initial=0.0)
        cm, C = self.c_coeffs(R)
        rc = np.abs(np.einsum("ma,mab->mb", cm.astype(float), C)).max(initial=0.0)
        return float(ra), float(rc)


def _pipe_weight_fn(ds: DirectionSet):
    def fn(R, check=True):
        return _gamma(ds, R, check)

    return fn


def tabulate_fourier(ds: DirectionSet, K: int, m_R: int = 8) -> MikadoTable:
    """Fourier table of the pipe flow for modes with ``|k|_inf <= K``.

    Each pipe contributes on the plane ``k = M_j^T n`` with coefficient
    ``Gamma_j(R) khat_j psi_hat_j(n)``; its square contributes
    ``Gamma_j(R)^2 khat_j khat_j^T (psi_j^2)^(n)`` to ``C_k``.  The weights
    are evaluated in closed form, so ``m_R`` is recorded but not used to fit.
    """
    if K < 4:
        raise ValueError("K must be >= 4")
    if m_R < 2:
        raise ValueError("m_R must be >= 2")
    d, J = ds.d, ds.count
    hw = ds.half_width
    norm = ds.normalizer()
    khat = ds.unit
    ns = np.array(list(itertools.product(range(-K, K + 1), repeat=d - 1)), dtype=np.int64)
    a_modes, a_w, a_vec = [], [], []
    c_modes, c_w, c_mat = [], [], []
    for j in range(J):
        M = ds.transverse[j]
        ks = ns @ M
        keep = np.abs(ks).max(axis=1) <= K
        nn, kk = ns[keep], ks[keep]
        coef = np.full(len(nn), norm, dtype=complex)
        csq = np.full(len(nn), norm**2, dtype=complex)
        for a in range(d - 1):
            which = 0 if a == 0 else 1
            fh = _factor_hat(which, hw, K)
            fsq = _factor_sq_hat(which, hw, K)
            coef *= fh[nn[:, a] + K]
            csq *= fsq[nn[:, a] + K]
        phase = np.exp(-2j * np.pi * (nn @ ds.shifts[j]))
        coef *= phase
        csq *= phase
        nz = np.any(kk != 0, axis=1)
        a_modes.append(kk[nz])
        a_w.append(np.full(nz.sum(), j))
        a_vec.append(coef[nz, None] * khat[j][None, :])
        c_modes.append(kk)
        c_w.append(np.full((len(kk), 2), j))
        c_mat.append(csq[:, None, None] * np.outer(khat[j], khat[j])[None])
    a_modes = np.concatenate(a_modes)
    a_vec = np.concatenate(a_vec)
    # enforce k . a = 0 exactly in floating point (already zero in exact arithmetic)
    kf = a_modes.astype(float)
    a_vec = a_vec - kf * (np.einsum("ma,ma->m", kf, a_vec) / np.einsum("ma,ma->m", kf, kf))[:, None]
    c_modes = np.concatenate(c_modes)
    c_mat = np.concatenate(c_mat)
    tab = MikadoTable(
        kind="pipes",
        d=d,
        K=K,
        m_R=m_R,
        n_weights=J,
        a_modes=a_modes,
        a_weight=np.concatenate(a_w),
        a_vec=a_vec,
        c_modes=c_modes,
        c_weights=np.concatenate(c_w),
        c_mat=c_mat,
        domain_radius=DOMAIN_RADIUS,
        params={"r_pipe": ds.r_pipe, "eta": ds.eta},
        _weight_fn=_pipe_weight_fn(ds),
    )
    tab.decay = _decay_constants(tab)
    return tab


def _decay_constants(tab: MikadoTable) -> dict:
    """``c_m = max_k |a_k(Id)| |k|^m`` over tabulated modes, ``m = 0 .. 2d``."""
    modes, a = tab.a_coeffs(np.eye(tab.d))
    mag = np.linalg.norm(a, axis=1)
    kn = np.linalg.norm(modes.astype(float), axis=1)
    return {m: float(np.max(mag * kn**m)) for m in range(2 * tab.d + 1)}


# -- band-limited Beltrami table ----------------------------------------------

BELTRAMI_RADIUS = 0.2


def _beltrami_modes() -> list[np.ndarray]:
    """Representatives of the 6 pairs ``+-k`` with ``|k|^2 = 2`` in 3-d."""
    reps = []
    for i, j in itertools.combinations(range(3), 2):
        for s in (1, -1):
            k = np.zeros(3, dtype=np.int64)
            k[i], k[j] = 1, s
            reps.append(k)
    return reps


def _beltrami_weights(R: np.ndarray, check: bool = True) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    if R.shape[:2] != (3, 3):
        raise ValueError("the Beltrami table is three-dimensional")
    if check and not np.all(in_domain(R, BELTRAMI_RADIUS)):
        raise ValueError(f"R lies outside the ball of radius {BELTRAMI_RADIUS} around Id")
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    Rp = -R.copy()
    for i in range(3):
        Rp[i, i] = Rp[i, i] + 0.5 * tr
    out = np.empty((6,) + R.shape[2:])
    idx = 0
    for i, j in itertools.combinations(range(3), 2):
        l = 3 - i - j
        s = Rp[i, i] + Rp[j, j] - Rp[l, l]
        rij = 0.5 * (Rp[i, j] + Rp[j, i])
        out[idx] = 0.5 * s + rij
        out[idx + 1] = 0.5 * s - rij
        idx += 2
    if check and np.any(out <= 0):
        raise ValueError("Beltrami weights lost positivity")
    return np.sqrt(np.maximum(out, 0.0))


def beltrami_table() -> MikadoTable:
    """Band-limited surrogate: ``W = sum_k gamma_k(R) B_k e^{2 pi i k.xi}`` over ``|k|^2 = 2``.

    ``B_k = (A_k + i khat x A_k)/sqrt 2`` makes every mode an eigenfield of
    curl with the same eigenvalue, so ``div(W x W) = grad |W|^2 / 2``: the
    oscillation defect is a pure gradient rather than zero.  The mean of
    ``W x W`` equals ``R`` exactly on the ball of radius 0.2 around Id.
    """
    reps = _beltrami_modes()
    modes, wts, vecs = [], [], []
    for p, k in enumerate(reps):
        kh = k / np.linalg.norm(k)
        helper = np.zeros(3)
        helper[int(np.argmin(np.abs(k)))] = 1.0
        A = np.cross(kh, helper)
        A /= np.linalg.norm(A)
        B = (A + 1j * np.cross(kh, A)) / math.sqrt(2)
        for sgn, vec in ((1, B), (-1, np.conj(B))):
            modes.append(sgn * k)
            wts.append(p)
            vecs.append(vec)
    modes = np.array(modes, dtype=np.int64)
    wts = np.array(wts, dtype=np.int64)
    vecs = np.array(vecs)
    c_modes, c_w, c_mat = [], [], []
    for e1, e2 in itertools.product(range(len(modes)), repeat=2):
        c_modes.append(modes[e1] + modes[e2])
        c_w.append((wts[e1], wts[e2]))
        c_mat.append(np.outer(vecs[e1], vecs[e2]))
    tab = MikadoTable(
        kind="beltrami",
        d=3,
        K=1,
        m_R=2,
        n_weights=6,
        a_modes=modes,
        a_weight=wts,
        a_vec=vecs,
        c_modes=np.array(c_modes, dtype=np.int64),
        c_weights=np.array(c_w, dtype=np.int64),
        c_mat=np.array(c_mat),
        domain_radius=BELTRAMI_RADIUS,
        params={},
        _weight_fn=_beltrami_weights,
    )
    tab.decay = _decay_constants(tab)
    return tab


def corrector_tensor(table: MikadoTable, k, R: np.ndarray) -> np.ndarray:
    """``k ^ a_k(R) / (i 2 pi |k|^2)``, antisymmetric; ``R`` may carry trailing field axes."""
    k = np.asarray(k, dtype=np.int64)
    if not np.any(k):
        raise ValueError("corrector tensor is undefined for k = 0")
    _, a = table.a_coeffs(R, modes=k[None, :])
    a = a[0]
    kf = k.astype(float).reshape((-1,) + (1,) * (a.ndim - 1))
    wedge = np.einsum("i...,j...->ij...", np.broadcast_to(kf, a.shape), a)
    wedge = wedge - np.swapaxes(wedge, 0, 1)
    return wedge / (2j * np.pi * float(k @ k))


# ---------------------------------------------------------------------------
# serialization


def save_table(table: MikadoTable, path: str | Path) -> None:
    """Write ``<path>`` as an ``.npz`` archive with a JSON header entry.

    Arrays: ``a_modes a_weight a_vec c_modes c_weights c_mat``.  The header
    holds the format version, kind, dimension, cutoff, weight parameters and
    decay constants.  The weight map is rebuilt on load from ``kind`` and
    ``params`` (pipe tables also store the direction set arrays).
    """
    header = {
        "format": "wildflow-mikado-table",
        "version": TABLE_FORMAT_VERSION,
        "kind": table.kind,
        "d": table.d,
        "K": table.K,
        "m_R": table.m_R,
        "n_weights": table.n_weights,
        "domain_radius": table.domain_radius,
        "params": table.params,
        "decay": {str(k): v for k, v in table.decay.items()},
    }
    np.savez(
        Path(path),
        header=np.array(json.dumps(header)),
        a_modes=table.a_modes,
        a_weight=table.a_weight,
        a_vec=table.a_vec,
        c_modes=table.c_modes,
        c_weights=table.c_weights,
        c_mat=table.c_mat,
    )


def load_table(path: str | Path) -> MikadoTable:
    with np.load(Path(path), allow_pickle=False) as z:
        header = json.loads(str(z["header"]))
        if header.get("format") != "wildflow-mikado-table":
            raise ValueError(f"{path}: not a Mikado table")
        if header["version"] != TABLE_FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported table version {header['version']}")
        arrays = {k: z[k] for k in ("a_modes", "a_weight", "a_vec", "c_modes", "c_weights", "c_mat")}
    if header["kind"] == "beltrami":
        fn = _beltrami_weights
    elif header["kind"] == "pipes":
        ds = build_direction_set(header["d"], r_pipe=header["params"]["r_pipe"])
        fn = _pipe_weight_fn(ds)
    else:
        raise ValueError(f"unknown table kind {header['kind']!r}")
    return MikadoTable(
        kind=header["kind"],
        d=header["d"],
        K=header["K"],
        m_R=header["m_R"],
        n_weights=header["n_weights"],
        domain_radius=header["domain_radius"],
        params=header["params"],
        decay={int(k): v for k, v in header["decay"].items()},
        _weight_fn=fn,
        **arrays,
    )


# ---------------------------------------------------------------------------
# property checks


def random_in_domain(rng: np.random.Generator, d: int = 3, radius: float = DOMAIN_RADIUS) -> np.ndarray:
    """Symmetric ``R`` with ``|R - Id|_F`` uniform in ``[0, 0.99 radius]``."""
    E = rng.normal(size=(d, d))
    E = 0.5 * (E + E.T)
    E *= 0.99 * radius * rng.uniform() / np.linalg.norm(E)
    return np.eye(d) + E


def _profile_integrals(ds: DirectionSet, nodes: int = 400) -> tuple[float, float]:
    """``mean psi_j`` and ``mean psi_j^2`` by Gauss-Legendre in the transverse coordinates.

    ``xi -> M_j xi`` pushes the uniform measure on the torus forward to the
    uniform measure, so both means factor over the ``d - 1`` profile axes.
    """
    x, w = np.polynomial.legendre.leggauss(nodes)
    hw, norm = ds.half_width, ds.normalizer()
    m1, m2 = norm, norm**2
    for a in range(ds.d - 1):
        f = _FACTORS[0 if a == 0 else 1](x)
        m1 *= hw * float(w @ f)
        m2 *= hw * float(w @ f**2)
    return m1, m2


def _probe_points(ds: DirectionSet, rng: np.random.Generator, points: int) -> np.ndarray:
    """Half uniform on the torus, half within ``2 r_pipe`` of a random pipe axis."""
    d = ds.d
    near = points // 2
    xi = rng.uniform(size=(points, d))
    j = rng.integers(ds.count, size=near)
    u = ds.unit[j]
    off = rng.normal(size=(near, d))
    off -= np.sum(off * u, axis=1, keepdims=True) * u
    off *= (2 * ds.r_pipe * rng.uniform(size=near) / np.linalg.norm(off, axis=1))[:, None]
    along = rng.uniform(size=(near, 1)) * ds.directions[j]
    xi[:near] = (ds.base_points[j] + along + off) % 1.0
    return xi


MIKADO_PROPERTIES = (
    "moment_quadrature",
    "moment_table",
    "mean",
    "div_W",
    "div_WW",
    "cross_support",
    "k_dot_a",
    "k_C",
    "corrector",
)


def property_suite(
    samples: int = 20,
    seed: int = 0,
    d: int = 3,
    K: int = 8,
    points: int = 2000,
    n_corrector: int = 32,
    correctors: int = 4,
) -> list[dict]:
    """Residuals of the pipe-flow identities at random ``R`` in the domain.

    Moment residuals are relative to ``|R|``; divergence and support
    residuals are relative to the largest ``|W|`` seen at the sample points;
    the rest are absolute.  Divergences are checked pointwise as central
    differences of each profile along its own axis (with disjoint supports
    these are the only terms), since the pipes are far too thin for a grid
    of feasible size.
    """
    from .field import Field, Grid, derive

    ds = build_direction_set(d)
    tab = tabulate_fourier(ds, K)
    rng = np.random.default_rng(seed)
    m1, m2 = _profile_integrals(ds)
    khat = ds.unit
    g = Grid(d, n_corrector)
    mesh = np.stack(g.mesh(), axis=-1)
    all_modes = tab.modes()
    rows = []
    for s in range(samples):
        R = random_in_domain(rng, d)
        g2 = gamma_squared(ds, R)
        gam = np.sqrt(g2)
        res = {}
        M_quad = np.einsum("j,ja,jb->ab", g2 * m2, khat, khat)
        res["moment_quadrature"] = float(np.abs(M_quad - R).max() / np.abs(R).max())
        _, C0 = tab.c_coeffs(R, modes=np.zeros((1, d), dtype=np.int64))
        res["moment_table"] = float(np.abs(C0[0] - R).max() / np.abs(R).max())
        res["mean"] = float(np.abs(np.einsum("j,ja->a", gam * m1, khat)).max())

        xi = _probe_points(ds, rng, points)
        psi = _pipe_profiles(ds, xi)
        scale = max(float(np.abs(np.einsum("j,jp,ja->pa", gam, psi, khat)).max()), 1e-300)
        h = ds.half_width  # any step works for a profile constant along its axis
        dW = np.zeros((points, d))
        dWW = np.zeros((points, d))
        for j in range(ds.count):
            pp = _pipe_profiles(ds, xi + h * khat[j])[j]
            pm = _pipe_profiles(ds, xi - h * khat[j])[j]
            dW += gam[j] * ((pp - pm) / (2 * h))[:, None] * khat[j]
            dWW += g2[j] * ((pp**2 - pm**2) / (2 * h))[:, None] * khat[j]
        res["div_W"] = float(np.abs(dW).max() / scale)
        res["div_WW"] = float(np.abs(dWW).max() / scale**2)
        pairs = np.einsum("ip,jp->ijp", np.abs(psi), np.abs(psi))
        pairs[np.arange(ds.count), np.arange(ds.count)] = 0.0
        res["cross_support"] = float(pairs.max() / scale**2)
        ra, rc = tab.orthogonality_residuals(R)
        res["k_dot_a"], res["k_C"] = ra, rc

        worst = 0.0
        for k in all_modes[rng.choice(len(all_modes), size=correctors, replace=False)]:
            if np.abs(k).max() >= n_corrector // 3:
                continue
            T = corrector_tensor(tab, k, R)
            _, a = tab.a_coeffs(R, modes=k[None, :])
            ph = np.exp(2j * np.pi * (mesh @ k.astype(float)))
            F = Field(g, "tensor2", np.real(T.reshape(T.shape + (1,) * d) * ph))
            lhs = derive(F, "div").values
            rhs = np.real(a[0].reshape((d,) + (1,) * d) * ph)
            worst = max(worst, float(np.abs(lhs - rhs).max() / max(np.abs(a[0]).max(), 1e-300)))
        res["corrector"] = worst
        for name in MIKADO_PROPERTIES:
            rows.append({"sample": s, "property": name, "residual": res[name]})
    return rows
