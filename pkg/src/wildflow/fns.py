"""Spectral solver and Reynolds-residual tools for hypodissipative Navier-Stokes.

The discrete equations are

    d_t v + nu (-Lap)^gamma v + div D(v x v) + grad p = div R,   div v = 0,

where ``D`` is the two-thirds dealiasing used by :func:`~wildflow.field.multiply`.
Every residual in this package is measured against this operator, so exact
discrete solutions have zero residual up to the time integration error.
"""

from __future__ import annotations

import bisect
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from . import cutoff
from .calculus import antidivergence, frac_laplacian, hodge_project, leray, wiener_norm
from .field import Field, Grid, derive, holder_norm, ik, mollify, multiply, sup_norm
from .field import _fwd, _inv

__all__ = [
    "FnsState",
    "FnsrPair",
    "Trajectory",
    "TimeCutoff",
    "SolverError",
    "fd_weights",
    "solve_fns",
    "solve_fns_chained",
    "fns_rhs",
    "momentum_residual",
    "residual_stress",
    "fnsr_defect",
    "initial_pair",
    "blended_derivative",
    "BlendedTrajectory",
    "time_rescale",
    "mollify_pair",
]

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    """Raised when the integrator detects blow-up, CFL violation or a bad horizon."""


# ---------------------------------------------------------------------------
# containers


@dataclass(frozen=True)
class FnsState:
    v: Field
    t: float
    nu: float
    gamma: float

    @property
    def p(self) -> Field:
        """Mean-zero pressure of an exact solution: ``grad p = -P1 div D(v x v)``."""
        return pressure(self.v)


@dataclass(frozen=True)
class FnsrPair:
    v: Field
    R: Field
    t: float


class Trajectory:
    """Fields of one rank sampled at increasing times.

    Snapshots are immutable; ``add`` appends (or inserts) by time.  Time
    derivatives and interpolation use finite differences over the nearest
    samples.  A ``compact`` trajectory keeps only Fourier coefficients and
    hands out fresh snapshots, so sampled values are never cached.
    """

    def __init__(self, grid: Grid, rank: str = "vector", nu: float = 0.0, gamma: float = 0.5, compact: bool = False):
        self.grid = grid
        self.rank = rank
        self.nu = float(nu)
        self.gamma = float(gamma)
        self.compact = compact
        self._times: list[float] = []
        self._fields: list[Field] = []
        self.meta: dict = {}

    # -- container protocol
    def __len__(self) -> int:
        return len(self._times)

    def __iter__(self):
        return ((t, self._get(i)) for i, t in enumerate(self._times))

    @property
    def times(self) -> np.ndarray:
        return np.array(self._times)

    @property
    def span(self) -> tuple[float, float]:
        if not self._times:
            raise ValueError("empty trajectory")
        return self._times[0], self._times[-1]

    def add(self, t: float, f: Field) -> None:
        if f.grid != self.grid or f.rank != self.rank:
            raise ValueError(f"snapshot {f!r} does not match trajectory ({self.rank}, n={self.grid.n})")
        t = float(t)
        if self.compact or f.t != t:
            f = Field.from_hat(self.grid, self.rank, f.hat, t)
        i = bisect.bisect_left(self._times, t)
        if i < len(self._times) and abs(self._times[i] - t) <= 1e-13 * max(1.0, abs(t)):
            self._fields[i] = f
            return
        self._times.insert(i, t)
        self._fields.insert(i, f)

    def _index(self, t: float, tol: float = 1e-11) -> int | None:
        i = bisect.bisect_left(self._times, t - tol)
        if i < len(self._times) and abs(self._times[i] - t) <= tol:
            return i
        return None

    def has(self, t: float, tol: float = 1e-11) -> bool:
        return self._index(t, tol) is not None

    def at(self, t: float, tol: float = 1e-11) -> Field:
        i = self._index(t, tol)
        if i is None:
            raise KeyError(f"no snapshot at t={t!r} (span {self.span if self._times else None})")
        return self._get(i)

    def _get(self, i: int) -> Field:
        f = self._fields[i]
        return Field.from_hat(self.grid, self.rank, f.hat, f.t) if self.compact else f

    def drop(self, t0: float, t1: float) -> None:
        """Forget the samples with ``t0 <= t <= t1``."""
        keep = [k for k, t in enumerate(self._times) if not (t0 - 1e-11 <= t <= t1 + 1e-11)]
        self._times = [self._times[k] for k in keep]
        self._fields = [self._fields[k] for k in keep]

    def covers(self, t: float) -> bool:
        return bool(self._times) and self._times[0] - 1e-11 <= t <= self._times[-1] + 1e-11

    def _stencil(self, t: float, npts: int) -> list[int]:
        if len(self._times) < npts:
            raise ValueError(f"need {npts} samples for this stencil, trajectory has {len(self._times)}")
        if not self.covers(t):
            raise ValueError(f"t={t} outside trajectory span {self.span}")
        i = bisect.bisect_left(self._times, t)
        lo = max(0, min(i - npts // 2, len(self._times) - npts))
        return list(range(lo, lo + npts))

    def derivative(self, t: float, order: int = 6, m: int = 1) -> Field:
        """``d^m/dt^m`` at ``t`` from ``order + m`` neighbouring samples."""
        idx = self._stencil(t, order + m)
        ts = np.array([self._times[i] for i in idx])
        w = fd_weights(ts - t, m)
        hat = sum(wi * self._fields[i].hat for wi, i in zip(w, idx))
        return Field.from_hat(self.grid, self.rank, hat, t)

    def interpolate(self, t: float, order: int = 6) -> Field:
        i = self._index(t)
        if i is not None:
            return self._get(i)
        idx = self._stencil(t, order)
        ts = np.array([self._times[i] for i in idx])
        w = fd_weights(ts - t, 0)
        hat = sum(wi * self._fields[i].hat for wi, i in zip(w, idx))
        return Field.from_hat(self.grid, self.rank, hat, t)

    def map(self, fn: Callable[[float, Field], Field], rank: str | None = None) -> "Trajectory":
        out = Trajectory(self.grid, rank or self.rank, self.nu, self.gamma, self.compact)
        for t, f in self:
            out.add(t, fn(t, f))
        return out

    def restrict(self, t0: float, t1: float) -> "Trajectory":
        out = Trajectory(self.grid, self.rank, self.nu, self.gamma, self.compact)
        for t, f in self:
            if t0 - 1e-11 <= t <= t1 + 1e-11:
                out.add(t, f)
        return out

    def sup(self) -> float:
        return max((sup_norm(f) for _, f in self), default=0.0)


def fd_weights(offsets: np.ndarray, m: int) -> np.ndarray:
    """Weights ``w`` with ``sum w_i f(t + offsets_i) ~ f^(m)(t)`` (Fornberg)."""
    x = np.asarray(offsets, dtype=float)
    n = x.size
    if m >= n:
        raise ValueError("stencil too small for this derivative")
    c = np.zeros((n, m + 1))
    c1 = 1.0
    c4 = x[0]
    c[0, 0] = 1.0
    for i in range(1, n):
        mn = min(i, m)
        c2 = 1.0
        c5 = c4
        c4 = x[i]
        for j in range(i):
            c3 = x[i] - x[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[i, k] = c1 * (k * c[i - 1, k - 1] - c5 * c[i - 1, k]) / c2
                c[i, 0] = -c1 * c5 * c[i - 1, 0] / c2
            for k in range(mn, 0, -1):
                c[j, k] = (c4 * c[j, k] - k * c[j, k - 1]) / c3
            c[j, 0] = c4 * c[j, 0] / c3
        c1 = c2
    return c[:, m]


@dataclass(frozen=True)
class TimeCutoff:
    """``eta(t)``: equal to 1 before ``start``, 0 after ``start + width``."""

    start: float
    width: float

    def __call__(self, t, m: int = 0):
        return cutoff.ramp_down(t, self.start, self.width, m)

    @property
    def end(self) -> float:
        return self.start + self.width


# ---------------------------------------------------------------------------
# spectral right-hand side


def _nonlinear_hat(h: np.ndarray, grid: Grid, stats: dict | None = None) -> np.ndarray:
    """``-P_L div D(u x u)`` for a vector spectrum ``h``; ``stats['umax']`` gets ``max |D u|``."""
    d = grid.d
    mask = grid.dealias_mask
    u = _inv(h * mask, grid)
    if stats is not None:
        stats["umax"] = float(np.sqrt(np.max(np.sum(u * u, axis=0))))
    prod = np.empty((d * (d + 1) // 2,) + grid.shape)
    pairs = []
    for i in range(d):
        for j in range(i, d):
            prod[len(pairs)] = u[i] * u[j]
            pairs.append((i, j))
    ph = _fwd(prod, d) * mask
    lookup = {}
    for a, (i, j) in enumerate(pairs):
        lookup[(i, j)] = lookup[(j, i)] = a
    div = np.empty((d,) + grid.hat_shape, dtype=complex)
    dj = [ik(grid, j) for j in range(d)]
    for i in range(d):
        div[i] = sum(dj[j] * ph[lookup[(j, i)]] for j in range(d))
    return -_leray_hat(div, grid)


def _leray_hat(h: np.ndarray, grid: Grid) -> np.ndarray:
    kv = grid.deriv_modes
    k2 = np.where(grid.k2 > 0, grid.k2, 1.0)
    kdot = sum(kv[j] * h[j] for j in range(grid.d)) / k2
    out = h - np.stack([kv[j] * kdot for j in range(grid.d)])
    return out


def _lin_symbol(grid: Grid, nu: float, gamma: float) -> np.ndarray:
    return -nu * (4 * np.pi**2 * grid.k2) ** gamma


def fns_rhs(v: Field, nu: float, gamma: float) -> Field:
    """``-nu (-Lap)^gamma v - P_L div D(v x v)``."""
    g = v.grid
    h = _lin_symbol(g, nu, gamma) * v.hat + _nonlinear_hat(np.asarray(v.hat), g)
    return Field.from_hat(g, "vector", h, v.t)


def pressure(v: Field) -> Field:
    """Mean-zero ``p`` with ``grad p = -P1 div D(v x v)``."""
    g = v.grid
    F = derive(multiply(v, v, "outer"), "div")
    kv = g.deriv_modes
    k2 = np.where(g.k2 > 0, g.k2, 1.0)
    # P1 F = grad phi with phi_hat = (k . F_hat) / (2 pi i |k|^2)
    phi = sum(kv[j] * F.hat[j] for j in range(g.d)) / (2j * np.pi * k2)
    phi = np.where(g.k2 > 0, phi, 0.0)
    return Field.from_hat(g, "scalar", -phi, v.t)


# ---------------------------------------------------------------------------
# ETDRK4


class _Etdrk4:
    """Cox-Matthews ETDRK4 coefficients by contour integrals (Kassam-Trefethen)."""

    def __init__(self, grid: Grid, nu: float, gamma: float, n_contour: int = 32):
        self.grid = grid
        self.L = _lin_symbol(grid, nu, gamma)
        self.n_contour = n_contour
        self._cache: dict[float, tuple] = {}

    def coeffs(self, h: float):
        key = round(h, 15)
        c = self._cache.get(key)
        if c is None:
            # the symbol depends on |k|^2 only, so evaluate on its distinct values
            vals, inv = np.unique(self.L, return_inverse=True)
            Lh = vals * h
            r = np.exp(1j * np.pi * (np.arange(1, self.n_contour + 1) - 0.5) / self.n_contour)
            LR = Lh[:, None] + r
            eLR = np.exp(LR)
            Q = h * np.real(np.mean((np.exp(LR / 2) - 1) / LR, axis=-1))
            f1 = h * np.real(np.mean((-4 - LR + eLR * (4 - 3 * LR + LR**2)) / LR**3, axis=-1))
            f2 = h * np.real(np.mean((2 + LR + eLR * (-2 + LR)) / LR**3, axis=-1))
            f3 = h * np.real(np.mean((-4 - 3 * LR - LR**2 + eLR * (4 - LR)) / LR**3, axis=-1))
            shape = self.L.shape
            c = tuple(a[inv].reshape(shape) for a in (np.exp(Lh), np.exp(Lh / 2), Q, f1, f2, f3))
            if len(self._cache) > 16:
                self._cache.pop(next(iter(self._cache)))
            self._cache[key] = c
        return c

    def step(self, u: np.ndarray, h: float, stats: dict | None = None) -> np.ndarray:
        E, E2, Q, f1, f2, f3 = self.coeffs(h)
        g = self.grid
        Nu = _nonlinear_hat(u, g, stats)
        a = E2 * u + Q * Nu
        Na = _nonlinear_hat(a, g)
        b = E2 * u + Q * Na
        Nb = _nonlinear_hat(b, g)
        c = E2 * a + Q * (2 * Nb - Nu)
        Nc = _nonlinear_hat(c, g)
        out = E * u + f1 * Nu + 2 * f2 * (Na + Nb) + f3 * Nc
        return _leray_hat(out, g)


def _gradient_wiener(h: np.ndarray, grid: Grid) -> float:
    w = grid.rfft_weights
    a = np.sqrt(np.sum(np.abs(h) ** 2, axis=0))
    return float(2 * np.pi * np.sum(w * a * np.sqrt(grid.k2)))


def solve_fns(
    u0: Field,
    nu: float,
    gamma: float,
    horizon: float,
    dt: float,
    *,
    t0: float = 0.0,
    t_out: Iterable[float] | None = None,
    fine: Sequence[tuple[float, float, float]] = (),
    c_horizon: float | None = 0.1,
    alpha: float = 0.5,
    cfl: float = 1.0,
    growth_limit: float = 10.0,
    check_norms: bool = False,
    compact: bool = False,
) -> Trajectory:
    """Integrate from ``(t0, u0)`` to ``t0 + horizon``.

    Output is recorded at ``t_out`` (default: every step) and always at the
    endpoints.  ``fine`` lists ``(a, b, h)`` intervals where the step is at
    most ``h``; elsewhere it is at most ``dt``.  Steps end exactly on output
    times.  ``compact`` stores Fourier coefficients only.

    The horizon must satisfy ``horizon <= c_horizon / ||u0||_{1+alpha}``
    unless ``c_horizon`` is None.  Blow-up (growth of the gradient bound
    beyond ``growth_limit`` times its initial value) and CFL violations raise
    :class:`SolverError`.
    """
    g = u0.grid
    if u0.rank != "vector":
        raise ValueError("initial data must be a vector field")
    if horizon <= 0 or dt <= 0:
        raise ValueError("horizon and dt must be positive")
    div0 = wiener_norm(derive(u0, "div"))
    if div0 > 1e-10 * max(1.0, _gradient_wiener(np.asarray(u0.hat), g)):
        raise ValueError(f"initial data is not divergence-free (|div u0| = {div0:.2e})")
    if c_horizon is not None:
        h1 = holder_norm(u0, 1, alpha).value
        if h1 > 0 and horizon > c_horizon / h1 * (1 + 1e-12):
            raise SolverError(
                f"horizon {horizon:.4g} exceeds local existence time c/|u0|_(1+alpha) = {c_horizon / h1:.4g}"
            )
    t_end = t0 + horizon
    stops = {round(t0, 14), round(t_end, 14)}
    if t_out is not None:
        for t in t_out:
            if t0 - 1e-12 <= t <= t_end + 1e-12:
                stops.add(round(float(t), 14))
    for a, b, _ in fine:
        for t in (a, b):
            if t0 < t < t_end:
                stops.add(round(t, 14))
    stops = sorted(stops)
    record_all = t_out is None
    recorded = set(stops) if not record_all else None

    integ = _Etdrk4(g, nu, gamma)
    traj = Trajectory(g, "vector", nu, gamma, compact)
    u = _leray_hat(np.array(u0.hat), g)
    traj.add(t0, Field.from_hat(g, "vector", u, t0))
    g0 = max(_gradient_wiener(u, g), 1e-300)
    dx = g.spacing
    t = t0
    nsteps = 0
    for a, b in zip(stops[:-1], stops[1:]):
        hmax = dt
        mid = 0.5 * (a + b)
        for fa, fb, fh in fine:
            if fa - 1e-12 <= mid <= fb + 1e-12:
                hmax = min(hmax, fh)
        m = max(1, math.ceil((b - a) / hmax - 1e-9))
        h = (b - a) / m
        for s in range(m):
            stats: dict = {}
            u = integ.step(u, h, stats)
            umax = stats["umax"]
            if umax * h / dx > cfl:
                raise SolverError(f"CFL violated at t={t:.6g}: |u| dt/dx = {umax * h / dx:.3g} > {cfl}")
            nsteps += 1
            t = a + (s + 1) * h
            gn = _gradient_wiener(u, g)
            if not np.isfinite(gn) or gn > growth_limit * g0 and gn > 1e-12:
                raise SolverError(f"blow-up guard at t={t:.6g}: gradient bound grew {gn / g0:.3g}x")
            if record_all:
                traj.add(t, Field.from_hat(g, "vector", u, t))
        t = b
        if not record_all and b in recorded:
            traj.add(b, Field.from_hat(g, "vector", u, b))
    traj.meta.update({"steps": nsteps, "t0": t0, "t1": t_end, "dt": dt})
    if check_norms:
        ratios = {}
        for N in (1, 2):
            n0 = holder_norm(u0, N, alpha).value
            n1 = max(holder_norm(f, N, alpha).value for _, f in traj)
            ratios[N] = n1 / n0 if n0 > 0 else 0.0
        traj.meta["holder_growth"] = ratios
    return traj


def solve_fns_chained(
    u0: Field,
    nu: float,
    gamma: float,
    horizon: float,
    dt: float,
    *,
    t0: float = 0.0,
    t_out: Iterable[float] | None = None,
    fine: Sequence[tuple[float, float, float]] = (),
    c_horizon: float = 0.1,
    alpha: float = 0.5,
    **kw,
) -> Trajectory:
    """Repeated local solves, each within the local existence horizon of its data."""
    t_out = None if t_out is None else sorted(float(t) for t in t_out)
    out = Trajectory(u0.grid, "vector", nu, gamma)
    t, u = t0, u0
    t_end = t0 + horizon
    segments = 0
    while t < t_end - 1e-13:
        h1 = holder_norm(u, 1, alpha).value
        seg = t_end - t if h1 == 0 else min(t_end - t, c_horizon / h1)
        piece = solve_fns(
            u, nu, gamma, seg, dt, t0=t, t_out=t_out, fine=fine, c_horizon=c_horizon, alpha=alpha, **kw
        )
        for s, f in piece:
            out.add(s, f)
        t, u = piece.span[1], piece.at(piece.span[1])
        segments += 1
    out.meta["segments"] = segments
    return out


# ---------------------------------------------------------------------------
# residuals


def momentum_residual(v: Field, dvdt: Field, nu: float, gamma: float) -> Field:
    """``d_t v + nu (-Lap)^gamma v + div D(v x v)``, pressure not yet removed."""
    nl = derive(multiply(v, v, "outer"), "div")
    return dvdt + frac_laplacian(v, gamma, nu) + nl


def _check_time_resolution(traj: Trajectory, t: float, order: int, scale: float, tol: float) -> Field:
    a = traj.derivative(t, order=order)
    b = traj.derivative(t, order=max(2, order - 2))
    gap = sup_norm(a - b)
    if gap > tol * max(scale, 1e-300) and gap > 1e-12:
        raise ValueError(f"time grid too coarse near t={t:.6g}: derivative estimates differ by {gap:.2e}")
    return a


def residual_stress(
    v: Trajectory, nu: float, gamma: float, times: Iterable[float] | None = None, order: int = 6, resolve_tol: float = 1e-2
) -> Trajectory:
    """Stress ``R = antidiv(P2 F)`` with ``F`` the momentum residual.

    ``div R = F - grad p - mean F`` with the pressure recovered by the Leray
    projection.  The derivative is checked against a lower-order estimate
    and rejected when they differ by more than ``resolve_tol`` relatively.
    """
    out = Trajectory(v.grid, "tensor2", nu, gamma)
    times = v.times if times is None else times
    for t in times:
        f = v.at(t)
        scale = sup_norm(fns_rhs(f, nu, gamma)) + sup_norm(f)
        dv = _check_time_resolution(v, t, order, scale, resolve_tol)
        F = momentum_residual(f, dv, nu, gamma)
        out.add(t, antidivergence(leray(F)))
    return out


def fnsr_defect(
    v: Trajectory | Callable[[float], tuple[Field, Field]],
    R: Trajectory,
    nu: float,
    gamma: float,
    times: Iterable[float] | None = None,
    order: int = 6,
) -> dict:
    """Sup over ``times`` of ``|P_L(F(v) - div R)|``, the non-gradient part of the mismatch.

    ``v`` is a trajectory (derivative by finite differences) or a callable
    returning ``(v(t), d_t v(t))``.
    """
    times = R.times if times is None else np.asarray(list(times))
    worst, at = 0.0, None
    for t in times:
        if callable(v) and not isinstance(v, Trajectory):
            f, dv = v(t)
        else:
            f, dv = v.at(t), v.derivative(t, order=order)
        F = momentum_residual(f, dv, nu, gamma)
        r = sup_norm(leray(F - derive(R.at(t), "div")))
        if r > worst:
            worst, at = r, float(t)
    return {"defect": worst, "at": at}


# ---------------------------------------------------------------------------
# initial pair and time rescaling


def initial_pair(
    V1: Trajectory, V2: Trajectory, eta: TimeCutoff, times: Iterable[float] | None = None, T: float = 1.0, mean_tol: float = 1e-12
) -> tuple[Trajectory, Trajectory, dict]:
    """Glue two solutions in time: ``v0 = eta V1 + (1 - eta) V2`` and its stress.

    ``R0 = eta' antidiv(V1 - V2) - eta (1 - eta) D(V1 - V2) x (V1 - V2)``.
    Returns ``(v0, R0, flags)``; ``flags['window']`` reports whether the
    transition lies inside ``[T/3, 2T/5]`` as the classical construction asks.
    """
    times = V1.times if times is None else np.asarray(list(times))
    v0 = Trajectory(V1.grid, "vector", V1.nu, V1.gamma)
    R0 = Trajectory(V1.grid, "tensor2", V1.nu, V1.gamma)
    for t in times:
        a, b = V1.at(t), V2.at(t)
        if np.max(np.abs(a.mean() - b.mean())) > mean_tol:
            raise ValueError(f"V1 and V2 have different means at t={t:.6g}")
        e = float(eta(np.array([t]))[0])
        de = float(eta(np.array([t]), 1)[0])
        diff = a - b
        v0.add(t, a * e + b * (1 - e))
        if de == 0.0 and e * (1 - e) == 0.0:
            R0.add(t, Field.zeros(V1.grid, "tensor2", t))
        else:
            R = antidivergence(diff) * de - multiply(diff, diff, "outer") * (e * (1 - e))
            R0.add(t, R)
    flags = {
        "window": bool(eta.start >= T / 3 - 1e-12 and eta.end <= 2 * T / 5 + 1e-12),
        "eta_start": eta.start,
        "eta_end": eta.end,
    }
    if not flags["window"]:
        log.info("initial cutoff transition [%g, %g] lies outside [T/3, 2T/5]", eta.start, eta.end)
    return v0, R0, flags


class BlendedTrajectory:
    """Lazy ``eta V1 + (1 - eta) V2`` with the cutoff differentiated exactly.

    Offers the read side of :class:`Trajectory` (``has``, ``at``,
    ``derivative``, ``interpolate``).  Where ``eta`` is exactly 1 or 0 the
    corresponding sample is returned untouched, so only one of the two
    trajectories needs samples there.
    """

    def __init__(self, V1: Trajectory, V2: Trajectory, eta: TimeCutoff):
        self.V1, self.V2, self.eta = V1, V2, eta
        self.grid, self.rank = V1.grid, "vector"
        self.nu, self.gamma = V1.nu, V1.gamma

    def _w(self, t: float, m: int = 0) -> float:
        return float(self.eta(np.array([t]), m)[0])

    def has(self, t: float, tol: float = 1e-11) -> bool:
        e = self._w(t)
        return (e == 0.0 or self.V1.has(t, tol)) and (e == 1.0 or self.V2.has(t, tol))

    def _combine(self, t: float, get1, get2, dget=None) -> Field:
        e = self._w(t)
        de = self._w(t, 1) if dget else 0.0
        out = None
        if e != 0.0:
            out = get1() * e if e != 1.0 else get1()
        if e != 1.0:
            b = get2() * (1 - e) if e != 0.0 else get2()
            out = b if out is None else out + b
        if de != 0.0:
            out = out + dget() * de
        return out

    def at(self, t: float, tol: float = 1e-11) -> Field:
        return self._combine(t, lambda: self.V1.at(t, tol), lambda: self.V2.at(t, tol))

    def interpolate(self, t: float, order: int = 6) -> Field:
        return self._combine(t, lambda: self.V1.interpolate(t, order), lambda: self.V2.interpolate(t, order))

    def derivative(self, t: float, order: int = 6, m: int = 1) -> Field:
        if m != 1:
            raise NotImplementedError("only first time derivatives of a blend are supported")
        return self._combine(
            t,
            lambda: self.V1.derivative(t, order),
            lambda: self.V2.derivative(t, order),
            lambda: self.V1.at(t) - self.V2.at(t),
        )


def blended_derivative(V1: Trajectory, V2: Trajectory, eta: TimeCutoff, order: int = 6) -> Callable[[float], tuple[Field, Field]]:
    """``t -> (v0(t), d_t v0(t))`` with the cutoff differentiated exactly."""
    b = BlendedTrajectory(V1, V2, eta)
    return lambda t: (b.at(t), b.derivative(t, order))


def time_rescale(v: Trajectory, R: Trajectory | None, zeta: float) -> tuple[Trajectory, Trajectory | None]:
    """``v^z(t) = z v(z t)``, ``R^z(t) = z^2 R(z t)``; viscosity becomes ``z nu``."""
    if zeta <= 0:
        raise ValueError("zeta must be positive")
    vz = Trajectory(v.grid, "vector", zeta * v.nu, v.gamma)
    for t, f in v:
        vz.add(t / zeta, f.with_hat(f.hat * zeta, t=t / zeta))
    Rz = None
    if R is not None:
        Rz = Trajectory(R.grid, "tensor2", zeta * R.nu, R.gamma)
        for t, f in R:
            Rz.add(t / zeta, f.with_hat(f.hat * zeta**2, t=t / zeta))
    return vz, Rz


def mollify_pair(pair: FnsrPair, ell: float) -> tuple[FnsrPair, dict]:
    """``v_l = psi_l * v``, ``R_l = psi_l * R + D(v_l x v_l) - psi_l * D(v x v)``."""
    v, R = pair.v, pair.R
    vl = mollify(v, ell)
    Rl = mollify(R, ell) + multiply(vl, vl, "outer") - mollify(multiply(v, v, "outer"), ell)
    diag = {"v_change": sup_norm(vl - v), "R_l": sup_norm(Rl), "R": sup_norm(R), "ell": ell}
    return FnsrPair(vl, Rl, pair.t), diag
