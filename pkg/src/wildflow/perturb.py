"""Lagrangian flows, Mikado perturbations and the new stress.

Within a window around ``t_i`` the back-to-labels map ``Phi = x - psi`` is
transported by the glued velocity, ``(d_t + vbar . grad) Phi = 0``, with
``psi`` periodic.  The perturbation is

    w = Div A,   A = sum_k amp grad Phi^{-1} T_k(R_l) grad Phi^{-T} e^{2 pi i lam k . Phi},

where ``T_k = k ^ a_k / (2 pi i lam |k|^2)`` is the antisymmetric corrector
tensor, ``R_l = grad Phi (Id - Rbar/delta) grad Phi^T`` and
``amp = delta^{1/2} rho``.  The part of ``Div A`` with the derivative on the
phase is the principal perturbation ``w_o``; the rest is ``w_c``.  Because
``A`` is antisymmetric, ``w`` is divergence-free to rounding.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .calculus import antidivergence, frac_laplacian, leray
from .field import Field, Grid, ik, multiply, sup_norm
from .fns import SolverError, Trajectory, fd_weights, momentum_residual
from .glue import GOOD, GluedSolution, TimePartition
from .mikado import MikadoTable, in_domain

log = logging.getLogger(__name__)

__all__ = [
    "StageError",
    "FlowPair",
    "Amplitudes",
    "compute_flows",
    "lagrangian_stress",
    "amplitudes",
    "assemble_perturbation",
    "new_stress",
    "oscillation_diagnostics",
    "fourier_eval",
    "pullback_vector",
    "StepConfig",
    "StepResult",
    "window_levels",
    "iteration_step",
]


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, msg: str):
        super().__init__(f"[{stage}] {msg}")
        self.stage = stage


# ---------------------------------------------------------------------------
# spectral helpers


def _grad_values(hat: np.ndarray, grid: Grid) -> np.ndarray:
    """``G[a, b] = d_b f_a`` on the grid for a vector spectrum ``hat``."""
    d = grid.d
    comp = np.stack([hat * ik(grid, b) for b in range(d)], axis=1)
    return Field.from_hat(grid, "tensor2", comp).values


def _div_first(A: Field) -> Field:
    """``(Div A)_j = d_i A_ij``."""
    g = A.grid
    h = sum(A.hat[i] * ik(g, i) for i in range(g.d))
    return Field.from_hat(g, "vector", h, A.t)


def _div_tensor(T: Field) -> Field:
    return _div_first(T)


def fourier_eval(hat: np.ndarray, grid: Grid, pts: np.ndarray, tol: float = 1e-13) -> np.ndarray:
    """Evaluate the band-limited field with spectrum ``hat`` (components first) at ``pts`` ``(P, d)``.

    The smallest modes are dropped while their summed moduli stay below
    ``tol`` times the total, which bounds the error by ``tol`` times the
    Wiener norm.  Nyquist modes are ignored.
    """
    hat = np.asarray(hat)
    comp_shape = hat.shape[: hat.ndim - grid.d]
    flat = hat.reshape((-1,) + grid.hat_shape)
    wts = grid.rfft_weights
    mag = np.max(np.abs(flat), axis=0) * wts
    for k in grid.modes:
        mag = np.where(np.abs(k) == grid.n / 2, 0.0, mag)
    order = np.argsort(mag, axis=None)
    csum = np.cumsum(mag.ravel()[order])
    drop = np.searchsorted(csum, tol * csum[-1], side="right")
    keep = np.sort(order[drop:])
    keep = keep[mag.ravel()[keep] > 0]
    idx = np.unravel_index(keep, grid.hat_shape)
    pts = np.asarray(pts, dtype=float)
    n = grid.n
    ph = None
    for a, k in enumerate(grid.modes):
        ka = np.broadcast_to(k, grid.hat_shape)[idx].astype(np.int64)
        table = np.exp(2j * np.pi * np.outer(pts[:, a], np.arange(-n // 2, n // 2 + 1)))
        fac = table[:, ka + n // 2]
        ph = fac if ph is None else ph * fac
    coef = flat[(slice(None),) + idx] * wts[idx]
    out = np.real(coef @ ph.T)
    return out.reshape(comp_shape + (len(pts),))


def _inv_matrix_field(G: np.ndarray) -> np.ndarray:
    d = G.shape[0]
    sp = G.shape[2:]
    M = np.moveaxis(G.reshape(d, d, -1), -1, 0)
    inv = np.linalg.inv(M)
    return np.moveaxis(inv, 0, -1).reshape((d, d) + sp)


def _matvec(G: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Pointwise ``G v`` for a matrix field and a vector field."""
    return np.einsum("ab...,b...->a...", G, v, optimize=True)


def _conjugate(G: np.ndarray, M: np.ndarray) -> np.ndarray:
    """Pointwise ``G M G^T``."""
    d = G.shape[0]
    sp = G.shape[2:]
    Gs = np.moveaxis(G.reshape(d, d, -1), -1, 0)
    Ms = np.moveaxis(M.reshape(d, d, -1), -1, 0)
    out = Gs @ Ms @ np.swapaxes(Gs, 1, 2)
    return np.moveaxis(out, 0, -1).reshape((d, d) + sp)


def _det_field(G: np.ndarray) -> np.ndarray:
    d = G.shape[0]
    M = np.moveaxis(G.reshape(d, d, -1), -1, 0)
    return np.linalg.det(M).reshape(G.shape[2:])


def _mat_norm(G: np.ndarray) -> np.ndarray:
    """Pointwise Frobenius norm of a matrix field."""
    return np.sqrt(np.sum(G * G, axis=(0, 1)))


# ---------------------------------------------------------------------------
# flows


@dataclass
class FlowPair:
    """Transported labels ``Phi = x - psi`` at the window levels.

    ``psi`` holds one vector spectrum per time; ``X`` holds forward particle
    positions ``(len(times), P, d)`` started from ``X0`` at ``t_i``.
    """

    grid: Grid
    t_i: float
    times: np.ndarray
    psi: list[np.ndarray]
    X0: np.ndarray
    X: np.ndarray
    window: tuple[float, float]
    diagnostics: dict = field(default_factory=dict)

    def index(self, t: float, tol: float = 1e-11) -> int:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > tol:
            raise KeyError(f"flow has no level at t={t}")
        return i

    def displacement(self, i: int) -> Field:
        return Field.from_hat(self.grid, "vector", self.psi[i], float(self.times[i]))

    def phi(self, i: int) -> np.ndarray:
        """``Phi`` on the grid, unwrapped (``x - psi``)."""
        x = self.grid.mesh()
        psi = self.displacement(i).values
        return np.stack([x[a] - psi[a] for a in range(self.grid.d)])

    def grad_phi(self, i: int) -> np.ndarray:
        G = -_grad_values(self.psi[i], self.grid)
        for a in range(self.grid.d):
            G[a, a] += 1.0
        return G


def compute_flows(
    vbar: Callable[[float], Field],
    t_i: float,
    times: Sequence[float],
    *,
    substeps: int = 1,
    particles: int = 128,
    seed: int = 0,
    check_tol: float | None = 1e-6,
    cfl: float = 1.0,
    fd_order: int = 6,
) -> FlowPair:
    """Transport ``Phi`` and trace particles over ``times`` (which contain ``t_i``).

    ``vbar(t)`` must accept any time inside the span (RK4 midpoints).  The
    transport equation is stepped with classical RK4 between consecutive
    levels (``substeps`` per interval) with spectral, two-thirds-dealiased
    advection; particles use the same stages with Fourier interpolation of
    ``vbar``.  Diagnostics: ``roundtrip`` (``|Phi(t, X(t, x)) - x|``),
    ``det`` (``|det grad Phi - 1|``), ``grad_dev`` (``|grad Phi - Id|``)
    and ``phase`` (``|d_t Phi + vbar . grad Phi|`` by finite differences).
    """
    times = np.asarray(sorted(float(t) for t in times))
    i0 = int(np.argmin(np.abs(times - t_i)))
    if abs(times[i0] - t_i) > 1e-11:
        raise ValueError(f"t_i={t_i} is not one of the levels")
    probe = vbar(float(times[i0]))
    grid = probe.grid
    d = grid.d
    mask = grid.dealias_mask
    rng = np.random.default_rng(seed)
    X0 = rng.random((particles, d))
    cache: dict[float, tuple[Field, np.ndarray]] = {}

    def vel(t: float) -> tuple[Field, np.ndarray]:
        key = round(t, 14)
        if key not in cache:
            if len(cache) > 8:
                cache.clear()
            v = vbar(t)
            cache[key] = (v, Field.from_hat(grid, "vector", v.hat * mask).values)
        return cache[key]

    def rhs(t: float, h: np.ndarray, xp: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        v, vv = vel(t)
        G = _grad_values(h * mask, grid)
        adv = np.einsum("b...,ab...->a...", vv, G)
        out = Field(grid, "vector", vv - adv).hat * mask
        vp = fourier_eval(v.hat, grid, xp % 1.0, tol=1e-10)
        return out, vp.T

    zero = np.zeros((d,) + grid.hat_shape, dtype=complex)
    psi: list[np.ndarray | None] = [None] * len(times)
    X = np.zeros((len(times), particles, d))
    psi[i0] = zero
    X[i0] = X0
    umax = sup_norm(probe)
    for direction in (1, -1):
        h, xp = zero, X0.copy()
        rng_idx = range(i0 + 1, len(times)) if direction == 1 else range(i0 - 1, -1, -1)
        prev = i0
        for i in rng_idx:
            t0, t1 = float(times[prev]), float(times[i])
            dt = (t1 - t0) / substeps
            if abs(dt) * umax * grid.n > cfl:
                raise SolverError(f"flow step {abs(dt):.3g} violates the CFL bound (|v| = {umax:.3g}, n = {grid.n})")
            t = t0
            for _ in range(substeps):
                k1, p1 = rhs(t, h, xp)
                k2, p2 = rhs(t + dt / 2, h + dt / 2 * k1, xp + dt / 2 * p1)
                k3, p3 = rhs(t + dt / 2, h + dt / 2 * k2, xp + dt / 2 * p2)
                k4, p4 = rhs(t + dt, h + dt * k3, xp + dt * p3)
                h = h + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
                xp = xp + dt / 6 * (p1 + 2 * p2 + 2 * p3 + p4)
                t += dt
            umax = max(umax, sup_norm(vel(t1)[0]))
            psi[i] = h
            X[i] = xp
            prev = i
    fp = FlowPair(grid, float(t_i), times, psi, X0, X, (float(times[0]), float(times[-1])))
    _flow_diagnostics(fp, vbar, fd_order)
    if check_tol is not None and fp.diagnostics["roundtrip"] > check_tol:
        raise SolverError(f"inverse consistency {fp.diagnostics['roundtrip']:.3e} exceeds {check_tol:g}")
    return fp


def _flow_diagnostics(fp: FlowPair, vbar: Callable[[float], Field], fd_order: int) -> None:
    grid = fp.grid
    rt = det = dev = phase = 0.0
    n = len(fp.times)
    for i in range(n):
        psi_at = fourier_eval(fp.psi[i], grid, fp.X[i] % 1.0).T if np.any(fp.psi[i]) else 0.0
        err = fp.X[i] - psi_at - fp.X0
        err = err - np.round(err)
        rt = max(rt, float(np.max(np.abs(err))))
        G = fp.grad_phi(i)
        det = max(det, float(np.max(np.abs(_det_field(G) - 1.0))))
        eye = np.eye(grid.d).reshape((grid.d, grid.d) + (1,) * grid.d)
        dev = max(dev, float(np.max(_mat_norm(G - eye))))
        if n > fd_order:
            lo = max(0, min(i - fd_order // 2, n - fd_order - 1))
            idx = range(lo, lo + fd_order + 1)
            w = fd_weights(fp.times[list(idx)] - fp.times[i], 1)
            dpsi = sum(wk * fp.psi[k] for wk, k in zip(w, idx))
            v = vbar(float(fp.times[i])).values
            # d_t Phi + v . grad Phi = -d_t psi + v - v . grad psi
            r = -Field.from_hat(grid, "vector", dpsi).values + v - np.einsum("b...,ab...->a...", v, _grad_values(fp.psi[i], grid))
            phase = max(phase, sup_norm(r, 1))
    fp.diagnostics.update({"roundtrip": rt, "det": det, "grad_dev": dev, "phase": phase})


def pullback_vector(u: Field, flow: FlowPair, i: int, points: np.ndarray) -> np.ndarray:
    """``(X^* u)(x) = grad X(x)^{-1} u(X(x))`` at the flow's tracked particles.

    Uses ``grad X(x)^{-1} = grad Phi(X(x))``; ``points`` are ignored unless
    they coincide with the particle labels and are kept for symmetry.
    """
    y = flow.X[i] % 1.0
    uy = fourier_eval(u.hat, u.grid, y)
    Gy = fourier_eval(-np.stack([flow.psi[i] * ik(u.grid, b) for b in range(u.grid.d)], axis=1), u.grid, y)
    for a in range(u.grid.d):
        Gy[a, a] += 1.0
    return np.einsum("abp,bp->ap", Gy, uy)


# ---------------------------------------------------------------------------
# amplitudes and perturbation


@dataclass
class Amplitudes:
    """Pulled-back stress ``R_l`` and the prefactor ``delta^{1/2} rho``."""

    R_l: np.ndarray
    amp: float
    eig: tuple[float, float]
    distance: float


def lagrangian_stress(Rbar: Field, grad_phi: np.ndarray, delta_next: float, radius: float = 0.5, check: bool = True) -> np.ndarray:
    """``grad Phi (Id - Rbar/delta) grad Phi^T``; raises when it leaves the ball of ``radius``."""
    if delta_next <= 0:
        raise ValueError("delta_next must be positive")
    d = Rbar.grid.d
    M = -Rbar.values / delta_next
    for a in range(d):
        M[a, a] = M[a, a] + 1.0
    R = np.einsum("ab...,bc...,dc...->ad...", grad_phi, M, grad_phi)
    R = 0.5 * (R + np.swapaxes(R, 0, 1))
    if check and not np.all(in_domain(R, radius)):
        dist = _mat_norm(R - np.eye(d).reshape((d, d) + (1,) * d)).max()
        raise StageError("amplitudes", f"pulled-back stress leaves the ball of radius {radius} (distance {dist:.3f})")
    return R


def amplitudes(Rbar: Field, flow: FlowPair, i: int, delta_next: float, rho: float, radius: float = 0.5, check: bool = True) -> Amplitudes:
    R = lagrangian_stress(Rbar, flow.grad_phi(i), delta_next, radius, check)
    d = R.shape[0]
    ev = np.linalg.eigvalsh(np.moveaxis(R.reshape(d, d, -1), -1, 0))
    dist = float(_mat_norm(R - np.eye(d).reshape((d, d) + (1,) * d)).max())
    return Amplitudes(R, float(np.sqrt(delta_next) * rho), (float(ev.min()), float(ev.max())), dist)


def _paired_modes(table: MikadoTable) -> np.ndarray:
    """One representative per ``+-k`` pair; the table must be real."""
    modes = table.modes()
    reps = []
    present = {tuple(k) for k in modes.tolist()}
    for k in modes.tolist():
        nz = next(x for x in k if x != 0)
        if nz > 0:
            if tuple(-x for x in k) not in present:
                raise ValueError(f"table is not real: mode {k} has no partner")
            reps.append(k)
    return np.array(reps, dtype=np.int64)


def _mode_vectors(table: MikadoTable, g: np.ndarray, modes: np.ndarray) -> list[np.ndarray]:
    """``a_k`` fields for each of ``modes`` from precomputed weights ``g``."""
    key = {tuple(k): n for n, k in enumerate(modes.tolist())}
    out = [np.zeros((table.d,) + g.shape[1:], dtype=complex) for _ in modes]
    for e, k in enumerate(table.a_modes.tolist()):
        n = key.get(tuple(k))
        if n is not None:
            out[n] += np.multiply.outer(table.a_vec[e], g[table.a_weight[e]])
    return out


def check_resolution(grid: Grid, table: MikadoTable, lam, factor: int = 8) -> int:
    if int(lam) != lam or lam < 1:
        raise ValueError(f"lambda must be a positive integer, got {lam}")
    lam = int(lam)
    need = factor * lam * table.K
    if grid.n < need:
        raise ValueError(f"resolution n={grid.n} is below {factor} * lambda * K = {need}")
    return lam


def assemble_perturbation(
    amp: Amplitudes, phi: np.ndarray, grad_phi: np.ndarray, table: MikadoTable, lam: int, grid: Grid, t: float = 0.0, res_factor: int = 8
) -> dict:
    """``w_o``, ``w_c`` and ``w = w_o + w_c = Div A`` at one time.

    ``phi`` and ``grad_phi`` are the label map and its Jacobian on the grid.
    Returns Fields under keys ``w_o``, ``w_c``, ``w`` and ``A``.
    """
    lam = check_resolution(grid, table, lam, res_factor)
    d = grid.d
    if amp.amp == 0.0:
        z = Field.zeros(grid, "vector", t)
        return {"w_o": z, "w_c": z, "w": z, "A": Field.zeros(grid, "tensor2", t)}
    Ginv = _inv_matrix_field(grad_phi)
    g = table.weights(amp.R_l, check=False)
    modes = _paired_modes(table)
    avecs = _mode_vectors(table, g, modes)
    # sum over modes in label space, then push forward once
    wl = np.zeros((d,) + grid.shape)
    Al = np.zeros((d, d) + grid.shape)
    for k, a in zip(modes, avecs):
        kf = k.astype(float)
        phase = np.exp(2j * np.pi * lam * np.einsum("a,a...->...", kf, phi))
        ap = a * phase
        wl += 2.0 * ap.real
        c = 2.0 / (2 * np.pi * lam * float(kf @ kf))
        for i in range(d):
            for j in range(i + 1, d):
                # Re((k_i a_j - k_j a_i) phase / (2 pi i lam |k|^2))
                Al[i, j] += c * (kf[i] * ap[j].imag - kf[j] * ap[i].imag)
    for i in range(d):
        for j in range(i + 1, d):
            Al[j, i] = -Al[i, j]
    wo = amp.amp * _matvec(Ginv, wl)
    A = amp.amp * _conjugate(Ginv, Al)
    Af = Field(grid, "tensor2", A, t)
    w = _div_first(Af)
    wof = Field(grid, "vector", wo, t)
    return {"w_o": wof, "w_c": w - wof, "w": w, "A": Af}


def new_stress(vbar: Field, w: Field, dw_dt: Field, Rbar: Field, nu: float, gamma: float, project_pressure: bool = False) -> dict:
    """The four parts of the new stress and their sum.

    ``R_osc = antidiv Div(Rbar + w x w)``, ``R_trans = antidiv(d_t w + vbar . grad w)``,
    ``R_Nash = antidiv(w . grad vbar)``, ``R_dis = antidiv(nu (-Lap)^gamma w)``.
    With ``project_pressure`` the Leray projection is applied first, moving
    gradients into the pressure.
    """
    P = leray if project_pressure else (lambda f: f)
    osc = antidivergence(P(_div_tensor(Rbar + multiply(w, w, "outer"))))
    trans = antidivergence(P(dw_dt + multiply(vbar, w, "advect")))
    nash = antidivergence(P(multiply(w, vbar, "advect")))
    dis = antidivergence(P(frac_laplacian(w, gamma, nu)))
    return {"R_osc": osc, "R_trans": trans, "R_Nash": nash, "R_dis": dis, "R_total": osc + trans + nash + dis}


def oscillation_diagnostics(amp: Amplitudes, phi: np.ndarray, grad_phi: np.ndarray, Rbar: Field, table: MikadoTable, lam: int) -> dict:
    """Mean-mode cancellation and the phase-derivative term of the oscillation error.

    ``k0``: ``|antidiv Div(Rbar + amp^2 grad Phi^{-1} C_0 grad Phi^{-T})|``,
    which vanishes where the cutoff is 1.  ``O3``: the sup of
    ``sum_{k != 0} 2 pi i lam amp^2 e^{2 pi i lam k . Phi} grad Phi^{-1} C_k^T k``,
    zero exactly when every ``C_k`` annihilates ``k``.
    """
    grid = Rbar.grid
    d = grid.d
    Ginv = _inv_matrix_field(grad_phi)
    cm, C = table.c_coeffs(amp.R_l, check=False)
    a2 = amp.amp**2
    acc = np.zeros((d,) + grid.shape, dtype=complex)
    k0 = None
    for k, Ck in zip(cm, C):
        kf = k.astype(float)
        if not np.any(k):
            M = _conjugate(Ginv, np.real(Ck)) * a2
            k0 = antidivergence(_div_tensor(Rbar + Field(grid, "tensor2", M)))
            continue
        phase = np.exp(2j * np.pi * lam * np.einsum("a,a...->...", kf, phi))
        acc += np.einsum("cb...,c->b...", Ck, kf, optimize=True) * phase
    o3 = 2j * np.pi * lam * a2 * np.einsum("ab...,b...->a...", Ginv, acc, optimize=True)
    return {"k0": sup_norm(k0) if k0 is not None else float("nan"), "O3": float(np.max(np.abs(o3)))}


# ---------------------------------------------------------------------------
# one iteration


@dataclass
class StepConfig:
    """Numerical knobs of one perturbation step."""

    nu: float
    gamma: float
    samples: int = 8  # levels per overlap length
    flow_substeps: int = 2
    particles: int = 32
    project_pressure: bool = True
    fd_order: int = 6
    check_tol: float = 1e-6
    res_factor: int = 8
    seed: int = 0
    diag_every: int = 4


@dataclass
class StepResult:
    sup_R_prev: float
    sup_Rbar: float
    sup_R_next: float
    ratio: float
    windows: list[dict]
    rows: list[dict]
    checks: dict
    timings: dict


def window_levels(part: TimePartition, j: int, samples: int) -> list[float]:
    """Equispaced times covering ``[t_j - eps tau, t_j + 2 eps tau]``, exact in rationals when possible."""
    if part.tau_exact is not None:
        tj = j * part.tau_exact
        h = part.eps_tau_exact / samples
        return [float(tj + m * h) for m in range(-samples, 2 * samples + 1)]
    h = part.eps_tau / samples
    return [part.t(j) + m * h for m in range(-samples, 2 * samples + 1)]


def _rho_value(part: TimePartition, j: int, t: float, m: int = 0) -> float:
    return float(part.rho(j, np.array([t]), m)[0])


def iteration_step(
    gs: GluedSolution,
    part: TimePartition,
    table: MikadoTable,
    lam_next: int,
    delta_next: float,
    cfg: StepConfig,
    *,
    R_prev_sup: float,
    on_level: Callable[[float, dict], None] | None = None,
    windows: Iterable[int] | None = None,
) -> StepResult:
    """Perturb the glued pair window by window and assemble the new stress.

    For each bad index the flow is started at the centre of the overlap,
    the perturbation is built on the window levels and the new stress is
    checked against the stress equation.  Outside the windows the new pair
    is the glued pair, so only window levels are evaluated.  ``on_level``
    receives ``(t, fields)`` for every level (snapshots, custom metrics).
    """
    grid = gs.grid
    lam = check_resolution(grid, table, lam_next, cfg.res_factor)
    rows: list[dict] = []
    wins: list[dict] = []
    checks = {"defect": 0.0, "div_rel": 0.0, "roundtrip": 0.0, "det": 0.0, "phase": 0.0, "k0": 0.0, "O3": 0.0}
    timings = {"flows": 0.0, "perturbation": 0.0, "stress": 0.0}
    sup_next = sup_bar = 0.0
    for j in part.J if windows is None else windows:
        levels = window_levels(part, j, cfg.samples)
        t_c = min(levels, key=lambda s: abs(s - part.t(j) - part.eps_tau / 2))
        t0 = time.perf_counter()
        try:
            flow = compute_flows(
                lambda t: gs.velocity(t, interpolate=True),
                t_c,
                levels,
                substeps=cfg.flow_substeps,
                particles=cfg.particles,
                seed=cfg.seed + j,
                check_tol=cfg.check_tol,
                fd_order=cfg.fd_order,
            )
        except (SolverError, ValueError, KeyError) as exc:
            raise StageError("flows", f"window {j}: {exc}") from exc
        timings["flows"] += time.perf_counter() - t0
        for key in ("roundtrip", "det", "phase"):
            checks[key] = max(checks[key], flow.diagnostics[key])
        # perturbation without the time cutoff, at every level
        t0 = time.perf_counter()
        wt: list[Field] = []
        centre = len(levels) // 2
        amp_c = None
        eig = [np.inf, -np.inf]
        for i, t in enumerate(levels):
            Rb = gs.stress(t)
            try:
                am = amplitudes(Rb, flow, i, delta_next, 1.0, table.domain_radius)
            except StageError as exc:
                raise StageError("amplitudes", f"window {j}, t={t:.6g}: {exc}") from exc
            eig = [min(eig[0], am.eig[0]), max(eig[1], am.eig[1])]
            if i == centre:
                amp_c = am
            parts = assemble_perturbation(am, flow.phi(i), flow.grad_phi(i), table, lam, grid, t, cfg.res_factor)
            wt.append(Field.from_hat(grid, "vector", parts["w"].hat, t))
            if i % cfg.diag_every == 0 or i == centre:
                rho = _rho_value(part, j, t)
                rows.append(
                    {
                        "window": j,
                        "t": t,
                        "rho": rho,
                        "w_o": rho * sup_norm(parts["w_o"]),
                        "w_c": rho * sup_norm(parts["w_c"]),
                        "R_l_dist": am.distance,
                    }
                )
        timings["perturbation"] += time.perf_counter() - t0
        t0 = time.perf_counter()
        ts = np.array(levels)
        wmax = 0.0
        for i, t in enumerate(levels):
            rho = _rho_value(part, j, t)
            drho = _rho_value(part, j, t, 1)
            lo = max(0, min(i - cfg.fd_order // 2, len(levels) - cfg.fd_order - 1))
            idx = list(range(lo, lo + cfg.fd_order + 1))
            fw = fd_weights(ts[idx] - t, 1)
            dwt = Field.from_hat(grid, "vector", sum(c * wt[k].hat for c, k in zip(fw, idx)), t)
            w = wt[i] * rho
            dw = wt[i] * drho + dwt * rho
            vb = gs.velocity(t)
            Rb = gs.stress(t)
            terms = new_stress(vb, w, dw, Rb, cfg.nu, cfg.gamma, cfg.project_pressure)
            v1 = vb + w
            dv1 = gs.dvdt(t) + dw
            F = momentum_residual(v1, dv1, cfg.nu, cfg.gamma)
            defect = sup_norm(leray(F - _div_tensor(terms["R_total"])))
            checks["defect"] = max(checks["defect"], defect)
            divw = sup_norm(Field.from_hat(grid, "scalar", sum(w.hat[a] * ik(grid, a) for a in range(grid.d))))
            gradw = sup_norm(Field.from_hat(grid, "tensor2", np.stack([w.hat * ik(grid, b) for b in range(grid.d)], axis=1)))
            wmax = max(wmax, sup_norm(w))
            if gradw > 0:
                checks["div_rel"] = max(checks["div_rel"], divw / gradw)
            sR = sup_norm(terms["R_total"])
            sB = sup_norm(Rb)
            sup_next = max(sup_next, sR)
            sup_bar = max(sup_bar, sB)
            if i % cfg.diag_every == 0 or i == centre:
                row = next(r for r in rows if r["window"] == j and abs(r["t"] - t) < 1e-12)
                row.update({k: sup_norm(v) for k, v in terms.items() if k != "R_total"})
                row.update({"R_total": sR, "Rbar": sB, "defect": defect})
            if i == centre and rho == 1.0:
                od = oscillation_diagnostics(amp_c, flow.phi(i), flow.grad_phi(i), Rb, table, lam)
                checks["k0"] = max(checks["k0"], od["k0"])
                checks["O3"] = max(checks["O3"], od["O3"])
            if on_level is not None:
                on_level(t, {"v": v1, "w": w, "Rbar": Rb, **terms})
        timings["stress"] += time.perf_counter() - t0
        wins.append({"window": j, "kind": next((o.kind for o in part.overlaps if o.j == j), GOOD), "w_sup": wmax, "eig_min": eig[0], "eig_max": eig[1], **flow.diagnostics})
        if checks["defect"] > cfg.check_tol:
            raise StageError("new_stress", f"window {j}: new pair fails the stress equation (defect {checks['defect']:.3e})")
    ratio = sup_next / R_prev_sup if R_prev_sup > 0 else float("inf")
    return StepResult(R_prev_sup, sup_bar, sup_next, ratio, wins, rows, checks, timings)
