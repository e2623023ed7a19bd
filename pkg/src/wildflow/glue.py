"""Gluing exact local solutions in time.

On the grid ``t_j = j tau`` the bad indices ``J`` come from the interval
book; ``J*`` are those whose successor is also bad.  Each ``j`` in ``J*``
gets an exact solution started from the mollified velocity at ``t_j``,
and smooth cutoffs blend the pieces::

    vbar = chi_g v_q + sum_{j in J*} chi_j v_j .

Blending happens only on the overlap windows ``[t_j, t_j + eps tau]``,
``j`` in ``J``, which is where the glued stress lives.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import cutoff
from .calculus import antidivergence, biot_savart
from .fns import SolverError, Trajectory, fnsr_defect, solve_fns
from .field import Field, derive, holder_norm, multiply, sup_norm
from .schedule import IntervalBook, Schedule, SurrogateLevel

__all__ = [
    "TimePartition",
    "Overlap",
    "GluedSolution",
    "build_partition",
    "local_solutions",
    "glue_velocity",
    "glued_stress",
    "gluing_diagnostics",
    "write_report",
]

GOOD = "good"


@dataclass(frozen=True)
class Overlap:
    """Blending window ``[start, start + width]``: ``left`` fades out, ``right`` fades in."""

    j: int
    start: float
    width: float
    left: object  # GOOD or local index
    right: object

    @property
    def kind(self) -> str:
        if self.left == GOOD:
            return "good-bad"
        if self.right == GOOD:
            return "bad-good"
        return "bad-bad"

    @property
    def end(self) -> float:
        return self.start + self.width

    def contains(self, t: float) -> bool:
        return self.start <= t <= self.end


@dataclass(frozen=True)
class TimePartition:
    q: int
    T: float
    tau: float
    eps_tau: float
    J: tuple
    J_star: tuple
    tau_exact: Fraction | None = None
    eps_tau_exact: Fraction | None = None

    def t(self, j: int) -> float:
        return j * self.tau

    # cutoffs -------------------------------------------------------------
    def chi_b(self, j: int, t, m: int = 0) -> np.ndarray:
        """Rises on ``[t_j, t_j + eps tau]``, falls on ``[t_{j+1}, t_{j+1} + eps tau]``."""
        if j not in self.J_star:
            raise KeyError(f"{j} is not a glued index")
        et = self.eps_tau
        return cutoff.window(t, self.t(j), et, m) - cutoff.window(t, self.t(j + 1), et, m)

    def _runs(self) -> list[tuple[int, int]]:
        runs: list[list[int]] = []
        for j in sorted(self.J_star):
            if runs and runs[-1][1] == j - 1:
                runs[-1][1] = j
            else:
                runs.append([j, j])
        return [(a, b) for a, b in runs]

    def chi_g(self, t, m: int = 0) -> np.ndarray:
        """``1 - sum chi_b``, telescoped over runs of consecutive glued indices so it is exactly 0 between them."""
        t = np.asarray(t, dtype=float)
        out = np.ones_like(t) if m == 0 else np.zeros_like(t)
        et = self.eps_tau
        for a, b in self._runs():
            out = out - cutoff.window(t, self.t(a), et, m) + cutoff.window(t, self.t(b + 1), et, m)
        return out

    def rho(self, j: int, t, m: int = 0) -> np.ndarray:
        """1 on ``[t_j, t_j + eps tau]``, zero outside ``[t_j - eps tau, t_j + 2 eps tau]``."""
        et = self.eps_tau
        return cutoff.window(t, self.t(j) - et, et, m) - cutoff.window(t, self.t(j) + et, et, m)

    def partition_residual(self, ts) -> float:
        ts = np.asarray(ts, dtype=float)
        total = self.chi_g(ts) + sum(self.chi_b(j, ts) for j in self.J_star)
        return float(np.max(np.abs(total - 1.0)))

    def derivative_constants(self, N: int = 4, samples: int = 20001) -> dict:
        """``C_m = max |d^m chi| (eps tau)^m`` over all cutoffs, ``m = 1 .. N``."""
        out = {}
        if not self.J_star:
            return {m: 0.0 for m in range(1, N + 1)}
        lo = self.t(min(self.J_star)) - self.eps_tau
        hi = self.t(max(self.J_star) + 1) + 2 * self.eps_tau
        ts = np.linspace(lo, hi, samples)
        for m in range(1, N + 1):
            vals = [np.max(np.abs(self.chi_b(j, ts, m))) for j in self.J_star]
            vals.append(np.max(np.abs(self.chi_g(ts, m))))
            out[m] = float(max(vals) * self.eps_tau**m)
        return out

    # windows -------------------------------------------------------------
    @property
    def overlaps(self) -> list[Overlap]:
        out = []
        star = set(self.J_star)
        for j in self.J:
            right = j if j in star else GOOD
            left = j - 1 if (j - 1) in star else GOOD
            if left == GOOD and right == GOOD:
                continue
            out.append(Overlap(j, self.t(j), self.eps_tau, left, right))
        return out

    def overlap_at(self, t: float) -> Overlap | None:
        for ov in self.overlaps:
            if ov.contains(t):
                return ov
        return None

    def pieces_at(self, t: float) -> list[tuple[object, float]]:
        """Nonzero ``(label, weight)`` pairs of the partition at ``t``."""
        arr = np.array([t])
        out = []
        g = float(self.chi_g(arr)[0])
        if g != 0.0:
            out.append((GOOD, g))
        for j in self.J_star:
            w = float(self.chi_b(j, arr)[0])
            if w != 0.0:
                out.append((j, w))
        return out

    def perturbation_windows(self) -> list[tuple[int, float, float]]:
        et = self.eps_tau
        return [(j, self.t(j) - et, self.t(j) + 2 * et) for j in self.J]

    def modified_region(self) -> tuple[float, float] | None:
        """Hull of the times where the glued velocity may differ from ``v_q``."""
        if not self.J_star:
            return None
        return self.t(min(self.J_star)), self.t(max(self.J_star) + 1) + self.eps_tau


def build_partition(book: IntervalBook, s: Schedule, q: int) -> TimePartition:
    """Partition for level ``q`` from the level-``q`` book evolved one step."""
    from .schedule import evolve_bad_set

    if s.tau_exact is None:
        raise ValueError("partition needs exact times (surrogate or bookkeeping schedule)")
    tau = s.tau_exact[q + 1]
    et = s.eps_exact[q + 1] * tau
    prev = s.eps_exact[q] * s.tau_exact[q]
    r = prev / tau
    if r.denominator != 1:
        raise ValueError(f"eps_{q - 1} tau_{q - 1} / tau_{q} = {r} is not an integer")
    nxt = evolve_bad_set(book, s, q)
    return TimePartition(
        q=q,
        T=float(book.T),
        tau=float(tau),
        eps_tau=float(et),
        J=tuple(int(j) for j in nxt.indices),
        J_star=tuple(int(j) for j in nxt.star),
        tau_exact=tau,
        eps_tau_exact=et,
    )


# ---------------------------------------------------------------------------
# local solutions


def local_solutions(
    v_ell: Callable[[float], Field] | Trajectory,
    part: TimePartition,
    nu: float,
    gamma: float,
    dt: float,
    *,
    t_out: Callable[[int], Iterable[float]] | None = None,
    fine: Callable[[int], Sequence[tuple[float, float, float]]] | None = None,
    until: Callable[[int], float] | None = None,
    c_horizon: float | None = 0.1,
    alpha: float = 0.5,
    indices: Iterable[int] | None = None,
    compact: bool = False,
) -> dict[int, Trajectory]:
    """Exact solutions ``v_j`` from ``v_ell(t_j)`` for ``j`` in ``J*``.

    The local existence precondition is checked for the full lifetime
    ``2 tau``; integration stops at ``until(j)`` (default ``t_{j+2}``).
    """
    get = v_ell.at if isinstance(v_ell, Trajectory) else v_ell
    out = {}
    for j in part.J_star if indices is None else indices:
        tj = part.t(j)
        u0 = get(tj)
        if c_horizon is not None:
            h1 = holder_norm(u0, 1, alpha).value
            if h1 > 0 and 2 * part.tau > c_horizon / h1:
                raise SolverError(
                    f"local solution {j}: lifetime 2 tau = {2 * part.tau:.4g} exceeds c/|v_ell(t_j)|_(1+alpha) = {c_horizon / h1:.4g}"
                )
        t1 = part.t(j + 2) if until is None else until(j)
        tr = solve_fns(
            u0,
            nu,
            gamma,
            t1 - tj,
            dt,
            t0=tj,
            t_out=None if t_out is None else list(t_out(j)),
            fine=() if fine is None else fine(j),
            c_horizon=None,
            compact=compact,
        )
        tr.meta["j"] = j
        out[j] = tr
    return out


# ---------------------------------------------------------------------------
# glued fields


class GluedSolution:
    """Lazy evaluation of the glued velocity, its time derivative and stress.

    ``v_q`` is a trajectory of the previous velocity; ``R_q`` its stress
    (optional, zero where the partition uses ``v_q`` by hypothesis).
    """

    def __init__(self, part: TimePartition, v_q: Trajectory, locals_: dict[int, Trajectory], R_q: Trajectory | None = None, fd_order: int = 6):
        self.part = part
        self.v_q = v_q
        self.locals = locals_
        self.R_q = R_q
        self.fd_order = fd_order
        self.grid = v_q.grid

    def _traj(self, label) -> Trajectory:
        if label == GOOD:
            return self.v_q
        if label not in self.locals:
            raise KeyError(f"local solution {label} missing")
        return self.locals[label]

    def _piece(self, label, t: float, interpolate: bool = False) -> Field:
        tr = self._traj(label)
        if interpolate and not tr.has(t):
            return tr.interpolate(t, self.fd_order)
        if not tr.has(t):
            raise ValueError(f"coverage gap: {'v_q' if label == GOOD else f'v_{label}'} has no sample at t={t:.10g}")
        return tr.at(t)

    def velocity(self, t: float, interpolate: bool = False) -> Field:
        """Glued velocity; ``interpolate`` allows times between samples."""
        pieces = self.part.pieces_at(t)
        if len(pieces) == 1 and pieces[0][1] == 1.0:
            return self._piece(pieces[0][0], t, interpolate)
        out = None
        for label, w in pieces:
            term = self._piece(label, t, interpolate) * w
            out = term if out is None else out + term
        return out

    def dvdt(self, t: float) -> Field:
        arr = np.array([t])
        out = None
        for label in [GOOD] + list(self.part.J_star):
            w = self.part.chi_g(arr) if label == GOOD else self.part.chi_b(label, arr)
            dw = self.part.chi_g(arr, 1) if label == GOOD else self.part.chi_b(label, arr, 1)
            w, dw = float(w[0]), float(dw[0])
            if w == 0.0 and dw == 0.0:
                continue
            tr = self._traj(label)
            term = None
            if w != 0.0:
                term = tr.derivative(t, order=self.fd_order) * w
            if dw != 0.0:
                x = self._piece(label, t) * dw
                term = x if term is None else term + x
            out = term if out is None else out + term
        return out if out is not None else Field.zeros(self.grid, "vector", t)

    def stress(self, t: float) -> Field:
        """``chi' antidiv(d) - chi (1 - chi) d x d`` on overlaps, ``chi_g R_q`` elsewhere."""
        ov = self.part.overlap_at(t)
        arr = np.array([t])
        base = None
        if self.R_q is not None:
            g = float(self.part.chi_g(arr)[0])
            if g != 0.0 and self.R_q.has(t):
                base = self.R_q.at(t) * g
        if ov is None:
            return base if base is not None else Field.zeros(self.grid, "tensor2", t)
        chi = float(cutoff.window(arr, ov.start, ov.width)[0])
        dchi = float(cutoff.window(arr, ov.start, ov.width, 1)[0])
        if chi * (1 - chi) == 0.0 and dchi == 0.0:
            return base if base is not None else Field.zeros(self.grid, "tensor2", t)
        diff = self._piece(ov.right, t) - self._piece(ov.left, t)
        R = antidivergence(diff) * dchi - multiply(diff, diff, "outer") * (chi * (1 - chi))
        return R if base is None else R + base


def glue_velocity(v_q: Trajectory, locals_: dict[int, Trajectory], part: TimePartition, times: Iterable[float]) -> Trajectory:
    gs = GluedSolution(part, v_q, locals_)
    out = Trajectory(v_q.grid, "vector", v_q.nu, v_q.gamma)
    for t in times:
        out.add(t, gs.velocity(float(t)))
    return out


def glued_stress(
    locals_: dict[int, Trajectory],
    v_q: Trajectory,
    part: TimePartition,
    times: Iterable[float],
    R_q: Trajectory | None = None,
    check_tol: float | None = 1e-6,
    nu: float | None = None,
    gamma: float | None = None,
) -> Trajectory:
    """Glued stress sampled at ``times``; with ``check_tol`` the pair is residual-checked."""
    gs = GluedSolution(part, v_q, locals_, R_q)
    out = Trajectory(v_q.grid, "tensor2", v_q.nu, v_q.gamma)
    for t in times:
        out.add(t, gs.stress(float(t)))
    if check_tol is not None:
        nu = v_q.nu if nu is None else nu
        gamma = v_q.gamma if gamma is None else gamma
        res = fnsr_defect(lambda t: (gs.velocity(t), gs.dvdt(t)), out, nu, gamma)
        out.meta["defect"] = res
        if res["defect"] > check_tol:
            raise ValueError(f"glued pair fails the stress equation: defect {res['defect']:.3e} at t={res['at']}")
    return out


# ---------------------------------------------------------------------------
# diagnostics


def gluing_diagnostics(
    gs: GluedSolution,
    v_ell: Callable[[float], Field] | Trajectory,
    level: SurrogateLevel,
    times: Iterable[float],
    Ns: Sequence[int] = (0, 1),
    Rbar: Trajectory | None = None,
) -> list[dict]:
    """Measured norms against the gluing estimates; rows ``(q, window, estimate, measured, rhs, ratio)``.

    The right-hand sides use the level's ``eps tau``, ``delta``, ``delta_next``,
    ``lam`` and ``ell``; ratios are reported, not asserted.  The transport
    derivative of the stress needs ``Rbar`` sampled densely around ``times``.
    """
    get = v_ell.at if isinstance(v_ell, Trajectory) else v_ell
    a = level.alpha
    et = float(level.eps_tau)
    dq, dn, lam, ell = level.delta, level.delta_next, level.lam, level.ell
    rows = []

    def add(window, est, measured, rhs):
        ratio = measured / rhs if rhs > 0 else float("nan")
        rows.append({"q": level.q, "window": window, "estimate": est, "measured": measured, "rhs": rhs, "ratio": ratio})

    for t in times:
        ov = gs.part.overlap_at(t)
        wid = f"{ov.kind}:{ov.j}" if ov is not None else "none"
        vb = gs.velocity(t)
        vl = get(t)
        R = gs.stress(t)
        for N in Ns:
            add(wid, f"vbar-vell N={N}", holder_norm(vb - vl, N, a).value, et * dn * ell ** (-N - 1 + a))
            add(wid, f"vbar N+1={N + 1}", holder_norm(vb, N + 1, a).sup_part, dq**0.5 * lam * ell ** (-N))
            add(wid, f"Rbar N={N}", holder_norm(R, N, a).value, dn * ell ** (-N + a))
            if Rbar is not None:
                DtR = Rbar.derivative(t) + multiply(vb, R, "advect")
                add(wid, f"DtRbar N={N}", holder_norm(DtR, N, a).value, dn * ell ** (-N + a) / et)
            for label, w in gs.part.pieces_at(t):
                if label == GOOD:
                    continue
                z = biot_savart(gs._piece(label, t) - vl)
                add(wid, f"z{label}-zell N={N}", holder_norm(z, N, a).value, et * dn * ell ** (-N + a))
    return rows


def write_report(rows: list[dict], path: str | Path) -> None:
    cols = ["q", "window", "estimate", "measured", "rhs", "ratio"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        for r in rows:
            w.writerow({k: r[k] for k in cols})
