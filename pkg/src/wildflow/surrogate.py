"""One mollify-glue-perturb step on a grid-sized surrogate.

The starting pair blends two unrelated solutions ``V1``, ``V2`` with a
sharp time cutoff, so its stress is supported on the short transition.
Frequencies and amplitudes are small hand-picked numbers; the interval
bookkeeping is the exact one of :mod:`wildflow.schedule`.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from fractions import Fraction
from pathlib import Path
from typing import Callable

import numpy as np

from . import io
from .calculus import antidivergence, leray
from .field import Field, Grid, holder_norm, mollify, multiply, sup_norm
from .fns import BlendedTrajectory, TimeCutoff, Trajectory, fnsr_defect, solve_fns
from .glue import GluedSolution, build_partition, gluing_diagnostics, local_solutions
from .mikado import beltrami_table, build_direction_set, tabulate_fourier
from .perturb import StageError, StepConfig, iteration_step, window_levels
from .schedule import SurrogateLevel, evolve_bad_set, initial_book

log = logging.getLogger(__name__)

__all__ = ["SurrogateConfig", "random_solenoidal", "run_surrogate"]


@dataclass
class SurrogateConfig:
    n: int = 64
    nu: float = 0.01
    gamma: float = 0.3
    T: Fraction = Fraction(1)
    tau: Fraction = Fraction(1, 15)
    eps: Fraction = Fraction(3, 16)
    lam: int = 2
    lam_next: int = 8
    delta: float = 1.0
    delta_next: float = 0.0  # 0: chosen from the glued stress
    ell: float = 0.1
    alpha: float = 0.3
    amplitude: float = 0.5
    kmax: int = 1
    eta_start: float = 0.44
    eta_width: float = 0.0625  # in units of eps tau
    dt: float = 1 / 80
    samples: int = 4
    eta_samples: int = 16
    table: str = "beltrami"
    pipe_K: int = 4
    flow_substeps: int = 2
    particles: int = 32
    project_pressure: bool = True
    domain_fill: float = 0.3
    check_tol: float = 1e-6
    gluing_norms: bool = True
    snapshots: bool = True
    seed: int = 0

    @classmethod
    def schema(cls) -> list[io.Option]:
        pos = lambda x: x > 0  # noqa: E731
        out = []
        for f in fields(cls):
            kind = f.type if isinstance(f.type, type) else {"int": int, "float": float, "str": str, "bool": bool, "Fraction": Fraction}[f.type]
            chk = None
            if f.name in ("n", "samples", "eta_samples", "particles", "flow_substeps", "nu", "tau", "ell", "amplitude", "eta_width", "dt", "check_tol", "delta"):
                chk = pos
            elif f.name == "gamma":
                chk = lambda g: 0 < g <= 1  # noqa: E731
            elif f.name == "table":
                chk = lambda s: s in ("beltrami", "pipes")  # noqa: E731
            out.append(io.Option(f.name, kind, f.default, check=chk))
        return out

    @classmethod
    def from_mapping(cls, raw: dict) -> "SurrogateConfig":
        return cls(**io.parse_options(raw, cls.schema(), allow_unknown=True))


def random_solenoidal(grid: Grid, amplitude: float, kmax: int, rng: np.random.Generator) -> Field:
    """Mean-zero divergence-free field on modes ``|k|_inf <= kmax`` with sup norm ``amplitude``."""
    h = np.zeros((grid.d,) + grid.hat_shape, dtype=complex)
    m = np.ones(grid.hat_shape, dtype=bool)
    for k in grid.modes:
        m &= np.abs(k) <= kmax
    m &= ~grid.zero_mask
    cnt = int(m.sum())
    h[:, m] = rng.normal(size=(grid.d, cnt)) + 1j * rng.normal(size=(grid.d, cnt))
    f = Field(grid, "vector", Field.from_hat(grid, "vector", h).values)  # real part only
    f = leray(f)
    f = f.with_hat(f.hat * ~grid.zero_mask)
    return f * (amplitude / sup_norm(f))


def _stage(name: str, fn: Callable, *a, **kw):
    try:
        return fn(*a, **kw)
    except StageError:
        raise
    except (ValueError, RuntimeError, KeyError) as exc:
        raise StageError(name, str(exc)) from exc


def run_surrogate(cfg: SurrogateConfig, out_dir: str | Path | None = None, progress: Callable[[str], None] | None = None) -> dict:
    """Run the step and return a summary dictionary (also written to ``out_dir``)."""
    say = progress or (lambda msg: log.info(msg))
    clock = time.perf_counter()
    timings: dict[str, float] = {}

    def lap(name: str) -> None:
        nonlocal clock
        now = time.perf_counter()
        timings[name] = timings.get(name, 0.0) + now - clock
        clock = now

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        if cfg.snapshots:
            (out / "snapshots").mkdir(exist_ok=True)
    files: list[str] = []
    grid = Grid(3, cfg.n)

    # -- bookkeeping
    level = SurrogateLevel(0, Fraction(cfg.T), Fraction(cfg.tau), Fraction(cfg.eps), cfg.lam, cfg.lam_next, cfg.delta, max(cfg.delta_next, 1e-300), cfg.ell, cfg.alpha)
    sched = _stage("schedule", level.schedule)
    book0 = initial_book(sched)
    book1 = evolve_bad_set(book0, sched, 0)
    part = _stage("partition", build_partition, book0, sched, 0)
    et = part.eps_tau
    eta = TimeCutoff(cfg.eta_start, cfg.eta_width * et)
    ts_eta = np.linspace(eta.start, eta.end, 65)
    if np.any(part.chi_g(ts_eta) != 0.0):
        raise io.ConfigError("eta_start", "the initial transition must lie where the glued velocity replaces v_q")
    checks: dict = {
        "nested": book0.contains_book(book1),
        "measure_ratio": float(book1.measure() / book0.measure()),
        "eps": float(cfg.eps),
        "J": list(part.J),
        "J_star": list(part.J_star),
    }
    say(f"bad indices J={part.J}, J*={part.J_star}; overlap length {et:.5g}")

    # -- time levels
    levels = {j: window_levels(part, j, cfg.samples) for j in part.J}
    he = eta.width / cfg.eta_samples
    eta_levels = [eta.start + m * he for m in range(-3, cfg.eta_samples + 4)]
    good_times = [float(x) for x in (Fraction(cfg.T) / 5, 3 * Fraction(cfg.T) / 10)]
    good_side = {ov.j for ov in part.overlaps if "good" in ov.kind}
    need_q: set[float] = set(eta_levels) | set(good_times) | {part.t(j) for j in part.J_star}
    centres = {j: min(levels[j], key=lambda s: abs(s - part.t(j) - et / 2)) for j in part.J}
    for j in part.J:
        lv = levels[j]
        need_q |= set(lv) if j in good_side else set(lv[:: cfg.samples]) | {centres[j]}
    horizon = max(need_q) + et
    h = et / cfg.samples
    fine_w = [(lv[0], lv[-1], h) for lv in levels.values()]
    fine_e = [(eta_levels[0], eta_levels[-1], he)]

    # -- the two solutions and the initial pair
    rng = np.random.default_rng(cfg.seed)
    U1 = random_solenoidal(grid, cfg.amplitude, cfg.kmax, rng)
    U2 = random_solenoidal(grid, cfg.amplitude, cfg.kmax, rng)
    t1 = sorted(t for t in need_q if t < eta.end + 1e-12)
    t2 = sorted(t for t in need_q if t > eta.start - 1e-12)
    say(f"solving V1 to t={max(t1):.4g} and V2 to t={horizon:.4g} on {cfg.n}^3")
    V1 = _stage("solve", solve_fns, U1, cfg.nu, cfg.gamma, max(t1) + 1e-9, cfg.dt, t_out=t1, fine=fine_w + fine_e, c_horizon=None, compact=True)
    V2 = _stage("solve", solve_fns, U2, cfg.nu, cfg.gamma, horizon, cfg.dt, t_out=t2, fine=fine_w + fine_e, c_horizon=None, compact=True)
    lap("solve")
    v_q = BlendedTrajectory(V1, V2, eta)
    R_q = Trajectory(grid, "tensor2", cfg.nu, cfg.gamma, compact=True)
    for t in eta_levels:
        e = float(eta(np.array([t]))[0])
        de = float(eta(np.array([t]), 1)[0])
        if de == 0.0 and e * (1 - e) == 0.0:
            R_q.add(t, Field.zeros(grid, "tensor2", t))
            continue
        diff = V1.at(t) - V2.at(t)
        R_q.add(t, antidivergence(diff) * de - multiply(diff, diff, "outer") * (e * (1 - e)))
    sup_R0 = R_q.sup()
    inner = eta_levels[3:-3]
    d0 = fnsr_defect(lambda t: (v_q.at(t), v_q.derivative(t)), R_q, cfg.nu, cfg.gamma, times=inner)
    checks["initial_defect"] = d0["defect"]
    say(f"initial pair: sup R_0 = {sup_R0:.4g}, stress-equation defect {d0['defect']:.2e}")
    lap("initial pair")

    # -- gluing
    v_ell = lambda t: mollify(v_q.at(t), cfg.ell)  # noqa: E731

    def t_out(j):
        own = [t for t in levels[j] if t >= part.t(j) - 1e-12]
        nxt = levels.get(j + 1, window_levels(part, j + 1, cfg.samples))
        return own + nxt + [t for t in eta_levels if part.t(j) < t < nxt[-1]]

    def fine(j):
        nxt = levels.get(j + 1, window_levels(part, j + 1, cfg.samples))
        return [(part.t(j), levels[j][-1], h), (nxt[0], nxt[-1], h), fine_e[0]]

    def until(j):
        nxt = levels.get(j + 1, window_levels(part, j + 1, cfg.samples))
        return nxt[-1]

    say("local solutions")
    locs = _stage("local_solutions", local_solutions, v_ell, part, cfg.nu, cfg.gamma, cfg.dt, t_out=t_out, fine=fine, until=until, c_horizon=None, compact=True)
    for j in part.J_star:
        u = v_ell(part.t(j))
        checks.setdefault("lifetime_ratio", 0.0)
        checks["lifetime_ratio"] = max(checks["lifetime_ratio"], 2 * part.tau * holder_norm(u, 1, 0.5).value)
    lap("local solutions")
    gs = GluedSolution(part, v_q, locs, R_q)
    all_levels = sorted(t for lv in levels.values() for t in lv)
    outside = [t for t in all_levels if part.overlap_at(t) is None]
    checks["Rbar_outside"] = max((sup_norm(gs.stress(t)) for t in outside), default=0.0)
    checks["vbar_equals_vq_on_good"] = all(np.array_equal(gs.velocity(t).values, v_q.at(t).values) for t in good_times)
    dg = fnsr_defect(lambda t: (gs.velocity(t), gs.dvdt(t)), _stress_traj(gs, all_levels + inner), cfg.nu, cfg.gamma)
    checks["glued_defect"] = dg["defect"]
    sup_bar = max(sup_norm(gs.stress(t)) for t in all_levels)
    say(f"glued pair: sup Rbar = {sup_bar:.4g}, defect {dg['defect']:.2e}, Rbar outside overlaps {checks['Rbar_outside']:.1e}")
    lap("gluing")
    glue_rows = []
    if cfg.gluing_norms:
        glue_rows = gluing_diagnostics(gs, v_ell, level, [centres[ov.j] for ov in part.overlaps], Ns=(0,))
        lap("gluing diagnostics")

    # -- perturbation
    table = beltrami_table() if cfg.table == "beltrami" else tabulate_fourier(build_direction_set(3), cfg.pipe_K)
    delta_next = cfg.delta_next or sup_bar / (cfg.domain_fill * table.domain_radius)
    step_cfg = StepConfig(
        nu=cfg.nu,
        gamma=cfg.gamma,
        samples=cfg.samples,
        flow_substeps=cfg.flow_substeps,
        particles=cfg.particles,
        project_pressure=cfg.project_pressure,
        check_tol=cfg.check_tol,
        seed=cfg.seed,
    )
    dev = {"v": 0.0, "v1": 0.0}

    def on_level(t: float, flds: dict) -> None:
        if v_q.has(t):
            diff = flds["v"] - v_q.at(t)
            dev["v"] = max(dev["v"], sup_norm(diff))
            dev["v1"] = max(dev["v1"], holder_norm(diff, 1, cfg.alpha).sup_part) if t in snap_times else dev["v1"]
        if out is not None and cfg.snapshots and t in snap_times:
            for key in ("v", "R_total"):
                name = f"snapshots/{key}_q1_t{t:.6f}.npz"
                io.save_snapshot(flds[key], out / name, q=1, field=key)
                files.append(name)

    snap_times = set(centres.values())
    say(f"perturbation: lambda={cfg.lam_next}, delta_next={delta_next:.4g}, table={table.kind}")
    res = iteration_step(gs, part, table, cfg.lam_next, delta_next, step_cfg, R_prev_sup=sup_R0, on_level=on_level)
    lap("perturbation")
    checks.update({k: v for k, v in res.checks.items()})
    checks["w_outside_windows"] = max(
        float(np.abs(part.rho(j, np.array(good_times + inner))).max()) for j in part.J
    )
    M = (dev["v"] + dev["v1"] / cfg.lam_next) / math.sqrt(delta_next)
    summary = {
        "sup_R_q": sup_R0,
        "sup_Rbar": sup_bar,
        "sup_R_next": res.sup_R_next,
        "ratio": res.ratio,
        "ratio_to_glued": res.sup_R_next / sup_bar if sup_bar > 0 else float("nan"),
        "delta_next": delta_next,
        "lam_next": cfg.lam_next,
        "M_measured": M,
        "checks": checks,
        "timings": {**timings, **{f"step.{k}": v for k, v in res.timings.items()}},
        "windows": res.windows,
    }
    say(f"sup R_q = {sup_R0:.4g}, sup Rbar = {sup_bar:.4g}, sup R_(q+1) = {res.sup_R_next:.4g}, ratio {res.ratio:.3f}")
    if out is not None:
        files.append(io.write_csv(res.rows, out / "stage_report.csv").name)
        files.append(io.write_csv(glue_rows, out / "gluing_report.csv", ["q", "window", "estimate", "measured", "rhs", "ratio"]).name)
        files.append(io.write_jsonl(res.windows, out / "windows.jsonl").name)
        flat = {k: v for k, v in summary.items() if k not in ("checks", "timings", "windows")}
        flat.update({f"check.{k}": v for k, v in checks.items()})
        files.append(io.write_jsonl([flat], out / "summary.jsonl").name)
    summary["files"] = files
    summary["rows"] = res.rows
    summary["gluing_rows"] = glue_rows
    return summary


def _stress_traj(gs: GluedSolution, times) -> Trajectory:
    tr = Trajectory(gs.grid, "tensor2", compact=True)
    for t in sorted(set(times)):
        tr.add(t, gs.stress(t))
    return tr
