"""Acceptance criteria 1-10.  Each test records one PASS/FAIL line, printed at the end of the run."""

import math
import time
from fractions import Fraction

import numpy as np
import pytest

from conftest import record
from wildflow.calculus import IDENTITIES, identity_suite, random_band_limited
from wildflow.field import Field, Grid
from wildflow.mikado import MIKADO_PROPERTIES, build_direction_set, property_suite, tabulate_fourier
from wildflow.perturb import Amplitudes, compute_flows, lagrangian_stress, oscillation_diagnostics
from wildflow.schedule import (
    ExponentSet,
    alpha_ceiling,
    beta1_window,
    bookkeeping_schedule,
    box_dimension_estimate,
    check_ledger,
    compute_schedule,
    dimension_bound,
    evolve_books,
    find_a0,
    is_admissible,
    suggest_exponents,
)
from wildflow.surrogate import random_solenoidal


def test_criterion_01_ledger_certified():
    t0 = time.perf_counter()
    e = suggest_exponents(0.2, 0.3)
    a0 = find_a0(e, 40)
    table = check_ledger(compute_schedule(e.with_log_a(a0), 40))
    # larger a only widens the margins; spot-check two
    above = [check_ledger(compute_schedule(e.with_log_a(a0 * f), 40)).certified() for f in (2.0, 10.0)]
    dt = time.perf_counter() - t0
    ok = is_admissible(e) and table.certified() and all(above) and table.min_margin() >= math.log(10) and dt < 1.0
    record(1, ok, f"b={e.b:.4g} sigma={e.sigma:.3g} alpha={e.alpha:.3g}, ln a0={a0:.4g}, min log-margin {table.min_margin():.3f}, {dt:.2f}s")
    assert ok


def _extreme(beta, gamma=0.1):
    b = 1.001
    return ExponentSet(beta, gamma, b, 0.999 * ExponentSet(beta, gamma, b, 0.0, 0.0).sigma_sup(), 1e-8)


def test_criterion_02_dimension():
    t0 = time.perf_counter()
    errs = []
    for beta in (0.0, 0.1, 0.2, 0.3):
        D, target = dimension_bound(_extreme(beta))
        errs.append(abs(D - target))
    t_zero = dimension_bound(_extreme(0.0))[1]
    t_third = dimension_bound(_extreme(1 / 3 - 1e-9))[1]
    e = suggest_exponents(0.2, 0.3)
    s = compute_schedule(e.with_log_a(find_a0(e, 40)), 40)
    est = box_dimension_estimate(schedule=s)["trajectory"][25]
    rel = abs(est / dimension_bound(e)[0] - 1)
    dt = time.perf_counter() - t0
    ok = max(errs) < 1e-2 and t_zero == 0.5 and abs(t_third - 1) < 1e-8 and rel < 0.02 and dt < 1.0
    record(2, ok, f"max |D - limit| {max(errs):.2e}, limits {t_zero:.6g}/{t_third:.6g}, q=25 estimate off by {rel:.2%}, {dt:.2f}s")
    assert ok


def _random_admissible(rng):
    while True:
        beta = rng.uniform(0.02, 0.32)
        gamma = rng.uniform(0.01, (1 - beta) / 2 - 0.05)
        try:
            e = suggest_exponents(beta, gamma)
        except ValueError:
            continue
        b = 1 + rng.uniform(0.05, 0.95) * (e.b - 1) / 0.5
        sigma = rng.uniform(0.05, 0.95) * ExponentSet(beta, gamma, b, 0.0, 0.0).sigma_sup()
        alpha = rng.uniform(0.05, 0.95) * 0.5 * alpha_ceiling(beta, gamma, b, sigma)
        out = ExponentSet(beta, gamma, b, sigma, alpha)
        if is_admissible(out):
            return out


def test_criterion_03_beta1_window():
    rng = np.random.default_rng(0)
    worst = -math.inf
    bad = 0
    for _ in range(1000):
        e = _random_admissible(rng)
        lo, hi = beta1_window(e)
        gap = hi - (1 - e.beta) / 2
        worst = max(worst, gap)
        bad += not (lo < hi and gap < 0)
    record(3, bad == 0, f"1000 admissible configs, {bad} violations, largest upper - (1-beta)/2 = {worst:.3g}")
    assert bad == 0


def test_criterion_04_operator_identities():
    t0 = time.perf_counter()
    rows = identity_suite(n=64, samples=50, seed=0)
    dt = time.perf_counter() - t0
    worst = {k: max(r["residual"] for r in rows if r["identity"] == k) for k in IDENTITIES}
    ok = max(worst.values()) <= 1e-10 and dt < 30
    record(4, ok, f"worst residual {max(worst.values()):.2e} ({max(worst, key=worst.get)}), {dt:.1f}s")
    assert ok


def test_criterion_05_mikado_suite():
    t0 = time.perf_counter()
    rows = property_suite(samples=20, seed=0)
    dt = time.perf_counter() - t0
    worst = {p: max(r["residual"] for r in rows if r["property"] == p) for p in MIKADO_PROPERTIES}
    fails = [p for p, v in worst.items() if v > (1e-8 if p.startswith("moment") else 1e-10)]
    ok = not fails and dt < 60
    record(5, ok, f"{len(MIKADO_PROPERTIES)} properties x 20 samples, failing {fails or 'none'}, {dt:.1f}s")
    assert ok


def test_criterion_06_solver():
    import test_fns as tf

    from wildflow.field import sup_norm
    from wildflow.fns import fnsr_defect, residual_stress, solve_fns, Trajectory

    g = Grid(3, 32)
    u0 = tf.shear(g, 3)
    traj = solve_fns(u0, tf.NU, tf.GAMMA, 0.2, 0.01, t_out=[0.2], c_horizon=None)
    shear_err = sup_norm(traj.at(0.2) - u0 * float(np.exp(-tf.NU * (6 * np.pi) ** (2 * tf.GAMMA) * 0.2)))

    g = Grid(3, 16)
    u0 = random_solenoidal(g, 1.0, 2, np.random.default_rng(0))
    ref = tf._ivp_oracle(u0, 0.25)
    dts = np.array([0.25 / 8, 0.25 / 16, 0.25 / 32])
    errs = [sup_norm(solve_fns(u0, tf.NU, tf.GAMMA, 0.25, dt, t_out=[0.25], c_horizon=None).at(0.25) - ref) for dt in dts]
    order = np.polyfit(np.log(dts), np.log(errs), 1)[0]

    rng = np.random.default_rng(1)
    a, b = random_solenoidal(g, 1.0, 2, rng), random_solenoidal(g, 1.0, 2, rng)
    v = Trajectory(g, "vector", tf.NU, tf.GAMMA)
    ts = np.linspace(0, 0.1, 41)
    for t in ts:
        v.add(t, a * float(np.cos(3 * t)) + b * float(t**2))
    R = residual_stress(v, tf.NU, tf.GAMMA, times=ts[5:-5])
    defect = fnsr_defect(v, R, tf.NU, tf.GAMMA, times=ts[5:-5])["defect"]

    ok = shear_err < 1e-8 and order >= 3.5 and defect <= 1e-6
    record(6, ok, f"shear error {shear_err:.1e}, order {order:.2f}, residual-stress defect {defect:.1e}")
    assert ok


def _check(run, key):
    return run["summary"].get(f"check.{key}")


def test_criterion_07_gluing(surrogate_run):
    s = surrogate_run["summary"]
    assert s, surrogate_run["output"]
    outside, exact, defect = _check(surrogate_run, "Rbar_outside"), _check(surrogate_run, "vbar_equals_vq_on_good"), _check(surrogate_run, "glued_defect")
    ok = outside <= 1e-6 and exact is True and defect <= 1e-6
    record(7, ok, f"n=64 lambda={s['lam_next']}: Rbar outside overlaps {outside:.1e}, vbar=v_q on good set {exact}, defect {defect:.1e}")
    assert ok


def test_criterion_08_perturbation(surrogate_run):
    s = surrogate_run["summary"]
    assert s, surrogate_run["output"]
    div_rel, w_out = _check(surrogate_run, "div_rel"), _check(surrogate_run, "w_outside_windows")

    # transported phase for a smooth glued velocity, resolved in time
    g = Grid(3, 16)
    steady = random_solenoidal(g, 1.0, 1, np.random.default_rng(0))
    fp = compute_flows(lambda t: steady, 0.0, [m / 512 for m in range(-8, 9)], substeps=2, particles=8)
    phase = fp.diagnostics["phase"]

    # frozen coefficients with the pipe table
    phi = np.stack(g.mesh())
    eye = np.eye(3).reshape(3, 3, 1, 1, 1) * np.ones((1, 1) + g.shape)
    T = random_band_limited(g, "tensor2", 1, np.random.default_rng(5)).values
    Rb = Field(g, "tensor2", 0.15 * (T + np.swapaxes(T, 0, 1)))
    amp = Amplitudes(lagrangian_stress(Rb, eye, 2.0), math.sqrt(2.0), (0, 0), 0)
    od = oscillation_diagnostics(amp, phi, eye, Rb, tabulate_fourier(build_direction_set(3), 4), 2)

    ok = div_rel <= 1e-8 and w_out == 0.0 and phase <= 1e-6 and od["O3"] <= 1e-10 and od["k0"] <= 1e-8
    record(
        8,
        ok,
        f"div w rel {div_rel:.1e}, cutoff outside windows {w_out:g}, smooth-flow phase {phase:.1e} "
        f"(run phase {_check(surrogate_run, 'phase'):.1e}), pipe O3 {od['O3']:.1e}, k=0 {od['k0']:.1e}",
    )
    assert ok


def test_criterion_09_end_to_end(surrogate_run):
    s = surrogate_run["summary"]
    assert s, surrogate_run["output"]
    secs = surrogate_run["seconds"]
    ok = surrogate_run["exit_code"] == 0 and secs < 600 and s["sup_R_next"] < s["sup_R_q"]
    record(9, ok, f"sup R_q {s['sup_R_q']:.4g} -> sup R_q+1 {s['sup_R_next']:.4g} (ratio {s['ratio']:.3f}), {secs:.0f}s")
    assert ok


def _random_schedule(rng):
    eps = [Fraction(int(rng.integers(1, 10)), int(rng.integers(46, 61))) for _ in range(3)]
    ratios = [int(rng.integers(1, 4))] + [int(rng.integers(2, 7)) for _ in range(2)]
    return bookkeeping_schedule(1, eps, ratios)


def test_criterion_10_bookkeeping():
    rng = np.random.default_rng(0)
    t0 = time.perf_counter()
    nested = lengths = eps_measure = five_eps_measure = 0
    worst = Fraction(0)
    for _ in range(1000):
        s = _random_schedule(rng)
        books = evolve_books(s)
        for q, (a, b) in enumerate(zip(books, books[1:])):
            eps = s.eps_exact[q + 1]
            L = 5 * eps * s.tau_exact[q + 1]
            nested += not a.contains_book(b)
            lengths += not all(hi - lo == L for lo, hi in b.intervals())
            eps_measure += b.measure() > eps * a.measure()
            five_eps_measure += b.measure() > 5 * eps * a.measure()
            worst = max(worst, b.measure() / (eps * a.measure()))
    dt = time.perf_counter() - t0
    ok = nested == lengths == eps_measure == 0 and dt < 5
    record(
        10,
        ok,
        f"1000 schedules: nesting failures {nested}, length failures {lengths}, "
        f"|B_q+1| > eps|B_q| in {eps_measure} steps (max ratio {float(worst):.3g}; "
        f"bound 5 eps violated {five_eps_measure}), {dt:.2f}s",
    )
    assert ok
