from fractions import Fraction

import numpy as np
import pytest

from wildflow.field import Grid, mollify, sup_norm
from wildflow.fns import Trajectory, solve_fns
from wildflow.glue import GOOD, GluedSolution, build_partition, glued_stress, local_solutions
from wildflow.perturb import window_levels
from wildflow.schedule import bookkeeping_schedule, evolve_bad_set, initial_book
from wildflow.surrogate import random_solenoidal

S = bookkeeping_schedule(1, [Fraction(3, 16)], [1])
BOOK = initial_book(S)
PART = build_partition(BOOK, S, 0)


def test_reference_partition_indices():
    assert PART.J == (6, 7, 8, 9)
    assert PART.J_star == (6, 7, 8)
    assert PART.eps_tau == pytest.approx(0.0125)


def test_partition_of_unity():
    ts = np.linspace(0, 1, 20001)
    assert PART.partition_residual(ts) < 1e-14


def test_good_cutoff_vanishes_between_overlaps():
    et = PART.eps_tau
    ts = np.linspace(PART.t(6) + et, PART.t(9), 501)
    assert np.all(PART.chi_g(ts) == 0.0)
    inside = np.linspace(PART.t(7) + et, PART.t(8), 101)
    assert np.all(PART.chi_b(7, inside) == 1.0)


def test_cutoff_derivative_constant():
    C = PART.derivative_constants(N=2)
    assert 1.0 <= C[1] <= 4.0


def test_windows_inside_bad_set():
    (lo, hi), = BOOK.intervals()
    et = PART.eps_tau_exact
    for j in PART.J:
        tj = j * PART.tau_exact
        assert lo <= tj - 2 * et and tj + 3 * et <= hi
    assert [o.kind for o in PART.overlaps] == ["good-bad", "bad-bad", "bad-bad", "bad-good"]


def test_chi_b_rejects_unglued_index():
    with pytest.raises(KeyError):
        PART.chi_b(9, 0.5)


def test_partition_needs_integer_ratio():
    s = bookkeeping_schedule(1, [Fraction(3, 16)], [1])
    s.tau_exact[1] = s.tau_exact[1] * Fraction(2, 3)
    with pytest.raises(ValueError):
        build_partition(initial_book(s), s, 0)


NU, GAMMA = 0.05, 0.5


@pytest.fixture(scope="module")
def small_glue():
    """n=16 gluing of an exact solution against local solutions from its mollification."""
    g = Grid(3, 16)
    u0 = random_solenoidal(g, 1.0, 2, np.random.default_rng(0))
    levels = {j: window_levels(PART, j, 8) for j in PART.J}
    h = PART.eps_tau / 8
    need = sorted({t for lv in levels.values() for t in lv} | {0.2, 0.3})
    fine = [(lv[0], lv[-1], h) for lv in levels.values()]
    V = solve_fns(u0, NU, GAMMA, max(need) + PART.eps_tau, 1 / 80, t_out=need, fine=fine, c_horizon=None)
    ell = 0.2
    v_ell = lambda t: mollify(V.at(t), ell)  # noqa: E731

    def t_out(j):
        return [t for t in levels[j] if t >= PART.t(j) - 1e-12] + levels.get(j + 1, window_levels(PART, j + 1, 8))

    def fine_j(j):
        nxt = levels.get(j + 1, window_levels(PART, j + 1, 8))
        return [(PART.t(j), levels[j][-1], h), (nxt[0], nxt[-1], h)]

    def until(j):
        return levels.get(j + 1, window_levels(PART, j + 1, 8))[-1]

    locs = local_solutions(v_ell, PART, NU, GAMMA, 1 / 80, t_out=t_out, fine=fine_j, until=until, c_horizon=None)
    return V, locs, levels


def test_glued_pair_satisfies_stress_equation(small_glue):
    V, locs, levels = small_glue
    et = PART.eps_tau
    times = [t for j in PART.J for t in levels[j] if PART.t(j) + 1e-12 < t < PART.t(j) + et - 1e-12]
    R = glued_stress(locs, V, PART, times, check_tol=1e-6, nu=NU, gamma=GAMMA)
    assert R.meta["defect"]["defect"] <= 1e-6
    assert R.sup() > 0


def test_glued_stress_vanishes_off_overlaps(small_glue):
    V, locs, levels = small_glue
    gs = GluedSolution(PART, V, locs)
    off = [t for j in PART.J for t in levels[j] if PART.overlap_at(t) is None]
    assert off
    assert max(sup_norm(gs.stress(t)) for t in off) == 0.0


def test_glued_velocity_is_exact_on_good_set(small_glue):
    V, locs, _ = small_glue
    gs = GluedSolution(PART, V, locs)
    for t in (0.2, 0.3):
        assert PART.pieces_at(t) == [(GOOD, 1.0)]
        assert np.array_equal(gs.velocity(t).values, V.at(t).values)


def test_identical_locals_glue_to_zero_stress(small_glue):
    V, _, levels = small_glue
    gs = GluedSolution(PART, V, {j: V for j in PART.J_star})
    for j in PART.J:
        for t in levels[j]:
            assert sup_norm(gs.stress(t)) == 0.0
            assert sup_norm(gs.velocity(t) - V.at(t)) < 1e-14


def test_missing_sample_is_reported():
    g = Grid(3, 8)
    v = Trajectory(g)
    gs = GluedSolution(PART, v, {})
    with pytest.raises(ValueError, match="coverage gap"):
        gs.velocity(0.2)
