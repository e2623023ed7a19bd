import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from wildflow.schedule import (
    INEQUALITIES,
    ExponentSet,
    IntervalBook,
    beta1_window,
    bookkeeping_schedule,
    box_dimension_estimate,
    check_ledger,
    closed_form_log_counts,
    compute_schedule,
    dimension_bound,
    evolve_bad_set,
    evolve_books,
    find_a0,
    initial_book,
    is_admissible,
    suggest_exponents,
    validate_exponents,
)


def failed(e):
    return {r.name for r in validate_exponents(e) if not r.passed}


@st.composite
def admissible(draw):
    beta = draw(st.floats(0.02, 0.32))
    gamma = draw(st.floats(0.01, (1 - beta) / 2 - 0.05))
    try:
        e = suggest_exponents(beta, gamma)
    except ValueError:
        assume(False)
    # move each exponent inside its admissible range
    fb = draw(st.floats(0.05, 0.95))
    b = 1 + fb * (e.b - 1) / 0.5
    probe = ExponentSet(beta, gamma, b, 0.0, 0.0)
    sigma = draw(st.floats(0.05, 0.95)) * probe.sigma_sup()
    from wildflow.schedule import alpha_ceiling

    alpha = draw(st.floats(0.05, 0.95)) * 0.5 * alpha_ceiling(beta, gamma, b, sigma)
    out = ExponentSet(beta, gamma, b, sigma, alpha)
    if not is_admissible(out):
        # b ceiling uses a strict inequality; nudge once
        out = ExponentSet(beta, gamma, 1 + 0.9 * (b - 1), sigma, alpha)
    return out


# -- admissibility ------------------------------------------------------------


def test_beta_too_large_rejected():
    assert "beta_below_third" in failed(ExponentSet(0.4, 0.1, 1.01, 0.001, 1e-5))


def test_reference_exponents_pass():
    assert failed(ExponentSet(0.2, 0.3, 1.01, 0.001, 1e-5)) == set()


def test_beta_plus_two_gamma_rejected():
    bad = failed(ExponentSet(0.2, 0.45, 1.01, 0.001, 1e-5))
    assert "beta_plus_2gamma" in bad


def test_nonfinite_field_is_named():
    with pytest.raises(ValueError, match="sigma"):
        validate_exponents(ExponentSet(0.2, 0.3, 1.01, float("nan"), 1e-5))


def test_margins_are_signed():
    reps = {r.name: r for r in validate_exponents(ExponentSet(0.4, 0.1, 1.01, 0.001, 1e-5))}
    assert reps["beta_below_third"].margin == pytest.approx(1 / 3 - 0.4)
    assert reps["beta_positive"].margin > 0


@given(st.floats(0.01, 0.32), st.floats(0.01, 0.3))
def test_suggested_exponents_admissible(beta, gamma):
    if beta + 2 * gamma >= 0.99:
        return
    assert is_admissible(suggest_exponents(beta, gamma))


# -- schedule ------------------------------------------------------------------


def test_lambda_three_with_a2_b2():
    s = compute_schedule(ExponentSet(0.2, 0.3, 2.0, 0.001, 1e-5, a=2.0, T=15.0), 3, mode="surrogate", check=False)
    assert s.lambdas[3 + 1] == 256


def test_delta_from_lambda():
    e = ExponentSet(0.25, 0.3, 1.01, 0.001, 1e-5, a=16.0)
    s = compute_schedule(e, 2, check=False)
    assert math.exp(s.value("delta", 0)) == pytest.approx(0.25, rel=1e-14)


@given(admissible(), st.floats(5.0, 500.0))
def test_log_lambda_recursion(e, log_a):
    s = compute_schedule(e.with_log_a(log_a), 20)
    L = s.log_lambda
    ref = np.array([log_a * e.b**q for q in range(-1, 23)])
    assert np.allclose(L, ref, rtol=4e-16 * 25, atol=0)
    assert np.all(np.abs(L[1:] - e.b * L[:-1]) <= 1e-13 * np.abs(L[1:]))


@given(admissible(), st.floats(5.0, 200.0))
def test_tau_and_integer_ratios(e, log_a):
    s = compute_schedule(e.with_log_a(log_a), 8)
    assert math.isclose(s.log_eps[0] + s.log_tau[0], math.log(e.T / 15))
    for i in range(1, len(s.log_tau)):
        C = math.exp(s.log_C[i])
        assert 0.5 - 1e-12 <= C <= 2.0
        ref = -0.5 * s.log_delta[i] - (1 + 3 * e.alpha) * s.log_lambda[i] + s.log_C[i]
        assert s.log_tau[i] == pytest.approx(ref, rel=1e-12, abs=1e-9)
        if s.ratio[i] is not None:
            exact = s.log_eps[i - 1] + s.log_tau[i - 1] - math.log(s.ratio[i])
            assert s.log_tau[i] == pytest.approx(exact, rel=1e-12, abs=1e-9)


def test_overflow_is_explicit():
    e = ExponentSet(0.2, 0.3, 1.2, 0.01, 1e-4, log_a=1e306)
    with pytest.raises(OverflowError):
        compute_schedule(e, 60, check=False)


def test_ell_minus_one_flagged():
    e = suggest_exponents(0.2, 0.3)
    s = compute_schedule(e.with_log_a(100.0), 4)
    assert s.ell_minus1_defaulted and s.log_ell[0] == s.log_tau[0]
    s2 = compute_schedule(e.with_log_a(100.0), 4, log_ell_minus1=-3.0)
    assert not s2.ell_minus1_defaulted and s2.log_ell[0] == -3.0


# -- ledger ----------------------------------------------------------------------


def test_ledger_certifies_reference_case():
    e = suggest_exponents(0.2, 0.3)
    a0 = find_a0(e, 40)
    t = check_ledger(compute_schedule(e.with_log_a(a0), 40))
    assert t.certified()
    assert {i for _, i, _ in t.rows} == set(INEQUALITIES)


def test_ledger_fails_below_a0():
    e = suggest_exponents(0.2, 0.3)
    a0 = find_a0(e, 40)
    t = check_ledger(compute_schedule(e.with_log_a(0.5 * a0), 40))
    assert not t.certified()


def test_sigma_above_bound_breaks_stress_margin():
    e0 = suggest_exponents(0.2, 0.3)
    e = ExponentSet(0.2, 0.3, e0.b, 1.5 * e0.sigma_sup(), e0.alpha, log_a=50.0)
    t = check_ledger(compute_schedule(e, 40, check=False))
    ms = [m for _, m in t.margins("stress_size")]
    assert ms[-1] < 0 and ms[-1] < ms[0]


def test_dissipation_margin_positive_for_tiny_gamma():
    e = suggest_exponents(0.2, 1e-6)
    t = check_ledger(compute_schedule(e.with_log_a(find_a0(e, 10)), 10))
    assert all(m > 0 for _, m in t.margins("dissipation_time"))


def test_margins_grow_with_q():
    e = suggest_exponents(0.15, 0.2)
    t = check_ledger(compute_schedule(e.with_log_a(find_a0(e, 30)), 30))
    assert t.growing()
    assert all(v > 0 for v in t.slopes.values())


def test_missing_rows_rejected():
    e = suggest_exponents(0.2, 0.3)
    with pytest.raises(ValueError):
        check_ledger(compute_schedule(e.with_log_a(50.0), 1))


# -- dimension and beta_1 ---------------------------------------------------------


def _extreme(beta, gamma=0.1):
    b = 1.001
    probe = ExponentSet(beta, gamma, b, 0.0, 0.0)
    return ExponentSet(beta, gamma, b, 0.999 * probe.sigma_sup(), 1e-8)


def test_dimension_target_beta_zero():
    assert dimension_bound(_extreme(0.0))[1] == 0.5


def test_dimension_target_beta_third():
    assert dimension_bound(_extreme(1 / 3 - 1e-9))[1] == pytest.approx(1.0, abs=1e-8)


def test_dimension_limit_reached():
    D, target = dimension_bound(_extreme(0.2))
    assert target == pytest.approx(0.75)
    assert abs(D - 0.75) < 1e-2


@given(admissible())
def test_dimension_bound_exceeds_target(e):
    D, target = dimension_bound(e)
    assert D > target


def test_dimension_rejects_b_one():
    with pytest.raises(ValueError):
        dimension_bound(ExponentSet(0.2, 0.3, 1.0, 0.001, 1e-5))


def test_beta1_reference_chain():
    lo, hi = beta1_window(ExponentSet(0.2, 0.3, 1.01, 0.0008, 1e-5))
    assert hi == pytest.approx(0.28)
    assert hi < (1 - 0.2 * 1.01) / 2.01 < 0.4


def test_beta1_collapses_as_sigma_vanishes():
    lo, hi = beta1_window(ExponentSet(0.2, 0.3, 1.01, 1e-12, 1e-5))
    assert hi - lo < 1e-9


def test_beta1_rejects_broken_chain():
    with pytest.raises(ValueError):
        beta1_window(ExponentSet(0.2, 0.3, 1.01, 0.05, 1e-5))


# -- bad-set bookkeeping -------------------------------------------------------------

def test_initial_book_is_middle_third():
    s = bookkeeping_schedule(1, [Fraction(3, 16)], [1])
    b = initial_book(s)
    assert b.intervals() == [(Fraction(1, 3), Fraction(2, 3))]
    assert b.measure() == Fraction(1, 3) == 5 * s.eps_exact[0] * s.tau_exact[0]


def test_first_level_indices():
    s = bookkeeping_schedule(1, [Fraction(3, 16)], [1])
    nxt = evolve_bad_set(initial_book(s), s, 0)
    # oracle: direct containment scan over all grid times
    tau, et = s.tau_exact[1], s.eps_exact[1] * s.tau_exact[1]
    expect = [j for j in range(0, 16) if Fraction(1, 3) <= j * tau - 2 * et and j * tau + 3 * et <= Fraction(2, 3)]
    assert list(nxt.indices) == expect == [6, 7, 8, 9]
    assert list(nxt.star) == [6, 7, 8]


def test_degenerate_book_is_empty():
    s = bookkeeping_schedule(1, [Fraction(1, 6), Fraction(1, 6)], [1, 1])
    b0 = initial_book(s)
    # a sliver shorter than one window
    book = IntervalBook(q=1, starts=b0.starts, ends=b0.starts + 1, unit=b0.unit, T=b0.T)
    nxt = evolve_bad_set(book, s, 1)
    assert nxt.count == 0 and nxt.measure() == 0


def test_divisibility_error_names_level():
    s = bookkeeping_schedule(1, [Fraction(3, 16)], [1])
    s.ratio[1] = None
    with pytest.raises(ValueError, match="C_0"):
        evolve_bad_set(initial_book(s), s, 0)


@st.composite
def random_bookkeeping(draw, levels=3):
    eps = [Fraction(draw(st.integers(1, 9)), draw(st.integers(46, 60))) for _ in range(levels)]
    ratios = [draw(st.integers(1, 3))] + [draw(st.integers(2, 6)) for _ in range(levels - 1)]
    return bookkeeping_schedule(1, eps, ratios)


@given(random_bookkeeping())
def test_books_nested_with_exact_lengths(s):
    books = evolve_books(s)
    for q, (a, b) in enumerate(zip(books, books[1:])):
        assert a.contains_book(b)
        L = 5 * s.eps_exact[q + 1] * s.tau_exact[q + 1]
        assert all(hi - lo == L for lo, hi in b.intervals())
        # disjoint and sorted
        assert all(x[1] <= y[0] for x, y in zip(b.intervals(), b.intervals()[1:]))


@given(random_bookkeeping())
def test_measure_contracts_by_five_eps(s):
    """Each selected window has length 5 eps tau and there are at most |B|/tau of them."""
    books = evolve_books(s)
    for q, (a, b) in enumerate(zip(books, books[1:])):
        assert b.measure() <= 5 * s.eps_exact[q + 1] * a.measure()


def test_counts_match_closed_form_up_to_constant():
    s = bookkeeping_schedule(1, [Fraction(1, 8), Fraction(1, 9), Fraction(1, 10)], [2, 3, 4])
    books = evolve_books(s)
    lc = closed_form_log_counts(s, range(0, 2))
    for q in range(0, 2):
        ratio = books[q + 1].count / math.exp(lc[q])
        assert 0.1 < ratio < 10


def test_box_dimension_matches_bound_at_q25():
    e = suggest_exponents(0.2, 0.3)
    s = compute_schedule(e.with_log_a(find_a0(e, 40)), 40)
    traj = box_dimension_estimate(schedule=s)["trajectory"]
    D = dimension_bound(e)[0]
    assert abs(traj[25] / D - 1) < 0.02
    # approach is monotone from above
    vals = [traj[q] for q in range(2, 41)]
    assert all(x >= y for x, y in zip(vals, vals[1:]))


def test_single_interval_has_dimension_one():
    s = bookkeeping_schedule(1, [Fraction(1, 8)] * 3, [1, 1, 1])
    book = initial_book(s)
    static = [IntervalBook(q, book.starts, book.ends, book.unit, book.T) for q in range(4)]
    traj = box_dimension_estimate(static, s)["trajectory"]
    # covering an interval of length L by cells of length h: ln(L/h)/ln(1/h) -> 1
    assert all(0.3 < v <= 1.0 for v in traj.values())


def test_box_dimension_needs_three_levels():
    s = bookkeeping_schedule(1, [Fraction(1, 8)], [1])
    with pytest.raises(ValueError):
        box_dimension_estimate(evolve_books(s), s)
