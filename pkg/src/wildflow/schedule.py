"""Log-space parameter schedule, inequality ledger and bad-set bookkeeping.

All frequencies and scales are carried as natural logarithms because
``a ** (b ** q)`` overflows a double after a handful of levels.  Every
relation ``X << Y`` is certified as a signed log-margin ``ln Y - ln X``; the
default gate for a certified relation is one decade (``ln 10``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

LN10 = math.log(10.0)
_LOG_MAX = math.log(np.finfo(float).max)

__all__ = [
    "ExponentSet",
    "Schedule",
    "IntervalBook",
    "ConstraintReport",
    "LedgerTable",
    "validate_exponents",
    "is_admissible",
    "suggest_exponents",
    "alpha_ceiling",
    "b_ceiling",
    "compute_schedule",
    "check_ledger",
    "find_a0",
    "dimension_bound",
    "beta1_window",
    "initial_book",
    "evolve_bad_set",
    "evolve_books",
    "box_dimension_estimate",
    "closed_form_log_counts",
    "cover_count",
    "bookkeeping_schedule",
    "SurrogateLevel",
    "INEQUALITIES",
]


@dataclass(frozen=True)
class ExponentSet:
    """Exponents and constants of the scheme.

    ``a`` is the base frequency; ``log_a`` may be supplied instead when
    ``a`` itself is not representable (ledger runs use ``ln a ~ 1e5``).
    """

    beta: float
    gamma: float
    b: float
    sigma: float
    alpha: float
    a: float = 2.0
    d: int = 3
    T: float = 1.0
    nu: float = 1.0
    log_a: float | None = None

    @property
    def ln_a(self) -> float:
        return float(self.log_a) if self.log_a is not None else math.log(self.a)

    def with_log_a(self, log_a: float) -> "ExponentSet":
        a = math.exp(log_a) if log_a < _LOG_MAX else math.inf
        return replace(self, a=a, log_a=float(log_a))

    def sigma_sup(self) -> float:
        """Supremum of admissible ``sigma`` for the current ``beta``, ``b``."""
        b, beta = self.b, self.beta
        return (b - 1.0) * (1.0 - beta - 2.0 * b * beta) / (b + 1.0)

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


# ---------------------------------------------------------------------------
# admissibility


@dataclass(frozen=True)
class ConstraintReport:
    name: str
    margin: float
    passed: bool
    detail: str = ""


def _ell_exponent(e: ExponentSet) -> float:
    """``ln(1/ell_q) / ln(lambda_q)`` for the power-law part of the schedule."""
    return 1.0 + e.sigma / 2 + 1.5 * e.alpha + (e.b - 1.0) * e.beta


def _slopes(e: ExponentSet, N: int | None = None) -> dict[str, float]:
    """Coefficient of ``ln lambda_q`` in every ledger log-margin.

    Each certified relation is a pure power law in ``lambda_q`` away from the
    ``q = -1`` row, so its log-margin is ``slope * ln lambda_q + const``.
    """
    beta, gamma, b, sigma, alpha = e.beta, e.gamma, e.b, e.sigma, e.alpha
    E = _ell_exponent(e)
    tau = beta - 1.0 - 3 * alpha  # ln tau_q / ln lambda_q
    out = {
        "time_length": 1.5 * alpha,
        "freq_lower": E - 1.0,
        "freq_upper": b - E,
        "freq_growth": 1.5 - b,
        "good_bad": (-sigma + tau - 2 * b * beta) - ((1.0 - beta) / b - (2 - 2 * alpha) * E),
        "eps_tau": sigma,
        "tau_nesting": (-sigma + tau) / b - tau,
        "dissipation_time": -(tau + (alpha + 2 * gamma) * E),
        "stress_size": (b - 1) * (1 - beta * (1 + 2 * b)) - sigma * (b + 1) - alpha * (14 * b + 10),
        "dissipative_stress": b * (1 - 2 * gamma - sigma - beta * (2 * b - 1) - 14 * alpha),
        "local_existence": alpha * (3.0 - 2.0 * E),
    }
    if N is None:
        N = choose_trick_N(e)
    out["antidiv_power"] = N * (b - E) - 10 * alpha * E - b * (1 + 10 * alpha)
    return out


def choose_trick_N(e: ExponentSet) -> int:
    """Smallest derivative count making ``ell^(N+10a) lambda_{q+1}^(N-1-10a)`` grow.

    One extra derivative is added so the growth rate is not marginal.
    """
    E = _ell_exponent(e)
    gap = e.b - E
    if gap <= 0:
        return 0
    need = (10 * e.alpha * E + e.b * (1 + 10 * e.alpha)) / gap
    return int(math.floor(need)) + 2


def alpha_ceiling(beta: float, gamma: float, b: float, sigma: float) -> float:
    """Largest ``alpha`` for which every ledger slope stays positive (bisection)."""
    probe = ExponentSet(beta=beta, gamma=gamma, b=b, sigma=sigma, alpha=0.0)

    def ok(al: float) -> bool:
        s = _slopes(replace(probe, alpha=al))
        s.pop("antidiv_power")
        return all(v > 0 for v in s.values())

    if not ok(1e-15):
        return 0.0
    lo, hi = 1e-15, 1.0
    for _ in range(200):
        mid = math.sqrt(lo * hi)
        lo, hi = (mid, hi) if ok(mid) else (lo, mid)
        if hi / lo < 1 + 1e-12:
            break
    return lo


def b_ceiling(beta: float, gamma: float) -> float:
    """Concrete gate for ``b - 1`` being small relative to ``beta``, ``gamma``.

    ``b < 3/2`` keeps consecutive frequencies within a power 3/2 and the
    dissipative stress slope at ``alpha = sigma = 0`` keeps half its room.
    The last cap keeps the supremum of ``sigma`` positive.
    """
    room = 1.0 - beta - 2.0 * gamma
    cap = 0.5
    if beta > 0:
        cap = min(cap, room / (4.0 * beta), (1.0 - 3.0 * beta) / (2.0 * beta))
    return 1.0 + cap


def validate_exponents(e: ExponentSet) -> list[ConstraintReport]:
    """Check every admissibility constraint; each report carries a signed margin."""
    for f in fields(e):
        v = getattr(e, f.name)
        if v is None:
            continue
        if not isinstance(v, (int, float)) or not math.isfinite(float(v)):
            if f.name == "a" and e.log_a is not None:
                continue
            raise ValueError(f"non-finite exponent field: {f.name}={v!r}")
    if int(e.d) != e.d or e.d < 3:
        raise ValueError(f"dimension d must be an integer >= 3, got {e.d}")

    beta, gamma, b, sigma, alpha = e.beta, e.gamma, e.b, e.sigma, e.alpha
    reps = [
        ConstraintReport("beta_positive", beta, beta > 0),
        ConstraintReport("beta_below_third", 1 / 3 - beta, beta < 1 / 3),
        ConstraintReport("gamma_positive", gamma, gamma > 0),
        ConstraintReport("beta_plus_2gamma", 1 - beta - 2 * gamma, beta + 2 * gamma < 1),
    ]
    bmax = b_ceiling(beta, gamma)
    reps.append(ConstraintReport("b_above_one", b - 1, b > 1))
    reps.append(ConstraintReport("b_small", bmax - b, b < bmax, f"b < {bmax:.6g}"))
    ssup = e.sigma_sup() if b > 1 else -math.inf
    reps.append(ConstraintReport("sigma_positive", sigma, sigma > 0))
    reps.append(ConstraintReport("sigma_bound", ssup - sigma, sigma < ssup, f"sigma < {ssup:.6g}"))
    reps.append(ConstraintReport("alpha_positive", alpha, alpha > 0))
    if b > 1 and 0 < sigma < ssup and beta + 2 * gamma < 1:
        amax = 0.5 * alpha_ceiling(beta, gamma, b, sigma)
    else:
        amax = 0.0
    reps.append(ConstraintReport("alpha_small", amax - alpha, 0 < alpha < amax, f"alpha < {amax:.6g}"))
    reps.append(ConstraintReport("a_at_least_two", e.ln_a - math.log(2), e.ln_a >= math.log(2)))
    reps.append(ConstraintReport("T_at_least_one", e.T - 1, e.T >= 1))
    reps.append(ConstraintReport("nu_range", min(e.nu, 1 - e.nu), 0 < e.nu <= 1))
    return reps


def is_admissible(e: ExponentSet) -> bool:
    return all(r.passed for r in validate_exponents(e))


def suggest_exponents(beta: float, gamma: float, **kw) -> ExponentSet:
    """An admissible ``(b, sigma, alpha)`` for the given ``beta``, ``gamma``.

    Each exponent sits at a fixed fraction of its ceiling: ``b`` halfway to
    :func:`b_ceiling`, ``sigma`` at half its supremum and ``alpha`` at a
    quarter of :func:`alpha_ceiling`.
    """
    b = 1.0 + 0.5 * (b_ceiling(beta, gamma) - 1.0)
    probe = ExponentSet(beta=beta, gamma=gamma, b=b, sigma=0.0, alpha=0.0, **kw)
    sigma = 0.5 * probe.sigma_sup()
    alpha = 0.25 * alpha_ceiling(beta, gamma, b, sigma)
    e = replace(probe, sigma=sigma, alpha=alpha)
    bad = [r.name for r in validate_exponents(e) if not r.passed]
    if bad:
        raise ValueError(f"no admissible exponents for beta={beta}, gamma={gamma}: {', '.join(bad)}")
    return e


# ---------------------------------------------------------------------------
# schedule


@dataclass
class Schedule:
    """Per-level logarithms, indexed by ``q + 1`` (row 0 is ``q = -1``)."""

    exponents: ExponentSet
    q_max: int
    mode: str
    log_lambda: np.ndarray
    log_delta: np.ndarray
    log_eps: np.ndarray
    log_tau: np.ndarray
    log_ell: np.ndarray
    log_C: np.ndarray
    ratio: list  # integer eps_{q-1} tau_{q-1} / tau_q, or None when not representable
    ceiling_slack: np.ndarray
    ell_minus1_defaulted: bool = True
    lambdas: list | None = None  # exact integers in surrogate mode
    eps_exact: list | None = None
    tau_exact: list | None = None
    notes: list = field(default_factory=list)

    def row(self, q: int) -> int:
        if q < -1 or q > self.q_max + 2:
            raise IndexError(f"level {q} outside schedule")
        return q + 1

    def value(self, name: str, q: int) -> float:
        return float(getattr(self, "log_" + name)[self.row(q)])

    def levels(self) -> range:
        return range(-1, self.q_max + 1)

    def to_rows(self) -> list[dict]:
        rows = []
        for q in range(-1, self.q_max + 1):
            i = q + 1
            rows.append(
                {
                    "q": q,
                    "log_lambda": float(self.log_lambda[i]),
                    "log_delta": float(self.log_delta[i]),
                    "log_eps": float(self.log_eps[i]),
                    "log_tau": float(self.log_tau[i]),
                    "log_ell": float(self.log_ell[i]),
                    "log_C": float(self.log_C[i]),
                }
            )
        return rows


def _log_lambda_row(e: ExponentSet, q: float) -> float:
    base = e.ln_a
    if q > 0 and base > 0:
        if q * math.log(e.b) + math.log(base) > _LOG_MAX:
            raise OverflowError(f"b^q ln a overflows at q={q}")
    v = (e.b ** q) * base
    if not math.isfinite(v):
        raise OverflowError(f"b^q ln a overflows at q={q}")
    return v


def compute_schedule(
    e: ExponentSet,
    q_max: int,
    mode: str = "ledger",
    log_ell_minus1: float | None = None,
    eps_denominator: int = 1000,
    check: bool = True,
) -> Schedule:
    """Build the schedule for ``q = -1 .. q_max + 2``.

    ``mode="ledger"`` keeps the pure power laws (the ceiling of ``lambda_q``
    is ignored and its relative size recorded as slack).  ``mode="surrogate"``
    rounds ``lambda_q`` up to an integer, makes ``eps_q`` a rational with
    denominator at most ``eps_denominator`` and carries exact ``tau_q`` so the
    interval bookkeeping is exact.
    """
    if mode not in ("ledger", "surrogate"):
        raise ValueError(f"unknown schedule mode {mode!r}")
    if q_max < 1:
        raise ValueError("q_max must be >= 1")
    if check:
        bad = [r.name for r in validate_exponents(e) if not r.passed]
        if bad:
            raise ValueError(f"inadmissible exponents: {', '.join(bad)}")
    beta, sigma, alpha = e.beta, e.sigma, e.alpha
    n_rows = q_max + 4  # q = -1 .. q_max + 2, the ledger looks two levels ahead
    qs = np.arange(-1, q_max + 3)

    log_lam = np.empty(n_rows)
    lambdas: list | None = [] if mode == "surrogate" else None
    slack = np.zeros(n_rows)
    for i, q in enumerate(qs):
        L = _log_lambda_row(e, float(q))
        if mode == "surrogate":
            if L > 700:
                raise OverflowError(f"surrogate lambda_{q} = exp({L:.3g}) is not a small integer")
            lam = math.ceil(math.exp(L) - 1e-12)
            lambdas.append(lam)
            slack[i] = math.log(lam) - L
            L = math.log(lam)
        else:
            slack[i] = math.exp(-L) if L < _LOG_MAX else 0.0
        log_lam[i] = L

    log_delta = -2 * beta * log_lam
    log_eps = -sigma * log_lam
    log_tau = np.empty(n_rows)
    log_C = np.zeros(n_rows)
    ratio: list = [None] * n_rows
    eps_exact: list | None = [] if mode == "surrogate" else None
    tau_exact: list | None = [] if mode == "surrogate" else None

    # q = -1: eps = 1 and 5 eps tau = T/3
    log_eps[0] = 0.0
    log_tau[0] = math.log(e.T / 15.0)
    if mode == "surrogate":
        eps_exact.append(Fraction(1))
        tau_exact.append(Fraction(e.T).limit_denominator(10**6) / 15)

    for i in range(1, n_rows):
        if mode == "surrogate":
            eps_q = Fraction(math.exp(log_eps[i])).limit_denominator(eps_denominator)
            if eps_q <= 0:
                eps_q = Fraction(1, eps_denominator)
            log_eps[i] = math.log(eps_q)
            eps_exact.append(eps_q)
        log_tau1 = -0.5 * log_delta[i] - (1 + 3 * alpha) * log_lam[i]
        log_r = log_eps[i - 1] + log_tau[i - 1] - log_tau1
        if log_r < 45.0:  # ratio still an exactly representable integer
            r = math.exp(log_r)
            n_int = max(1, math.ceil(r - 1e-9))
            logC = log_r - math.log(n_int)
            if logC < math.log(0.5) - 1e-12:
                raise ValueError(
                    f"C_{qs[i]} = {math.exp(logC):.4g} < 1/2: eps_{qs[i]-1} tau_{qs[i]-1} / tau_{qs[i]} "
                    f"= {r:.4g} cannot be made a positive integer with C in [1/2, 2]"
                )
            ratio[i] = n_int
            log_C[i] = logC
        else:
            log_C[i] = 0.0  # relative adjustment below exp(-45)
        log_tau[i] = log_tau1 + log_C[i]
        if mode == "surrogate":
            tau_exact.append(eps_exact[i - 1] * tau_exact[i - 1] / ratio[i])
            log_tau[i] = math.log(tau_exact[i])

    # ell_q from delta_{q+1}; the last row needs delta_{q+2}, extrapolate by power law
    log_ell = np.empty(n_rows)
    for i in range(1, n_rows):
        log_delta_next = (
            log_delta[i + 1] if i + 1 < n_rows else -2 * beta * e.b * log_lam[i]
        )
        log_ell[i] = 0.5 * log_delta_next - (1 + sigma / 2 + 1.5 * alpha) * log_lam[i] - 0.5 * log_delta[i]
    defaulted = log_ell_minus1 is None
    log_ell[0] = log_tau[0] if defaulted else float(log_ell_minus1)

    s = Schedule(
        exponents=e,
        q_max=q_max,
        mode=mode,
        log_lambda=log_lam,
        log_delta=log_delta,
        log_eps=log_eps,
        log_tau=log_tau,
        log_ell=log_ell,
        log_C=log_C,
        ratio=ratio,
        ceiling_slack=slack,
        ell_minus1_defaulted=defaulted,
        lambdas=lambdas,
        eps_exact=eps_exact,
        tau_exact=tau_exact,
    )
    if defaulted:
        s.notes.append("ell_{-1} defaulted to tau_{-1}")
    return s


# ---------------------------------------------------------------------------
# ledger

# id -> (kind, human description); kind "<<" is certified at >= gate, "<~" at >= 0
INEQUALITIES: dict[str, tuple[str, str]] = {
    "time_length": ("<<", "eps^1/2 tau delta_{q+1}^1/2 / ell << 1"),
    "freq_lower": ("<<", "lambda_q << 1/ell_q"),
    "freq_upper": ("<<", "1/ell_q << lambda_{q+1}"),
    "freq_growth": ("<<", "lambda_{q+1} << lambda_q^(3/2)"),
    "good_bad": ("<<", "delta_{q-1}^1/2 lambda_{q-1} ell^(2-2a) << eps tau delta_{q+1}"),
    "eps_tau": ("<<", "eps_q tau_q << tau_q"),
    "tau_nesting": ("<<", "tau_q << eps_{q-1} tau_{q-1}"),
    "tau0_horizon": ("<<", "tau_0 << T/15"),
    "dissipation_time": ("<~", "tau_q ell^(-a-2g) <~ 1"),
    "stress_size": ("<~", "eps^-1 (delta_{q+1} delta_q)^1/2 lambda_{q+1}^(-1+10a) lambda_q^(1+10a) <~ eps_{q+1} delta_{q+2} lambda_{q+1}^(-4a)"),
    "dissipative_stress": ("<~", "delta_{q+1}^1/2 lambda_{q+1}^(-1+2g+10a) <~ eps_{q+1} delta_{q+2} lambda_{q+1}^(-4a)"),
    "local_existence": ("<~", "tau_q <~ ell^(2a) / (delta_q^1/2 lambda_q)"),
    "antidiv_power": (">", "ell^(N+10a) lambda_{q+1}^(N-1-10a) > 1"),
}


@dataclass
class LedgerTable:
    """Signed log-margins per level and inequality."""

    rows: list  # (q, id, margin)
    gate: float
    trick_N: int
    slopes: dict

    def margins(self, ineq: str) -> list[tuple[int, float]]:
        return [(q, m) for q, i, m in self.rows if i == ineq]

    def min_margin(self) -> float:
        return min(m for _, _, m in self.rows)

    def failures(self, gate: float | None = None) -> list[tuple[int, str, float]]:
        g = self.gate if gate is None else gate
        return [(q, i, m) for q, i, m in self.rows if m < g]

    def certified(self, gate: float | None = None) -> bool:
        return not self.failures(gate) and self.growing()

    def growing(self) -> bool:
        """Every margin sequence is non-decreasing in ``q`` past the first level."""
        for ineq in INEQUALITIES:
            ms = [m for _, m in self.margins(ineq)]
            if len(ms) >= 3 and any(b < a - 1e-9 * max(1.0, abs(a)) for a, b in zip(ms[1:], ms[2:])):
                return False
        return all(v > 0 for v in self.slopes.values())


def check_ledger(s: Schedule, gate: float = LN10, trick_N: int | None = None) -> LedgerTable:
    """Evaluate every certified relation for ``q = 0 .. q_max``."""
    if s.q_max < 2:
        raise ValueError("ledger needs q_max >= 2")
    if len(s.log_tau) < s.q_max + 4:
        raise ValueError("schedule is missing the q = -1 row")
    e = s.exponents
    N = choose_trick_N(e) if trick_N is None else int(trick_N)
    L, D, Ep, Ta, El = s.log_lambda, s.log_delta, s.log_eps, s.log_tau, s.log_ell
    a = e.alpha
    g = e.gamma
    rows = []
    for q in range(0, s.q_max + 1):
        i = q + 1
        inv_ell = -El[i]
        m = {
            "time_length": -(0.5 * Ep[i] + Ta[i] + 0.5 * D[i + 1] + inv_ell),
            "freq_lower": inv_ell - L[i],
            "freq_upper": L[i + 1] - inv_ell,
            "freq_growth": 1.5 * L[i] - L[i + 1],
            "good_bad": (Ep[i] + Ta[i] + D[i + 1]) - (0.5 * D[i - 1] + L[i - 1] - (2 - 2 * a) * inv_ell),
            "eps_tau": -Ep[i],
            "tau_nesting": (Ep[i - 1] + Ta[i - 1]) - Ta[i],
            "dissipation_time": -(Ta[i] + (a + 2 * g) * inv_ell),
            "stress_size": (Ep[i + 1] + D[i + 2] - 4 * a * L[i + 1])
            - (-Ep[i] + 0.5 * D[i + 1] + 0.5 * D[i] + (-1 + 10 * a) * L[i + 1] + (1 + 10 * a) * L[i]),
            "dissipative_stress": (Ep[i + 1] + D[i + 2] - 4 * a * L[i + 1])
            - (0.5 * D[i + 1] + (-1 + 2 * g + 10 * a) * L[i + 1]),
            "local_existence": (-2 * a * inv_ell - 0.5 * D[i] - L[i]) - Ta[i],
            "antidiv_power": -(N + 10 * a) * inv_ell + (N - 1 - 10 * a) * L[i + 1],
        }
        if q == 0:
            m["tau0_horizon"] = math.log(e.T / 15.0) - Ta[i]
        for k, v in m.items():
            rows.append((q, k, float(v)))
    return LedgerTable(rows=rows, gate=gate, trick_N=N, slopes=_slopes(e, N))


def find_a0(e: ExponentSet, q_max: int = 40, gate: float = LN10) -> float:
    """Smallest ``ln a`` (to 1e-6 relative) certifying the ledger for ``q <= q_max``.

    Margins increase with ``ln a`` because every slope is positive, so a
    bracket-and-bisect search is exact up to tolerance.
    """

    def ok(log_a: float) -> bool:
        try:
            s = compute_schedule(e.with_log_a(log_a), q_max)
        except (ValueError, OverflowError):
            return False
        return check_ledger(s, gate).certified()

    hi = max(1.0, e.ln_a)
    while not ok(hi):
        hi *= 2.0
        if hi > 1e300:
            raise ValueError("no finite a0: some ledger slope is not positive")
    lo = math.log(2.0)
    if ok(lo):
        return lo
    while hi - lo > 1e-6 * hi:
        mid = 0.5 * (lo + hi)
        lo, hi = (lo, mid) if ok(mid) else (mid, hi)
    return hi


# ---------------------------------------------------------------------------
# dimension and beta_1


def dimension_bound(e: ExponentSet) -> tuple[float, float]:
    """Return (box-dimension bound of the bad set, its limiting target)."""
    if e.b <= 1.0:
        raise ValueError("b must exceed 1 (division by b - 1)")
    beta = e.beta
    D = 1.0 - e.sigma * e.b / ((e.b - 1.0) * (1.0 + 3 * e.alpha + e.sigma - beta))
    target = (1.0 + beta) / (2.0 * (1.0 - beta))
    return D, target


def beta1_window(e: ExponentSet) -> tuple[float, float]:
    """Open interval of time-integrated Hölder exponents reachable by the scheme."""
    if e.b <= 1.0:
        raise ValueError("b must exceed 1")
    beta, b = e.beta, e.b
    upper = beta + e.sigma / (e.b - 1.0)
    mid = (1.0 - b * beta) / (b + 1.0)
    cap = (1.0 - beta) / 2.0
    if not (upper < mid < cap):
        raise ValueError(
            f"beta_1 chain broken: {upper:.6g} < {mid:.6g} < {cap:.6g} fails (sigma or b inadmissible)"
        )
    lo, hi = max(beta, 0.0), min(upper, cap)
    if hi <= lo:
        raise ValueError("empty beta_1 window")
    return lo, hi


# ---------------------------------------------------------------------------
# bad-set bookkeeping


@dataclass
class IntervalBook:
    """Disjoint closed intervals of the bad set at one level.

    Endpoints are exact integers in units of ``unit`` (a Fraction of time),
    so nesting and lengths are checked without rounding.
    """

    q: int
    starts: np.ndarray
    ends: np.ndarray
    unit: Fraction
    T: Fraction
    indices: np.ndarray | None = None  # grid indices j that produced the intervals
    star: np.ndarray | None = None  # j with j + 1 also bad

    @property
    def count(self) -> int:
        return int(self.starts.size)

    def measure(self) -> Fraction:
        return Fraction(int((self.ends - self.starts).sum())) * self.unit

    def intervals(self) -> list[tuple[Fraction, Fraction]]:
        return [(int(s) * self.unit, int(t) * self.unit) for s, t in zip(self.starts, self.ends)]

    def good_set(self) -> list[tuple[Fraction, Fraction]]:
        """Open complementary intervals in ``[0, T]``."""
        out, cur = [], Fraction(0)
        for s, t in self.intervals():
            if s > cur:
                out.append((cur, s))
            cur = t
        if cur < self.T:
            out.append((cur, self.T))
        return out

    def contains_book(self, other: "IntervalBook") -> bool:
        """True when every interval of ``other`` lies in one interval of ``self``."""
        if other.count == 0:
            return True
        den = math.lcm(self.unit.denominator, other.unit.denominator)
        ks = int(self.unit * den)
        ko = int(other.unit * den)
        s_self = self.starts.astype(object) * ks
        e_self = self.ends.astype(object) * ks
        s_o = other.starts.astype(object) * ko
        e_o = other.ends.astype(object) * ko
        pos = np.searchsorted(s_self, s_o, side="right") - 1
        if np.any(pos < 0):
            return False
        return bool(np.all(e_o <= e_self[pos]))


def _level_unit(s: Schedule, q_last: int) -> Fraction:
    den = 1
    for q in range(-1, q_last + 1):
        for v in (s.tau_exact[q + 1], s.eps_exact[q + 1] * s.tau_exact[q + 1]):
            den = math.lcm(den, v.denominator)
    den = math.lcm(den, Fraction(s.tau_exact[0] * 5).denominator)
    return Fraction(1, den)


def initial_book(s: Schedule, q_last: int | None = None) -> IntervalBook:
    """``B_0 = [T/3, 2T/3]``, one interval of length ``5 eps_{-1} tau_{-1}``."""
    if s.tau_exact is None:
        raise ValueError("bad-set bookkeeping needs an exact (surrogate) schedule")
    q_last = s.q_max if q_last is None else q_last
    unit = _level_unit(s, q_last)
    T = 15 * s.tau_exact[0]
    lo, hi = T / 3, 2 * T / 3
    return IntervalBook(
        q=0,
        starts=np.array([int(lo / unit)], dtype=np.int64),
        ends=np.array([int(hi / unit)], dtype=np.int64),
        unit=unit,
        T=T,
    )


def evolve_bad_set(book: IntervalBook, s: Schedule, q: int) -> IntervalBook:
    """Select grid times ``t_j = j tau_q`` whose window ``[t_j - 2 eps tau, t_j + 3 eps tau]``
    fits inside the current bad set; those windows form the next bad set."""
    if s.tau_exact is None:
        raise ValueError("bad-set bookkeeping needs an exact (surrogate) schedule")
    if s.ratio[q + 1] is None:
        raise ValueError(f"divisibility of eps_{q-1} tau_{q-1} by tau_{q} not recorded (C_{q})")
    tau = s.tau_exact[q + 1] / book.unit
    et = s.eps_exact[q + 1] * s.tau_exact[q + 1] / book.unit
    if tau.denominator != 1 or et.denominator != 1:
        raise ValueError("time unit does not resolve level q; rebuild the book with a larger q_last")
    tau, et = int(tau), int(et)
    if 5 * et >= tau:
        raise ValueError(f"eps_{q} >= 1/5: consecutive windows of length 5 eps tau would overlap")
    st = book.starts
    en = book.ends
    # j_min = ceil((s + 2 et) / tau), j_max = floor((e - 3 et) / tau)
    jmin = -((-(st + 2 * et)) // tau)
    jmax = (en - 3 * et) // tau
    cnt = np.maximum(jmax - jmin + 1, 0)
    total = int(cnt.sum())
    if total:
        offs = np.repeat(jmin - np.cumsum(np.concatenate(([0], cnt[:-1]))), cnt)
        js = offs + np.arange(total, dtype=np.int64)
    else:
        js = np.zeros(0, dtype=np.int64)
    star_mask = np.isin(js + 1, js)
    return IntervalBook(
        q=q + 1,
        starts=js * tau - 2 * et,
        ends=js * tau + 3 * et,
        unit=book.unit,
        T=book.T,
        indices=js,
        star=js[star_mask],
    )


def evolve_books(s: Schedule, q_last: int | None = None) -> list[IntervalBook]:
    q_last = s.q_max if q_last is None else q_last
    books = [initial_book(s, q_last)]
    for q in range(0, q_last):
        books.append(evolve_bad_set(books[-1], s, q))
    return books


def closed_form_log_counts(s: Schedule, qs: Iterable[int]) -> dict[int, float]:
    """``ln(tau_q^-1 prod_{i<q} eps_i)`` for each requested level."""
    out = {}
    for q in qs:
        out[q] = -s.value("tau", q) + sum(s.value("eps", i) for i in range(0, q))
    return out


def cover_count(book: IntervalBook, scale: Fraction) -> int:
    """Number of length-``scale`` cells needed to cover each interval, summed."""
    r = scale / book.unit
    lengths = (book.ends - book.starts).astype(object)
    return int(sum(-((-int(L) * r.denominator) // r.numerator) for L in lengths))


def box_dimension_estimate(
    books: Sequence[IntervalBook] | None = None,
    schedule: Schedule | None = None,
    qs: Iterable[int] | None = None,
) -> dict:
    """Per-level ratio ``ln(count_q) / ln(1 / (eps_q tau_q))``.

    With explicit books, ``count_q`` covers the level-``q + 1`` book by cells
    of its own interval length ``5 eps_q tau_q`` (exactly the number of
    windows for evolved books).  Without books the closed-form count
    ``tau_q^-1 prod_{i<q} eps_i`` is used, the only option at ledger scale.
    """
    if schedule is None:
        raise ValueError("need a schedule for the level scales")
    traj, flags = {}, {}
    if books is not None:
        if len(books) < 3:
            raise ValueError("need at least three consecutive levels")
        for bk in books[1:]:
            q = bk.q - 1
            denom = -(schedule.value("eps", q) + schedule.value("tau", q))
            if bk.count == 0:
                traj[q] = 0.0
                flags[q] = "empty"
                continue
            scale = 5 * schedule.eps_exact[q + 1] * schedule.tau_exact[q + 1]
            n = cover_count(bk, scale)
            traj[q] = math.log(n) / denom if denom > 0 else float("nan")
        return {"trajectory": traj, "flags": flags}
    qs = list(range(0, schedule.q_max + 1)) if qs is None else list(qs)
    if len(qs) < 3:
        raise ValueError("need at least three consecutive levels")
    lc = closed_form_log_counts(schedule, qs)
    for q in qs:
        traj[q] = lc[q] / -(schedule.value("eps", q) + schedule.value("tau", q))
    return {"trajectory": traj, "flags": flags}


def bookkeeping_schedule(T, eps: Sequence, ratios: Sequence[int]) -> Schedule:
    """Exact schedule for interval bookkeeping with hand-chosen rationals.

    ``eps[q]`` is ``eps_q`` for ``q = 0 .. Q`` and ``ratios[q]`` the integer
    ``eps_{q-1} tau_{q-1} / tau_q``; ``eps_{-1} = 1`` and ``tau_{-1} = T/15``.
    No frequencies are attached (``log_lambda`` is NaN).
    """
    if len(eps) != len(ratios):
        raise ValueError("eps and ratios must have equal length")
    T = Fraction(T)
    eps_ex = [Fraction(1)] + [Fraction(x) for x in eps]
    tau_ex = [T / 15]
    for q, n in enumerate(ratios):
        if int(n) != n or n < 1:
            raise ValueError(f"ratio for C_{q} must be a positive integer, got {n}")
        tau_ex.append(eps_ex[q] * tau_ex[q] / int(n))
    n_rows = len(eps_ex)
    nan = np.full(n_rows, np.nan)
    log_eps = np.array([math.log(x) for x in eps_ex])
    log_tau = np.array([math.log(x) for x in tau_ex])
    e = ExponentSet(beta=float("nan"), gamma=float("nan"), b=float("nan"), sigma=float("nan"), alpha=float("nan"), T=float(T))
    return Schedule(
        exponents=e,
        q_max=n_rows - 2,
        mode="bookkeeping",
        log_lambda=nan.copy(),
        log_delta=nan.copy(),
        log_eps=log_eps,
        log_tau=log_tau,
        log_ell=nan.copy(),
        log_C=np.zeros(n_rows),
        ratio=[None] + [int(n) for n in ratios],
        ceiling_slack=np.zeros(n_rows),
        eps_exact=eps_ex,
        tau_exact=tau_ex,
    )


@dataclass(frozen=True)
class SurrogateLevel:
    """Hand-chosen level parameters for field runs at grid scale.

    Frequencies and amplitudes are entered directly instead of through
    ``a^(b^q)``; times are exact rationals so the interval bookkeeping of
    the field run matches :func:`evolve_bad_set`.
    """

    q: int
    T: Fraction
    tau: Fraction
    eps: Fraction
    lam: int
    lam_next: int
    delta: float
    delta_next: float
    ell: float
    alpha: float = 0.3

    def __post_init__(self):
        if int(self.lam_next) != self.lam_next or self.lam_next < 1:
            raise ValueError("lam_next must be a positive integer (phases must be periodic)")
        if 5 * self.eps >= 1:
            raise ValueError("eps must be below 1/5")
        if self.delta_next <= 0 or self.delta <= 0:
            raise ValueError("amplitudes must be positive")

    @property
    def eps_tau(self) -> Fraction:
        return self.eps * self.tau

    def schedule(self) -> Schedule:
        """Bookkeeping schedule with ``tau_{-1} = T/15`` and this level as ``q = 0``."""
        if self.q != 0:
            raise ValueError("only the first level is wired to a bookkeeping schedule")
        r = Fraction(self.T) / 15 / self.tau
        if r.denominator != 1:
            raise ValueError(f"(T/15) / tau_0 = {r} is not an integer")
        return bookkeeping_schedule(self.T, [self.eps], [int(r)])
