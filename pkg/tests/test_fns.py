import numpy as np
import pytest
from scipy.integrate import solve_ivp

from wildflow.field import Field, Grid, sup_norm
from wildflow.fns import (
    SolverError,
    TimeCutoff,
    Trajectory,
    fd_weights,
    fns_rhs,
    fnsr_defect,
    initial_pair,
    residual_stress,
    solve_fns,
    time_rescale,
)
from wildflow.surrogate import random_solenoidal

NU, GAMMA = 0.05, 0.5


def shear(g, k, amp=1.0):
    def fn(x, y, z):
        return [amp * np.sin(2 * np.pi * k * y), 0 * x, 0 * x]

    return Field.from_function(g, "vector", fn)


def test_shear_mode_decays_in_closed_form():
    g = Grid(3, 32)
    k, T = 3, 0.2
    u0 = shear(g, k)
    traj = solve_fns(u0, NU, GAMMA, T, 0.01, t_out=[0.1, T], c_horizon=None)
    for t in (0.1, T):
        exact = u0 * float(np.exp(-NU * (2 * np.pi * k) ** (2 * GAMMA) * t))
        assert sup_norm(traj.at(t) - exact) < 1e-8


def _ivp_oracle(u0, T):
    """Same semi-discrete system integrated by an explicit Runge-Kutta code."""
    g = u0.grid
    shape = u0.hat.shape

    def f(t, y):
        h = (y[: y.size // 2] + 1j * y[y.size // 2:]).reshape(shape)
        r = fns_rhs(Field.from_hat(g, "vector", h), NU, GAMMA).hat.ravel()
        return np.concatenate([r.real, r.imag])

    h0 = np.asarray(u0.hat).ravel()
    sol = solve_ivp(f, (0, T), np.concatenate([h0.real, h0.imag]), method="DOP853", rtol=1e-12, atol=1e-13)
    y = sol.y[:, -1]
    return Field.from_hat(g, "vector", (y[: y.size // 2] + 1j * y[y.size // 2:]).reshape(shape))


def test_time_convergence_order():
    g = Grid(3, 16)
    u0 = random_solenoidal(g, 1.0, 2, np.random.default_rng(0))
    T = 0.25
    ref = _ivp_oracle(u0, T)
    dts = np.array([T / 8, T / 16, T / 32])
    errs = np.array([sup_norm(solve_fns(u0, NU, GAMMA, T, dt, t_out=[T], c_horizon=None).at(T) - ref) for dt in dts])
    order = np.polyfit(np.log(dts), np.log(errs), 1)[0]
    assert order >= 3.5, (errs, order)


def test_residual_stress_self_consistent():
    # an arbitrary smooth trajectory, not a solution
    g = Grid(3, 16)
    rng = np.random.default_rng(1)
    a = random_solenoidal(g, 1.0, 2, rng)
    b = random_solenoidal(g, 1.0, 2, rng)
    v = Trajectory(g, "vector", NU, GAMMA)
    ts = np.linspace(0, 0.1, 41)
    for t in ts:
        v.add(t, a * float(np.cos(3 * t)) + b * float(t**2))
    inner = ts[5:-5]
    R = residual_stress(v, NU, GAMMA, times=inner)
    assert fnsr_defect(v, R, NU, GAMMA, times=inner)["defect"] <= 1e-6
    assert R.sup() > 1e-2


def test_solution_has_small_residual_stress():
    g = Grid(3, 16)
    u0 = random_solenoidal(g, 1.0, 2, np.random.default_rng(2))
    ts = np.linspace(0, 0.05, 21)
    V = solve_fns(u0, NU, GAMMA, 0.05, 0.0025, t_out=ts, c_horizon=None)
    R = residual_stress(V, NU, GAMMA, times=ts[4:-4])
    assert R.sup() < 1e-6


def test_initial_pair_of_identical_solutions():
    g = Grid(3, 16)
    u0 = random_solenoidal(g, 1.0, 2, np.random.default_rng(3))
    ts = np.linspace(0.3, 0.45, 7)
    V = solve_fns(u0, NU, GAMMA, 0.45, 0.01, t_out=ts, c_horizon=None)
    v0, R0, flags = initial_pair(V, V, TimeCutoff(0.35, 0.04), times=ts)
    assert R0.sup() == 0.0
    for t in ts:
        assert sup_norm(v0.at(t) - V.at(t)) < 1e-15
    assert flags["window"]


def test_initial_pair_flags_late_window():
    g = Grid(3, 16)
    u0 = random_solenoidal(g, 1.0, 1, np.random.default_rng(4))
    V = solve_fns(u0, NU, GAMMA, 0.5, 0.05, t_out=[0.44, 0.5], c_horizon=None)
    _, _, flags = initial_pair(V, V, TimeCutoff(0.44, 0.01), times=[0.44, 0.5])
    assert not flags["window"]


def test_initial_pair_stress_matches_formula():
    g = Grid(3, 16)
    rng = np.random.default_rng(5)
    ts = [0.36]
    V1 = solve_fns(random_solenoidal(g, 1.0, 2, rng), NU, GAMMA, 0.4, 0.01, t_out=ts, c_horizon=None)
    V2 = solve_fns(random_solenoidal(g, 1.0, 2, rng), NU, GAMMA, 0.4, 0.01, t_out=ts, c_horizon=None)
    eta = TimeCutoff(0.35, 0.02)
    _, R0, _ = initial_pair(V1, V2, eta, times=ts)
    e = float(eta(np.array(ts))[0])
    assert 0 < e < 1
    diff = V1.at(0.36) - V2.at(0.36)
    # pointwise check of the quadratic part on the trace-free complement
    from wildflow.calculus import antidivergence
    from wildflow.field import multiply

    expect = antidivergence(diff) * float(eta(np.array(ts), 1)[0]) - multiply(diff, diff, "outer") * (e * (1 - e))
    assert sup_norm(R0.at(0.36) - expect) == 0.0


def test_time_rescale_maps_solutions_to_solutions():
    g = Grid(3, 16)
    u0 = random_solenoidal(g, 1.0, 2, np.random.default_rng(6))
    ts = np.linspace(0, 0.04, 17)
    V = solve_fns(u0, NU, GAMMA, 0.04, 0.0025, t_out=ts, c_horizon=None)
    z = 2.0
    Vz, _ = time_rescale(V, None, z)
    assert Vz.nu == z * NU
    R = residual_stress(Vz, Vz.nu, GAMMA, times=Vz.times[4:-4])
    assert R.sup() < 1e-6
    assert sup_norm(Vz.at(0.01) - V.at(0.02) * z) == 0.0


def test_time_rescale_rejects_nonpositive():
    with pytest.raises(ValueError):
        time_rescale(Trajectory(Grid(3, 8)), None, 0.0)


def test_fd_weights_exact_on_polynomials():
    x = np.array([-2.0, -1.0, 0.0, 1.0, 2.0, 3.0]) * 0.1
    w = fd_weights(x, 1)
    for p in range(6):
        assert abs(w @ x**p - (1.0 if p == 1 else 0.0)) < 1e-9


def test_fd_weights_stencil_too_small():
    with pytest.raises(ValueError):
        fd_weights(np.array([0.0, 1.0]), 2)


def test_solver_rejects_compressible_data():
    g = Grid(3, 16)
    f = Field.from_function(g, "vector", lambda x, y, z: [np.sin(2 * np.pi * x), 0 * x, 0 * x])
    with pytest.raises(ValueError, match="divergence"):
        solve_fns(f, NU, GAMMA, 0.1, 0.01)


def test_solver_enforces_local_horizon():
    g = Grid(3, 16)
    u0 = random_solenoidal(g, 1.0, 2, np.random.default_rng(7))
    with pytest.raises(SolverError, match="horizon"):
        solve_fns(u0, NU, GAMMA, 10.0, 0.01, c_horizon=0.1)


def test_solver_cfl_guard():
    g = Grid(3, 16)
    u0 = random_solenoidal(g, 5.0, 2, np.random.default_rng(8))
    with pytest.raises(SolverError, match="CFL"):
        solve_fns(u0, NU, GAMMA, 0.1, 0.05, c_horizon=None)


def test_trajectory_rejects_wrong_rank():
    g = Grid(3, 8)
    with pytest.raises(ValueError):
        Trajectory(g, "vector").add(0.0, Field.zeros(g, "scalar"))
