import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from prefsave.env import k_matrix
from prefsave.solver import (BracketError, ConsumptionPolicy, WealthGrid, evaluate_policy,
                             euler_residuals, inverse_marginal_utility, marginal_utility,
                             monotonicity_violations, perov_bound, rho_distance,
                             saving_threshold, solve, time_iteration_step)

from conftest import BENCH_GRID, make_env

UNIT = make_env(R=1.0)                    # beta = 0.95, R = 1, Y = 1, gamma = 2
HALF_GRID = WealthGrid.make(0.5, 8.0, 16, "linear")   # knots at multiples of 0.5


def affine_policy(grid, a, b):
    """c = min(w, a + b w): feasible, with c and w - c nondecreasing."""
    g = grid.points[:, None]
    return ConsumptionPolicy(grid, np.minimum(g, np.asarray(a) + np.asarray(b) * g))


# --- utility ---------------------------------------------------------------

@pytest.mark.parametrize("c, gamma, expected", [(1.0, 3.7, 1.0), (4.0, 0.5, 0.5),
                                                (2.0, 2.0, 0.25)])
def test_marginal_utility_examples(c, gamma, expected):
    env = make_env(gamma=(gamma,))
    assert marginal_utility(c, 0, env) == pytest.approx(expected, rel=1e-15)


@pytest.mark.parametrize("m, gamma, expected", [(1.0, 2.0, 1.0), (0.25, 2.0, 2.0),
                                                (16.0, 4.0, 0.5)])
def test_inverse_marginal_utility_examples(m, gamma, expected):
    env = make_env(gamma=(gamma,))
    assert inverse_marginal_utility(m, 0, env) == pytest.approx(expected, rel=1e-15)


def test_utility_rejects_nonpositive_arguments():
    with pytest.raises(ValueError):
        marginal_utility(0.0, 0, UNIT)
    with pytest.raises(ValueError):
        inverse_marginal_utility(-1.0, 0, UNIT)


@settings(max_examples=100, deadline=None)
@given(st.floats(1e-6, 1e6), st.floats(0.2, 8.0))
def test_inverse_round_trip(m, gamma):
    env = make_env(gamma=(gamma,))
    back = marginal_utility(inverse_marginal_utility(m, 0, env), 0, env)
    assert back == pytest.approx(m, rel=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-3, 1e3), st.floats(1e-3, 1e3), st.floats(0.2, 8.0))
def test_marginal_utility_strictly_decreasing(c1, c2, gamma):
    env = make_env(gamma=(gamma,))
    if c1 < c2 * (1 - 1e-9):
        assert marginal_utility(c1, 0, env) > marginal_utility(c2, 0, env)


# --- grid and policy evaluation ---------------------------------------------

def test_grid_invariants():
    g = WealthGrid.make(0.01, 1e4, 400)
    assert g.points[0] == 0.01 and g.points[-1] == 1e4 and g.size == 400
    assert np.all(np.diff(g.points) > 0)
    ratios = g.points[1:] / g.points[:-1]
    np.testing.assert_allclose(ratios, ratios[0], rtol=1e-10)
    with pytest.raises(ValueError):
        WealthGrid.make(1.0, 2.0, 15)
    with pytest.raises(ValueError):
        WealthGrid.make(2.0, 1.0, 20)


def test_evaluate_policy_examples():
    grid = HALF_GRID
    vals = np.minimum(grid.points, 0.3 + 0.5 * grid.points)[:, None]
    p = ConsumptionPolicy(grid, vals)
    for k in (0, 5, 15):
        assert evaluate_policy(p, grid.points[k], 0) == vals[k, 0]
    # linear midpoint between stored values 1.0 and 2.0
    q = ConsumptionPolicy(grid, np.where(grid.points[:, None] < 2.9, 1.0, 2.0)
                          * np.ones((16, 1)))
    assert evaluate_policy(q, 2.75, 0) == pytest.approx(1.5)
    # extrapolation beyond w_max
    v, s = vals[-1, 0], p.extrapolation_slope[0]
    assert s == pytest.approx(0.5)
    assert evaluate_policy(p, 16.0, 0) == pytest.approx(min(v + s * 8.0, 16.0))
    steep = ConsumptionPolicy(grid, vals, extrapolation_slope=np.array([1.0]))
    assert evaluate_policy(steep, 16.0, 0) <= 16.0


@settings(max_examples=100, deadline=None)
@given(st.floats(1e-4, 100.0), st.floats(0.0, 2.0), st.floats(0.01, 0.99))
def test_evaluate_policy_is_feasible(w, a, b):
    p = affine_policy(HALF_GRID, a, b)
    c = evaluate_policy(p, w, 0)
    assert 0 < c <= w


# --- threshold and operator ---------------------------------------------------

def test_saving_threshold_examples():
    ident = ConsumptionPolicy.identity(HALF_GRID, 1)
    assert saving_threshold(ident, 0, UNIT) == pytest.approx(0.95 ** -0.5, rel=1e-14)
    assert round(saving_threshold(ident, 0, UNIT), 4) == 1.0260
    zero = make_env(beta=0.0)
    assert saving_threshold(ident, 0, zero) == np.inf


def test_saving_threshold_rises_with_income(benchmark_solution, benchmark_env):
    policy, _ = benchmark_solution
    assert (saving_threshold(policy, 0, benchmark_env.scale_income(2.0))
            >= saving_threshold(policy, 0, benchmark_env))


def test_time_iteration_step_examples():
    ident = ConsumptionPolicy.identity(HALF_GRID, 1)
    out = time_iteration_step(ident, UNIT)
    assert out.values[1, 0] == 1.0                    # w = 1.0, corner
    oracle = brentq(lambda x: x ** -2 - 0.95 * (5 - x) ** -2, 1e-9, 4 - 1e-12, xtol=1e-15)
    assert out.values[7, 0] == pytest.approx(oracle, rel=1e-12)  # w = 4.0
    assert round(out.values[7, 0], 4) == 2.5321
    # input untouched
    np.testing.assert_array_equal(ident.values[:, 0], HALF_GRID.points)
    zero = time_iteration_step(ident, make_env(beta=0.0))
    np.testing.assert_array_equal(zero.values, ident.values)


def test_time_iteration_step_rejects_other_grid():
    ident = ConsumptionPolicy.identity(HALF_GRID, 1)
    with pytest.raises(ValueError):
        time_iteration_step(ident, UNIT, BENCH_GRID)


def test_bracket_error_on_nonmonotone_policy():
    g = HALF_GRID.points
    # consumption collapsing at high wealth leaves no sign change in the Euler gap
    bad = ConsumptionPolicy(HALF_GRID, np.where(g < 3, g, 1e-30)[:, None])
    with pytest.raises(BracketError):
        time_iteration_step(bad, UNIT)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.0, 3.0), st.floats(0.01, 0.99), st.floats(0.0, 3.0),
       st.floats(0.01, 0.99))
def test_step_preserves_feasibility_and_monotonicity(a1, b1, a2, b2):
    env = make_env(bar_P=((0.6, 0.4), (0.3, 0.7)), gamma=(1.5, 3.0))
    p = affine_policy(HALF_GRID, [a1, a2], [b1, b2])
    out = time_iteration_step(p, env)
    g = HALF_GRID.points[:, None]
    assert np.all(out.values > 0) and np.all(out.values <= g)
    assert monotonicity_violations(out) == (0, 0)


# --- metric ---------------------------------------------------------------------

def test_rho_distance_examples():
    grid = WealthGrid.make(1.0, 2.0, 16, "linear")
    p1 = ConsumptionPolicy(grid, np.where(grid.points == 1.0, 0.5, 1.0)[:, None])
    p2 = ConsumptionPolicy(grid, np.ones((16, 1)))
    env = make_env()
    assert rho_distance(p1, p1, env) == 0.0
    assert rho_distance(p1, p2, env) == rho_distance(p2, p1, env) == pytest.approx(3.0)
    with pytest.raises(ValueError):
        rho_distance(p1, ConsumptionPolicy.identity(HALF_GRID, 1), env)


# --- solve ----------------------------------------------------------------------

def test_zero_beta_solves_in_one_iteration():
    env = make_env(beta=0.0)
    policy, diag = solve(env, HALF_GRID)
    assert diag.converged and diag.iterations == 1
    np.testing.assert_array_equal(policy.values[:, 0], HALF_GRID.points)


@pytest.fixture(scope="module")
def unit_solution():
    return solve(UNIT, WealthGrid.make(0.1, 1000.0, 400), tol=1e-10)


@pytest.mark.xfail(strict=True, reason="c(w)/w exceeds the limit by 4.3e-3 at w = 1000 "
                                       "for every w_max from 1e3 to 1e6; the 2e-3 band is "
                                       "only reached near w = 1e4")
def test_unit_return_benchmark_within_2e3_at_1000(unit_solution):
    policy, diag = unit_solution
    assert diag.converged
    assert abs(policy.values[-1, 0] / 1000.0 - (1 - 0.95 ** 0.5)) < 2e-3


def test_unit_return_benchmark_approaches_closed_form():
    mpc = 1 - 0.95 ** 0.5
    policy, diag = solve(UNIT, WealthGrid.make(0.1, 1e5, 500), tol=1e-10)
    assert diag.converged
    levels = np.array([1e3, 1e4, 1e5])
    gap = evaluate_policy(policy, levels, 0) / levels - mpc
    assert np.all(gap > 0) and np.all(np.diff(gap) < 0)
    assert abs(gap[-1]) < 2e-3


def test_iterates_decrease_from_identity(downward_env):
    grid = WealthGrid.make(0.01, 100.0, 120)
    p = ConsumptionPolicy.identity(grid, downward_env.n_states)
    for _ in range(60):
        q = time_iteration_step(p, downward_env)
        assert np.all(q.values <= p.values + 1e-12)
        p = q


def test_benchmark_diagnostics(benchmark_solution):
    policy, diag = benchmark_solution
    assert diag.converged and diag.monotonicity_violations == 0
    h = np.array(diag.rho_history)
    assert np.all(h[6:] <= h[5:-1] * (1 + 1e-6))
    assert diag.euler_residual_max <= 10 * 1e-10
    assert "converged: True" in diag.format()


def test_euler_residuals_nan_only_at_corners(benchmark_solution, benchmark_env):
    policy, _ = benchmark_solution
    res = euler_residuals(policy, benchmark_env)
    corner = policy.values >= policy.grid.points[:, None]
    assert np.all(np.isnan(res[corner])) and np.all(np.isfinite(res[~corner]))


@pytest.mark.parametrize("which", ["benchmark", "downward", "upward"])
def test_threshold_consistency(which, request):
    policy, diag = request.getfixturevalue(f"{which}_solution")
    g = policy.grid.points
    h = np.diff(g, append=g[-1] * g[-1] / g[-2])
    for z, wb in enumerate(diag.threshold_wealth):
        below = g <= wb - h
        above = g >= wb + h
        assert np.all(policy.values[below, z] == g[below])
        assert np.all(policy.values[above, z] < g[above])


def test_nonconvergence_is_flagged_not_raised(downward_env):
    _, diag = solve(downward_env, HALF_GRID, tol=1e-10, max_iter=3)
    assert not diag.converged and diag.iterations == 3


def test_unstable_environment_warns():
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        solve(make_env(beta=1.0), HALF_GRID, max_iter=2)
    assert any(issubclass(w.category, RuntimeWarning) for w in caught)


def test_solve_rejects_nonpositive_tol():
    with pytest.raises(ValueError):
        solve(UNIT, HALF_GRID, tol=0.0)


@settings(max_examples=15, deadline=None)
@given(st.lists(st.floats(0.0, 2.0), min_size=4, max_size=4),
       st.lists(st.floats(0.02, 0.98), min_size=4, max_size=4))
def test_perov_contraction(a, b):
    env = make_env(bar_P=((0.6, 0.4), (0.3, 0.7)), gamma=(1.5, 3.0))
    grid = WealthGrid.make(0.01, 100.0, 60)
    p1 = affine_policy(grid, a[:2], b[:2])
    p2 = affine_policy(grid, a[2:], b[2:])
    lhs, rhs = perov_bound(p1, p2, env)
    assert np.all(lhs <= rhs + 1e-6 * (1 + rhs.max()))
    np.testing.assert_allclose(k_matrix(env, 1.0).sum(axis=1), 0.969)
