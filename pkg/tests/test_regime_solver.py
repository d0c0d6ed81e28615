import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from parisian_bailout import LevyModel, PayoffFn
from parisian_bailout.aux_solver import AuxProblem
from parisian_bailout.regime_solver import (
    ConvergenceError,
    DomainViolation,
    RegimeModel,
    SwitchJump,
    T_b_apply,
    ValueIterate,
    gamma_apply,
    hat_transform,
    linear_iterate,
    norm_D,
    norm_growth,
    solve_fixed_point,
    stationary_slopes,
)

from conftest import BROWNIAN, CRAMER_LUNDBERG, JUMP_DIFFUSION

GRID = np.linspace(0.0, 30.0, 601)


def three_state(**kw):
    Q = np.array([[-0.6, 0.4, 0.2], [0.3, -0.5, 0.2], [0.25, 0.25, -0.5]])
    jumps = {
        (0, 1): SwitchJump("exponential", rate=2.0),
        (2, 0): SwitchJump("discrete", sizes=(0.2, 0.5), probs=(0.5, 0.5)),
    }
    args = dict(generator=Q, models=(BROWNIAN, CRAMER_LUNDBERG, JUMP_DIFFUSION), discounts=(0.1, 0.15, 0.12), r=1.5, beta=1.4, switch_jumps=jumps)
    args.update(kw)
    return RegimeModel(**args)


def two_symmetric(jump=None):
    Q = np.array([[-0.5, 0.5], [0.5, -0.5]])
    jumps = {} if jump is None else {(0, 1): jump, (1, 0): jump}
    return RegimeModel(Q, (BROWNIAN, BROWNIAN), (0.1, 0.1), 2.0, 1.5, jumps)


def concave_iterate(rng, m, grid=GRID):
    """Random member of the admissible class with the stationary terminal slopes."""
    s = stationary_slopes(m)
    vals, slopes = [], []
    for i in range(m.n_states):
        knees = np.sort(rng.uniform(0, 5, 3))
        extra = rng.uniform(0, (m.beta - s[i]) / 3, 3)
        d = s[i] + np.sum(extra[None, :] * (grid[:, None] < knees[None, :]), axis=1)
        v = rng.uniform(-0.5, 0.5) + np.concatenate([[0.0], np.cumsum(d[:-1] * np.diff(grid))])
        vals.append(v)
        slopes.append(s[i])
    return ValueIterate(grid, np.array(vals), np.array(slopes))


# hat transform ----------------------------------------------------------------

def test_hat_with_zero_jumps_is_weighted_average(rng):
    m = three_state(switch_jumps={})
    f = concave_iterate(rng, m)
    got = hat_transform(m, f, 0)
    ref = (0.4 * f.values[1] + 0.2 * f.values[2]) / 0.6
    assert np.allclose(got(GRID), ref, rtol=1e-12, atol=1e-12)
    assert got.terminal_slope == pytest.approx((0.4 * f.slopes[1] + 0.2 * f.slopes[2]) / 0.6)


def test_hat_of_zero_with_exponential_jump():
    mu = 2.0
    m = two_symmetric(SwitchJump("exponential", rate=mu))
    f = ValueIterate(GRID, np.zeros((2, GRID.size)), np.zeros(2))
    got = hat_transform(m, f, 0)
    x = np.array([0.0, 0.5, 2.0])
    closed = -1.5 * np.exp(-mu * x) / mu
    numeric = [quad(lambda y: 1.5 * (xi - y) * mu * math.exp(-mu * y), xi, np.inf)[0] for xi in x]
    assert np.allclose(got(x), closed, rtol=1e-10)
    assert np.allclose(got(x), numeric, rtol=1e-8)


def test_hat_with_discrete_jump_against_direct_sum(rng):
    sizes, probs = (0.2, 0.5), (0.5, 0.5)
    m = two_symmetric(SwitchJump("discrete", sizes=sizes, probs=probs))
    f = concave_iterate(rng, m)
    g = f.slice(1)
    got = hat_transform(m, f, 0)
    for x in (0.0, 0.3, 1.7):
        ref = sum(p * (g(x - y) if x >= y else g(0.0) + 1.5 * (x - y)) for y, p in zip(sizes, probs))
        assert got(x) == pytest.approx(ref, rel=1e-12, abs=1e-12)


def test_hat_is_concave_with_bounded_slopes(rng):
    m = three_state()
    f = concave_iterate(rng, m)
    for i in range(3):
        w = hat_transform(m, f, i)
        d = np.diff(w(GRID)) / np.diff(GRID)
        assert np.all(np.diff(d) <= 1e-10)
        assert d[0] <= m.beta + 1e-10
        assert 0 <= w.terminal_slope <= 1


def test_hat_state_out_of_range(rng):
    m = three_state()
    with pytest.raises(IndexError):
        hat_transform(m, concave_iterate(rng, m), 3)


# operators ----------------------------------------------------------------------

def test_symmetric_regimes_give_equal_slices():
    m = two_symmetric()
    f = linear_iterate(m, GRID)
    out = T_b_apply(m, f, [1.0, 1.0])
    assert np.allclose(out.values[0], out.values[1], rtol=1e-13)


def test_one_application_from_zero_is_aux_solution():
    m = three_state()
    zero = ValueIterate(GRID, np.zeros((3, GRID.size)), np.zeros(3))
    out, bars = gamma_apply(m, zero)
    for i in range(3):
        w = hat_transform(m, zero, i)
        p = AuxProblem(m.models[i], m.discounts[i], m.rate_out(i), m.r, m.beta, w)
        b = p.optimal_barrier()
        assert bars[i] == pytest.approx(b, abs=1e-12)
        assert np.allclose(out.values[i], p.at(b).value(GRID), rtol=1e-13, atol=1e-13)


def test_contraction_on_random_pairs():
    m = three_state()
    rng = np.random.default_rng(7)
    b = [1.0, 0.5, 0.8]
    for _ in range(20):
        f, g = concave_iterate(rng, m), concave_iterate(rng, m)
        d_in = norm_D(f, g)
        d_out = norm_D(T_b_apply(m, f, b), T_b_apply(m, g, b))
        assert d_out <= m.K * d_in + 1e-6


def test_gamma_is_monotone():
    m = three_state()
    rng = np.random.default_rng(3)
    f = concave_iterate(rng, m)
    g = ValueIterate(GRID, f.values + 0.3, f.slopes)
    assert np.all(gamma_apply(m, g)[0].values >= gamma_apply(m, f)[0].values - 1e-12)


def test_gamma_output_stays_admissible():
    m = three_state()
    out, _ = gamma_apply(m, concave_iterate(np.random.default_rng(5), m))
    out.check_domain(m.beta)


def test_domain_check_rejects_convex_slices():
    v = ValueIterate(GRID, (GRID**2)[None, :], np.array([0.5]))
    with pytest.raises(DomainViolation):
        v.check_domain(1.5)


# norms ----------------------------------------------------------------------------

def test_norms(rng):
    m = three_state()
    f = concave_iterate(rng, m)
    assert norm_D(f, f) == 0.0
    shifted = ValueIterate(GRID, f.values + 0.25, f.slopes)
    assert norm_D(f, shifted) == pytest.approx(0.25)
    tilted = ValueIterate(GRID, f.values, f.slopes + 0.1)
    assert norm_D(f, tilted) == math.inf
    lin = ValueIterate(GRID, 0.5 * GRID[None, :], np.array([0.5]))
    assert norm_growth(lin) == pytest.approx(0.5)


def test_stationary_slopes_solve_the_slope_equation():
    m = three_state()
    s = stationary_slopes(m)
    for i in range(3):
        rhs = m.r + sum(m.rate(i, j) * s[j] for j in range(3) if j != i)
        assert (m.theta(i) + m.r) * s[i] == pytest.approx(rhs)
    assert np.all((s > 0) & (s < 1))


# fixed point -------------------------------------------------------------------

@pytest.fixture(scope="module")
def solution():
    return solve_fixed_point(three_state(), tol=1e-8, n_points=1200)


def test_fixed_point_convergence(solution):
    m = three_state()
    assert solution.K == pytest.approx(m.K)
    assert all(r <= m.K + 1e-3 for r in solution.ratios[1:])
    assert solution.posterior_bound < 1e-8
    T = T_b_apply(m, solution.V, solution.b_star)
    assert norm_D(T, solution.V) < 1e-8
    last = solution.barrier_history
    assert np.max(np.abs(last[-1] - last[-2])) < 1e-6


def test_fixed_point_lipschitz_sandwich(solution):
    dv = np.diff(solution.V.values, axis=1)
    dx = np.diff(solution.V.grid)
    assert np.all(dv >= -1e-10)
    assert np.all(dv <= 1.4 * dx + 1e-10)


def test_fixed_point_barriers_stable(solution):
    m = three_state()
    _, bars = gamma_apply(m, solution.V)
    assert np.allclose(bars, solution.b_star, atol=1e-8)


def test_error_bound_formula(solution):
    K, d = solution.K, solution.differences
    assert solution.error_bound == pytest.approx(K**solution.iterations / (1 - K) * d[0])


def test_single_state_dispatches_to_aux():
    m = RegimeModel(np.zeros((1, 1)), (BROWNIAN,), (0.1,), 2.0, 1.5)
    sol = solve_fixed_point(m)
    p = AuxProblem(BROWNIAN, 0.1, 0.0, 2.0, 1.5)
    assert sol.b_star[0] == pytest.approx(p.optimal_barrier())
    exact = p.at(p.optimal_barrier()).value(sol.V.grid)
    assert np.allclose(sol.V.values[0], exact, rtol=1e-12, atol=1e-12)
    assert sol.iterations == 1 and sol.error_bound == 0.0


def test_max_iter_reports_bound():
    with pytest.raises(ConvergenceError) as exc:
        solve_fixed_point(three_state(), tol=1e-12, max_iter=3, n_points=300)
    assert np.isfinite(exc.value.error_bound) and exc.value.error_bound > 0


# model validation --------------------------------------------------------------

@pytest.mark.parametrize(
    "kw, match",
    [
        (dict(generator=np.array([[-0.5, 0.4, 0.2], [0.3, -0.5, 0.2], [0.25, 0.25, -0.5]])), "row 0"),
        (dict(generator=np.array([[0.2, -0.2, 0.0], [0.3, -0.5, 0.2], [0.25, 0.25, -0.5]])), "nonnegative"),
        (dict(beta=1.0), "β must exceed 1"),
        (dict(r=0.0), "positive"),
        (dict(discounts=(0.1, 0.0, 0.1)), "positive"),
        (dict(switch_jumps={(0, 0): SwitchJump()}), "invalid pair"),
    ],
)
def test_regime_validation(kw, match):
    with pytest.raises(ValueError, match=match):
        three_state(**kw)


def test_absorbing_state_rejected():
    Q = np.array([[0.0, 0.0], [0.5, -0.5]])
    with pytest.raises(ValueError, match="switching rate"):
        RegimeModel(Q, (BROWNIAN, BROWNIAN), (0.1, 0.1), 1.0, 1.5)


@pytest.mark.parametrize(
    "kw",
    [dict(kind="exponential"), dict(kind="exponential", rate=-1.0), dict(kind="discrete", sizes=(0.1,), probs=(0.5,)),
     dict(kind="discrete", sizes=(-0.1,), probs=(1.0,)), dict(kind="uniform")],
)
def test_switch_jump_validation(kw):
    with pytest.raises(ValueError):
        SwitchJump(**kw)


@given(mu=st.floats(0.3, 5.0))
@settings(max_examples=15, deadline=None)
def test_switch_jump_mean(mu):
    assert SwitchJump("exponential", rate=mu).mean_size() == pytest.approx(1 / mu)
