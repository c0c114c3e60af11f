import numpy as np
import pytest

from corridor_hedge.errors import DomainError
from corridor_hedge.holding import cached_solution, dV_dh, gamma_hat, optimal_initial_holding, scalar_value
from corridor_hedge.market import put_delta
from corridor_hedge.payoff import payoff_model


def test_fixed_point_on_simulation_corridor(params, narrow):
    plan = optimal_initial_holding(100.0, narrow, params)
    assert plan.residual <= 1e-8
    assert plan.h_star == pytest.approx(gamma_hat(100.0, plan.h_star, narrow, params), abs=1e-8)
    assert put_delta(narrow.a, params) < plan.h_star < put_delta(narrow.b, params)
    assert plan.x1 < 100.0 < plan.x2


def test_optimum_beats_neighbouring_holdings(params, narrow):
    plan = optimal_initial_holding(97.0, narrow, params)
    for dh in (-0.02, -0.005, 0.005, 0.02):
        assert cached_solution(plan.h_star + dh, narrow, params).value(97.0) >= plan.value - 1e-12


def test_value_below_static_hedges(params, narrow):
    m = payoff_model(narrow, params)
    for x in (93.0, 100.0, 106.0):
        v = scalar_value(x, narrow, params)
        assert v <= m.M(x) + 1e-12
        assert v <= m.quadratic_cost(x, put_delta(x, params))


def test_derivative_in_h_vanishes_at_optimum(params, narrow):
    plan = optimal_initial_holding(103.0, narrow, params)
    g1 = payoff_model(plan.solution.continuation, params).gamma(103.0)[0]
    assert abs(dV_dh(103.0, plan.h_star, narrow, params)) <= 1e-6 * 2 * g1


def test_derivative_in_h_matches_finite_difference(params, narrow):
    x, h, eps = 100.0, -0.25, 1e-5
    fd = (cached_solution(h + eps, narrow, params).value(x) - cached_solution(h - eps, narrow, params).value(x)) / (2 * eps)
    assert dV_dh(x, h, narrow, params) == pytest.approx(fd, rel=1e-5)


def test_boundary_spots_rejected(params, narrow):
    with pytest.raises(DomainError):
        optimal_initial_holding(narrow.a, narrow, params)
    with pytest.raises(DomainError):
        optimal_initial_holding(111.0, narrow, params)
    assert scalar_value(narrow.b, narrow, params) == 0.0


def test_gamma_hat_needs_continuation_point(params, narrow):
    sol = cached_solution(-0.2, narrow, params)
    assert sol.x2 == narrow.b
    with pytest.raises(DomainError):
        gamma_hat(0.5 * (narrow.a + sol.x1), -0.2, narrow, params)
