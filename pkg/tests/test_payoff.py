import numpy as np
import pytest

from corridor_hedge.errors import DomainError
from corridor_hedge.market import Corridor, put_delta, resolvent
from corridor_hedge.payoff import (classify_case, gamma_functions, gamma_limits, payoff_model, running_cost,
                                   sign_function, stopping_payoff, x_gamma, x_p)


def integrands(p):
    s2 = p.sigma**2
    return (lambda z: s2 * z * z,
            lambda z: s2 * z * z * put_delta(z, p),
            lambda z: s2 * z * z * put_delta(z, p) ** 2)


@pytest.mark.parametrize("corr", [(40.0, 150.0), (90.0, 110.0)])
def test_gammas_match_resolvent_quadrature(params, corr):
    c = Corridor(*corr)
    xs = np.linspace(c.a, c.b, 12)[1:-1]
    closed = gamma_functions(xs, c, params)
    for g, gam in zip(integrands(params), closed):
        quad = resolvent(xs, g, c, params)
        assert np.allclose(gam, quad, rtol=1e-9, atol=0)


def test_gammas_solve_their_ode(params, wide):
    m = payoff_model(wide, params)
    xs = np.linspace(41, 149, 50)
    for g, v, dv, d2v in zip(integrands(params), m.gamma(xs), m.gamma(xs, 1), m.gamma(xs, 2)):
        resid = params.generator(v, dv, d2v, xs) + g(xs)
        assert np.max(np.abs(resid)) <= 1e-8 * np.max(np.abs(g(xs)))


def test_payoff_vanishes_at_ends_and_is_positive(params, narrow, wide):
    for c in (narrow, wide):
        assert stopping_payoff(c.a, c, params) == 0.0
        assert stopping_payoff(c.b, c, params) == 0.0
        xs = np.linspace(c.a, c.b, 200)[1:-1]
        assert np.all(stopping_payoff(xs, c, params) > 0)


def test_gamma_is_the_best_constant_holding(params, narrow):
    m = payoff_model(narrow, params)
    for x in (91.0, 100.0, 108.0):
        G = m.Gamma(x)
        best = m.quadratic_cost(x, G)
        assert best == pytest.approx(m.M(x), rel=1e-10)
        for z in (G - 0.05, G + 0.05, put_delta(x, params)):
            assert m.quadratic_cost(x, z) >= best


def test_gamma_is_continuous_through_series_zone(params, wide):
    m = payoff_model(wide, params)
    for end, sgn in ((wide.a, 1), (wide.b, -1)):
        inside = [end + sgn * k * 1e-2 for k in (5, 9, 12, 20)]  # straddles the series switch at 0.11
        vals = np.array([m.Gamma(x) for x in inside])
        assert np.all(np.abs(np.diff(vals)) < 1e-3)
    ga, gb = gamma_limits(wide, params)
    assert m.Gamma(wide.a + 1e-9) == pytest.approx(ga, abs=1e-8)
    assert m.Gamma(wide.b - 1e-9) == pytest.approx(gb, abs=1e-8)
    assert put_delta(wide.a, params) < ga < gb < put_delta(wide.b, params)


def test_sign_function_matches_finite_differences(params, wide):
    m = payoff_model(wide, params)
    xs = np.linspace(45, 145, 41)
    step = 1e-3 * xs
    for h in (-0.9, -0.3, -0.15):
        M0, Mp, Mm = m.M(xs), m.M(xs + step), m.M(xs - step)
        d1 = (Mp - Mm) / (2 * step)
        d2 = (Mp - 2 * M0 + Mm) / step**2
        fd = params.generator(M0, d1, d2, xs) + running_cost(xs, h, params)
        G = sign_function(xs, h, wide, params)
        assert np.max(np.abs(fd - G)) <= 1e-5 * np.max(np.abs(G))


def test_x_p_inverts_delta(params):
    for h in (-1.0, -0.5, -0.2, -0.01):
        assert put_delta(x_p(h, params), params) == pytest.approx(h, rel=1e-12)
    with pytest.raises(DomainError):
        x_p(0.0, params)


def test_x_gamma_inverts_gamma(params, wide):
    m = payoff_model(wide, params)
    x = x_gamma(-0.3, wide, params)
    assert m.Gamma(x) == pytest.approx(-0.3, abs=1e-10)


def test_case_classification(params, wide):
    ga, gb = gamma_limits(wide, params)
    assert classify_case(put_delta(40.0, params), wide, params).case == "A3"
    assert classify_case(0.5 * (ga + gb), wide, params).case == "A2"
    res = classify_case(put_delta(150.0, params), wide, params)
    assert res.case == "A1"
    assert abs(sign_function(res.x_G1, res.h, wide, params)) < 1e-6 * params.sigma**2 * res.x_G1**2
    with pytest.raises(DomainError):
        classify_case(0.0, wide, params)


def test_a2_roots_bracket_the_gamma_crossing(params, wide):
    res = classify_case(-0.3, wide, params)
    assert res.x_G1 < x_gamma(-0.3, wide, params) < res.x_G2
