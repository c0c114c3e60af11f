import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from corridor_hedge.errors import DomainError
from corridor_hedge.market import (Corridor, MarketParams, PowerSum, characteristic_roots, fundamental_pair,
                                   put_delta, put_price, resolvent, speed_density)


def test_figure_constants(params):
    assert params.d == pytest.approx(2 / 3, rel=1e-15)
    assert params.a_hat == pytest.approx(40.0, rel=1e-14)
    q1, q2 = characteristic_roots(params)
    assert q1 == pytest.approx(4 / 3, rel=1e-14)
    assert q2 == pytest.approx(-1.0, rel=1e-14)


@given(r=st.floats(1e-3, 0.2), sigma=st.floats(0.05, 1.5))
@settings(max_examples=200, deadline=None)
def test_roots_solve_the_quadratic(r, sigma):
    p = MarketParams(r, sigma, 100.0)
    d = p.d
    q1, q2 = p.roots
    assert q1 > 0 > q2
    for q in (q1, q2):
        assert abs(q * q + (d - 1) * q - 2 * d) <= 1e-12 * max(1.0, q * q, d)


def test_put_at_and_below_exercise_boundary(params):
    assert put_price(40.0, params) == pytest.approx(60.0, rel=1e-14)
    assert put_price(20.0, params) == 80.0
    assert put_delta(30.0, params) == -1.0


def test_smooth_fit_at_exercise_boundary(params):
    ah, eps = params.a_hat, 1e-7
    assert put_price(ah + eps, params) == pytest.approx(put_price(ah - eps, params), abs=1e-6)
    assert put_delta(ah * (1 + 1e-12), params) == pytest.approx(-1.0, abs=1e-10)


def test_put_delta_is_price_derivative(params):
    xs = np.linspace(45, 300, 50)
    h = 1e-5 * xs
    fd = (put_price(xs + h, params) - put_price(xs - h, params)) / (2 * h)
    assert np.allclose(fd, put_delta(xs, params), rtol=1e-8)


def test_put_solves_pricing_ode_above_boundary(params):
    xs = np.linspace(45, 300, 50)
    h = 1e-4 * xs
    P = put_price(xs, params)
    d2 = (put_price(xs + h, params) - 2 * P + put_price(xs - h, params)) / h**2
    resid = 0.5 * params.sigma**2 * xs**2 * d2 + params.r * xs * put_delta(xs, params) - params.r * P
    assert np.max(np.abs(resid)) < 1e-5 * np.max(P)


@pytest.mark.parametrize("bad", [dict(r=0.0), dict(sigma=-0.1), dict(K=math.nan), dict(r=math.inf)])
def test_invalid_params_rejected(bad):
    with pytest.raises(DomainError):
        MarketParams(**bad)


def test_invalid_corridors_rejected(params):
    with pytest.raises(DomainError):
        Corridor(110.0, 90.0)
    with pytest.raises(DomainError):
        Corridor(0.0, 90.0)
    with pytest.raises(DomainError):
        Corridor(30.0, 90.0).check(params)
    with pytest.raises(DomainError):
        put_price(-1.0, params)


def test_power_sum_calculus():
    ps = PowerSum((2.0, -1.5, 0.7), (1.3, -1.0, -2.2))
    xs = np.linspace(1.5, 9.0, 20)
    h = 1e-6 * xs
    fd = (ps(xs + h) - ps(xs - h)) / (2 * h)
    assert np.allclose(ps(xs, 1), fd, rtol=1e-7)
    exact = ps.integral(1.5, 9.0)
    quad = integrate.quad(lambda z: ps(z), 1.5, 9.0, epsrel=1e-13)[0]
    assert exact == pytest.approx(quad, rel=1e-12)
    assert ps(3.0) == pytest.approx(float(ps(np.array([3.0]))[0]), rel=1e-15)


def test_fundamental_pair(params, narrow):
    fp = fundamental_pair(narrow, params)
    assert abs(fp.phi(narrow.b)) < 1e-12 * abs(fp.phi(narrow.a))
    assert abs(fp.psi(narrow.a)) < 1e-12 * abs(fp.psi(narrow.b))
    xs = np.linspace(91, 109, 7)
    for f in (fp.phi, fp.psi):
        assert np.allclose(params.generator(f(xs), f(xs, 1), f(xs, 2), xs), 0.0, atol=1e-12 * np.max(np.abs(f(xs))))
    # Wronskian over the scale density is constant
    wr = (fp.phi(xs) * fp.psi(xs, 1) - fp.phi(xs, 1) * fp.psi(xs)) * xs**params.d
    assert np.allclose(wr, fp.w, rtol=1e-10)


def test_resolvent_exact_matches_quadrature(params, wide):
    g = PowerSum((params.sigma**2,), (2.0,))
    xs = np.linspace(41, 149, 9)
    exact = resolvent(xs, g, wide, params)
    quad = resolvent(xs, lambda z: params.sigma**2 * z * z, wide, params)
    assert np.allclose(exact, quad, rtol=1e-9)


def test_resolvent_of_discount_rate_gives_laplace_transform(params, narrow):
    # E int_0^tau 2r e^{-2ru} du = 1 - E e^{-2r tau}, and E e^{-2r tau} = psi/psi(b) + phi/phi(a)
    fp = fundamental_pair(narrow, params)
    x = 97.0
    lhs = resolvent(x, PowerSum((2 * params.r,), (0.0,)), narrow, params)
    lt = fp.psi(x) / fp.psi(narrow.b) + fp.phi(x) / fp.phi(narrow.a)
    assert lhs == pytest.approx(1.0 - lt, rel=1e-10)
    assert resolvent(narrow.a, PowerSum((1.0,), (0.0,)), narrow, params) == pytest.approx(0.0, abs=1e-14)


def test_speed_density_values(params):
    assert speed_density(2.0, params) == pytest.approx(2 * 2.0 ** (params.d - 2) / params.sigma**2)
