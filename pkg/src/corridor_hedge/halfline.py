"""Half-line variants (b = infinity).

Zero-mean formulation: the position is cleared at the rebalance, so the
stopping payoff is the residual variance of the option alone until the price
reaches a. Superhedge formulation: a static plan that switches to a pure stock
position once the discounted price falls to a threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize

from .boundary import particular_solution, value_sum
from .errors import DivergentIntegral, DomainError, NoBracket, VerificationFailed
from .market import Corridor, MarketParams, PowerSum, put_delta, put_price, resolvent
from .payoff import x_p

VERIFY_POINTS = 512


def _g3(p: MarketParams) -> PowerSum:
    """sigma^2 x^2 P'(x)^2 above the exercise boundary."""
    d, ah = p.d, p.a_hat
    return PowerSum((p.sigma**2 * ah ** (2 + 2 * d),), (-2.0 * d,))


def _check_a(a: float, p: MarketParams):
    if not (math.isfinite(a) and a >= p.a_hat * (1 - 1e-12)):
        raise DomainError(f"threshold a={a} must be finite and at least the exercise boundary {p.a_hat}")


def upper_tail_exponent(p: MarketParams) -> float:
    """Exponent of the integrand phi g m' at infinity; the resolvent needs it below -1."""
    return p.q2 - 2.0 * p.d + (p.d - 2.0)


@dataclass(frozen=True)
class HalfLinePayoff:
    """M_inf(x) = (a_hat^{2+2d}/d^2) (a^{-2d} (x/a)^{q2} - x^{-2d})."""

    a: float
    params: MarketParams
    closed_form: PowerSum

    def __call__(self, x, deriv: int = 0):
        arr = np.asarray(x, dtype=float)
        if np.any(arr < self.a * (1 - 1e-12)):
            raise DomainError(f"M_inf is defined on [a, inf), got x={x!r}")
        out = self.closed_form(np.maximum(arr, self.a), deriv)
        if deriv == 0:
            out = np.where(arr <= self.a, 0.0, np.maximum(out, 0.0))
        return float(out) if np.ndim(x) == 0 else out


def halfline_payoff(a: float, p: MarketParams) -> HalfLinePayoff:
    _check_a(a, p)
    if upper_tail_exponent(p) >= -1.0:
        raise DivergentIntegral("resolvent integral diverges at infinity for these parameters")
    d, ah, q2 = p.d, p.a_hat, p.q2
    k = ah ** (2 + 2 * d) / d**2
    return HalfLinePayoff(a, p, PowerSum((k * a ** (-2 * d - q2), -k), (q2, -2.0 * d)))


def payoff_infinite(x, a: float, p: MarketParams):
    """M_inf via the resolvent on (a, inf) with phi = x^{q2} and the reference Wronskian."""
    _check_a(a, p)
    if upper_tail_exponent(p) >= -1.0:
        raise DivergentIntegral(
            f"integrand exponent {upper_tail_exponent(p):.4g} >= -1: resolvent diverges at infinity")
    return resolvent(x, _g3(p), Corridor(a, math.inf), p)


def sign_function_infinite(x, h, p: MarketParams):
    """G_inf(x, h) = sigma^2 x^2 h (h - 2 P'(x))."""
    x = np.asarray(x, dtype=float)
    out = p.sigma**2 * x**2 * h * (h - 2.0 * put_delta(x, p))
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class HalfLineSolution:
    h: float
    a: float
    x_star: float
    C1: float
    C2: float
    x_G: float
    params: MarketParams
    post_trade_holding: float = 0.0

    def value(self, x):
        """v on (a, x*), M_inf on [x*, inf), zero at a."""
        M = halfline_payoff(self.a, self.params)
        arr = np.asarray(x, dtype=float)
        v = value_sum(self.h, self.C1, self.C2, self.params)(np.clip(arr, self.a, self.x_star))
        out = np.where(arr <= self.a, 0.0, np.where(arr < self.x_star, v, M(np.maximum(arr, self.a))))
        return float(out) if np.ndim(x) == 0 else out


def _halfline_system(h, a, p, M: HalfLinePayoff):
    q1, q2 = p.roots
    vp = particular_solution(h, p)

    def solve(xs):
        # v(a) = 0, v(xs) = M(xs) in the scaled basis (x/xs)^{q1}, (x/a)^{q2}
        r1 = -vp(a)
        r2 = M(xs) - vp(xs)
        lr = math.log(a / xs)
        u11, u22 = math.exp(q1 * lr), math.exp(-q2 * lr)
        det = u11 * u22 - 1.0
        alpha = (r1 * u22 - r2) / det
        beta = (u11 * r2 - r1) / det
        C1 = alpha * math.exp(-q1 * math.log(xs))
        C2 = beta * math.exp(-q2 * math.log(a))
        R = (alpha * q1 + beta * q2 * u22) / xs + vp(xs, 1) - M(xs, 1)
        return C1, C2, R

    return solve


def solve_boundary_infinite(h: float, a: float, p: MarketParams) -> HalfLineSolution:
    """Continuation set (a, x*) for the zero-mean half-line problem."""
    _check_a(a, p)
    pa = put_delta(a, p)
    if h == 0.0:
        raise DomainError("h = 0 is degenerate: G_inf vanishes identically and there is nothing to hedge")
    if not (pa - 1e-12 <= h < 0.0):
        raise DomainError(f"h={h} must lie in [P'(a), 0) = [{pa}, 0)")
    M = halfline_payoff(a, p)
    xG = x_p(h / 2.0, p)
    solve = _halfline_system(h, a, p, M)
    # dJ/dx* = -R * positive: the optimum is where R turns from + to -
    lo = max(xG, a * (1 + 1e-9))
    if solve(lo)[2] <= 0:
        raise NoBracket(f"pasting residual already negative at x_G={xG}", {"h": h, "x_G": xG})
    hi = lo * 1.5
    for _ in range(200):
        if solve(hi)[2] < 0:
            break
        lo, hi = hi, hi * 1.5
    else:
        raise NoBracket("could not bracket the half-line boundary", {"h": h, "last": hi})
    xs = optimize.brentq(lambda t: solve(t)[2], lo, hi, xtol=1e-12 * lo, rtol=1e-15)
    C1, C2, R = solve(xs)
    sol = HalfLineSolution(h, a, xs, C1, C2, xG, p)
    grid = np.linspace(a, xs, VERIFY_POINTS + 2)[1:-1]
    v = value_sum(h, C1, C2, p)(grid)
    scale = float(np.max(M(grid)))
    excess = float(np.max(v - M(grid)))
    if excess > 1e-9 * scale or abs(R) > 1e-7 * max(abs(M(xs, 1)), 1e-12):
        raise VerificationFailed("half-line candidate fails v <= M_inf or smooth pasting",
                                 {"h": h, "x_star": xs, "excess": excess, "residual": R})
    return sol


@dataclass(frozen=True)
class SuperhedgePlan:
    x: float
    a: float
    h: float  # initial holding P'(a)
    m0: float  # initial bond
    s_hat: float  # rebalance when the discounted price first reaches this level
    h1: float  # post-trade holding P(a)/a
    params: MarketParams


def superhedge_plan(x: float, a: float, p: MarketParams) -> SuperhedgePlan:
    _check_a(a, p)
    if not x > a:
        raise DomainError(f"spot x={x} must exceed a={a}")
    h = put_delta(a, p)
    Pa = put_price(a, p)
    m0 = put_price(x, p) - h * x
    s_hat = m0 / (Pa / a - h)
    plan = SuperhedgePlan(x, a, h, m0, s_hat, Pa / a, p)
    if not (m0 > 0 and s_hat < x and s_hat > a):
        raise VerificationFailed("superhedge plan inequalities fail", plan.__dict__)
    return plan
