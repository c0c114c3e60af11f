"""Perpetual American put analytics and the diffusion toolkit on a corridor.

Everything here is closed form. Functions built from powers of x are
represented by :class:`PowerSum` so that derivatives and integrals stay exact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

from .errors import DomainError, NumericalError

LOG_EPS = 1e-9  # |p + 1| below this switches a power antiderivative to log


@dataclass(frozen=True)
class MarketParams:
    """Black-Scholes market: short rate r, volatility sigma, strike K."""

    r: float = 0.03
    sigma: float = 0.30
    K: float = 100.0

    def __post_init__(self):
        for name in ("r", "sigma", "K"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise DomainError(f"{name} must be a finite positive number, got {v!r}")

    @cached_property
    def d(self) -> float:
        return 2.0 * self.r / self.sigma**2

    @cached_property
    def a_hat(self) -> float:
        """Exercise boundary of the perpetual put."""
        return self.K / (1.0 + 1.0 / self.d)

    @cached_property
    def roots(self) -> tuple[float, float]:
        d = self.d
        disc = math.sqrt((d - 1.0) ** 2 + 8.0 * d)
        q1 = 0.5 * (1.0 - d + disc)
        # q1*q2 = -2d avoids cancellation in the negative root
        return q1, -2.0 * d / q1

    @property
    def q1(self) -> float:
        return self.roots[0]

    @property
    def q2(self) -> float:
        return self.roots[1]

    def generator(self, v, dv, d2v, x):
        """Apply (L - 2r) given v, v', v'' evaluated at x."""
        x = np.asarray(x, dtype=float)
        return 0.5 * self.sigma**2 * x**2 * d2v + self.r * x * dv - 2.0 * self.r * v


@dataclass(frozen=True)
class Corridor:
    """Re-assessment interval (a, b). ``b = math.inf`` marks a half-line."""

    a: float
    b: float

    def __post_init__(self):
        if not (math.isfinite(self.a) and self.a > 0):
            raise DomainError(f"corridor lower end must be positive and finite, got {self.a!r}")
        if not (self.b > self.a):
            raise DomainError(f"corridor needs a < b, got a={self.a!r}, b={self.b!r}")

    @property
    def is_finite(self) -> bool:
        return math.isfinite(self.b)

    def check(self, p: MarketParams, finite: bool = True) -> "Corridor":
        if self.a < p.a_hat * (1.0 - 1e-12):
            raise DomainError(f"corridor lower end a={self.a} lies below the exercise boundary {p.a_hat}")
        if finite and not self.is_finite:
            raise DomainError("operation needs a finite corridor")
        return self

    def contains(self, x, closed: bool = True) -> bool:
        x = np.asarray(x, dtype=float)
        if closed:
            return bool(np.all((x >= self.a) & (x <= self.b)))
        return bool(np.all((x > self.a) & (x < self.b)))


def _falling(p: float, k: int) -> float:
    out = 1.0
    for j in range(k):
        out *= p - j
    return out


@dataclass(frozen=True)
class PowerSum:
    """f(x) = sum_i c_i x^{e_i}, evaluated in log space."""

    coefs: tuple
    exps: tuple

    def __call__(self, x, deriv: int = 0):
        c, e = _terms(self, deriv)
        if np.ndim(x) == 0:
            lx = math.log(x)
            return sum(ci * math.exp(ei * lx) for ci, ei in zip(c, e))
        c, e = np.array(c), np.array(e)
        lx = np.log(np.asarray(x, dtype=float))
        return np.exp(np.multiply.outer(lx, e)) @ c

    def __add__(self, other: "PowerSum") -> "PowerSum":
        return PowerSum(self.coefs + other.coefs, self.exps + other.exps)

    def scale(self, k: float) -> "PowerSum":
        return PowerSum(tuple(k * c for c in self.coefs), self.exps)

    def times_power(self, k: float, p: float) -> "PowerSum":
        """Multiply by k x^p."""
        return PowerSum(tuple(k * c for c in self.coefs), tuple(e + p for e in self.exps))

    def product(self, other: "PowerSum") -> "PowerSum":
        coefs, exps = [], []
        for c1, e1 in zip(self.coefs, self.exps):
            for c2, e2 in zip(other.coefs, other.exps):
                coefs.append(c1 * c2)
                exps.append(e1 + e2)
        return PowerSum(tuple(coefs), tuple(exps))

    def integral(self, lo: float, hi: float) -> float:
        """Exact integral over [lo, hi] (hi may be inf when every term decays)."""
        total = 0.0
        for c, e in zip(self.coefs, self.exps):
            if c == 0.0:
                continue
            if abs(e + 1.0) < LOG_EPS:
                if not math.isfinite(hi):
                    raise NumericalError("log antiderivative does not converge at infinity")
                total += c * (math.log(hi) - math.log(lo))
                continue
            p1 = e + 1.0
            top = 0.0 if not math.isfinite(hi) else math.exp(p1 * math.log(hi))
            if not math.isfinite(hi) and p1 > 0:
                raise NumericalError(f"x^{e} is not integrable at infinity")
            total += c * (top - math.exp(p1 * math.log(lo))) / p1
        return total


@lru_cache(maxsize=65536)
def _terms(ps: PowerSum, deriv: int):
    """Coefficients and exponents of the deriv-th derivative."""
    return (tuple(ci * _falling(ei, deriv) for ci, ei in zip(ps.coefs, ps.exps)),
            tuple(ei - deriv for ei in ps.exps))


def _positive_array(x, name="x", allow_zero=False):
    arr = np.asarray(x, dtype=float)
    bad = arr < 0 if allow_zero else arr <= 0
    if np.any(bad) or np.any(np.isnan(arr)):
        raise DomainError(f"{name} must be {'non-negative' if allow_zero else 'positive'}, got {x!r}")
    return arr


def put_price(x, p: MarketParams):
    """Perpetual American put price."""
    arr = _positive_array(x, allow_zero=True)
    d, ah = p.d, p.a_hat
    with np.errstate(divide="ignore"):
        cont = (1.0 / d) * ah ** (1.0 + d) * np.where(arr > 0, arr, 1.0) ** (-d)
    out = np.where(arr <= ah, p.K - arr, cont)
    return float(out) if np.ndim(x) == 0 else out


def put_delta(x, p: MarketParams):
    """P'(x) = max(-(a_hat/x)^{1+d}, -1)."""
    arr = _positive_array(x)
    out = np.maximum(-((p.a_hat / arr) ** (1.0 + p.d)), -1.0)
    return float(out) if np.ndim(x) == 0 else out


def characteristic_roots(p: MarketParams) -> tuple[float, float]:
    """Roots q1 > 0 > q2 of q^2 + (d-1)q - 2d = 0."""
    return p.roots


def scale_density(x, p: MarketParams):
    return np.asarray(x, dtype=float) ** (-p.d)


def speed_density(x, p: MarketParams):
    return 2.0 * np.asarray(x, dtype=float) ** (p.d - 2.0) / p.sigma**2


def wronskian_hat(p: MarketParams) -> float:
    """Wronskian of the monomial pair (x^{q1}, x^{q2}) divided by the scale density."""
    return p.q1 - p.q2


# speed density as a PowerSum (used by the exact resolvent)
def _speed_sum(p: MarketParams) -> PowerSum:
    return PowerSum((2.0 / p.sigma**2,), (p.d - 2.0,))


@dataclass(frozen=True)
class FundamentalPair:
    """phi decreasing with phi(b)=0, psi increasing with psi(a)=0."""

    corridor: Corridor
    phi: PowerSum
    psi: PowerSum
    w: float
    w_hat: float


def fundamental_pair(c: Corridor, p: MarketParams) -> FundamentalPair:
    c.check(p, finite=False)
    q1, q2 = p.roots
    w_hat = wronskian_hat(p)
    # x^{q2} - (b^{q2}/b^{q1}) x^{q1}; for b = inf only x^{q2} survives
    if c.is_finite:
        phi = PowerSum((1.0, -math.exp((q2 - q1) * math.log(c.b))), (q2, q1))
        w = w_hat * (1.0 - math.exp((q1 - q2) * math.log(c.a / c.b)))
    else:
        phi = PowerSum((1.0,), (q2,))
        w = w_hat
    psi = PowerSum((1.0, -math.exp((q1 - q2) * math.log(c.a))), (q1, q2))
    return FundamentalPair(c, phi, psi, w, w_hat)


def resolvent(x, g, c: Corridor, p: MarketParams, kinks: Sequence[float] = ()):
    """E_x int_0^{tau} e^{-2ru} g(S_u) du for the first exit tau from the corridor.

    ``g`` is either a :class:`PowerSum` (exact antiderivatives) or a callable
    (adaptive quadrature split at ``kinks``).
    """
    fp = fundamental_pair(c, p)
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(xs < c.a) or np.any(xs > c.b):
        raise DomainError(f"x must lie in [{c.a}, {c.b}]")
    out = np.empty_like(xs)
    if isinstance(g, PowerSum):
        m = _speed_sum(p)
        lower_int = fp.psi.product(g).product(m)
        upper_int = fp.phi.product(g).product(m)
        for i, xi in enumerate(xs):
            left = lower_int.integral(c.a, xi)
            right = upper_int.integral(xi, c.b)
            out[i] = (fp.phi(xi) * left + fp.psi(xi) * right) / fp.w
    else:
        for i, xi in enumerate(xs):
            left = _quad(lambda z: fp.psi(z) * g(z) * speed_density(z, p), c.a, xi, kinks)
            right = _quad(lambda z: fp.phi(z) * g(z) * speed_density(z, p), xi, c.b, kinks)
            out[i] = (fp.phi(xi) * left + fp.psi(xi) * right) / fp.w
    return float(out[0]) if np.ndim(x) == 0 else out


def _quad(fn: Callable[[float], float], lo: float, hi: float, kinks) -> float:
    if hi <= lo:
        return 0.0
    pts = [k for k in kinks if lo < k < hi] if math.isfinite(hi) else []
    kw = dict(epsabs=0.0, epsrel=1e-10, limit=500, full_output=1)
    if pts:
        kw["points"] = pts
    res = integrate.quad(fn, lo, hi, **kw)
    val, err = res[0], res[1]
    if len(res) > 3 or not math.isfinite(val):
        raise NumericalError(f"quadrature on [{lo}, {hi}] did not converge: value={val}, error={err}")
    return val
