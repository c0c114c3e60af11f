"""Closed-form corridor payoff: gamma functions, post-trade holding, stopping payoff, sign function."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import optimize

from .errors import AssumptionViolated, DomainError, NumericalError
from .market import Corridor, MarketParams, PowerSum, put_delta

SERIES_ZONE = 1e-3  # relative distance to an endpoint below which Gamma uses its Taylor series
SERIES_ORDER = 6
SCAN_POINTS = 2048


@dataclass(frozen=True)
class GammaCoefficients:
    A1: float
    A2: float
    B1: float
    B2: float
    C1: float
    C2: float
    D1: float
    D2: float


def _pow(x: float, e: float) -> float:
    return math.exp(e * math.log(x))


def gamma_coefficients(c: Corridor, p: MarketParams) -> GammaCoefficients:
    c.check(p)
    a, b, d, ah = c.a, c.b, p.d, p.a_hat
    q = p.roots
    A = [1.0 / (_pow(a, q[i] - q[1 - i]) - _pow(b, q[i] - q[1 - i])) for i in (0, 1)]
    B = [(_pow(ah / a, 2 + 2 * d) * _pow(a, 2 - qi) - _pow(ah / b, 2 + 2 * d) * _pow(b, 2 - qi)) / d**2
         for qi in q]
    C = [(_pow(ah / a, 1 + d) * _pow(a, 2 - qi) - _pow(ah / b, 1 + d) * _pow(b, 2 - qi)) / d for qi in q]
    D = [_pow(a, 2 - qi) - _pow(b, 2 - qi) for qi in q]
    return GammaCoefficients(A[0], A[1], B[0], B[1], C[0], C[1], D[0], D[1])


@dataclass(frozen=True)
class CorridorPayoff:
    """All closed-form payoff quantities for one (corridor, params) pair."""

    corridor: Corridor
    params: MarketParams
    coefficients: GammaCoefficients
    gammas: tuple  # three PowerSums
    _series: dict = field(repr=False, compare=False)  # endpoint Taylor data and cached scales

    def _check(self, x, closed=True):
        c = self.corridor
        arr = np.asarray(x, dtype=float)
        tol = 1e-12 * c.b
        if np.any(np.isnan(arr)) or np.any(arr < c.a - tol) or np.any(arr > c.b + tol):
            raise DomainError(f"x={x!r} lies outside the corridor [{c.a}, {c.b}]")
        return np.clip(arr, c.a, c.b)

    def gamma(self, x, deriv: int = 0):
        arr = self._check(x)
        out = tuple(g(arr, deriv) for g in self.gammas)
        if deriv == 0:
            # exact zeros at the endpoints
            at_end = (arr == self.corridor.a) | (arr == self.corridor.b)
            out = tuple(np.where(at_end, 0.0, o) for o in out)
        if np.ndim(x) == 0:
            return tuple(float(o) for o in out)
        return out

    def ratio(self, x):
        """Gamma(x) and Gamma'(x), using endpoint Taylor series where 0/0 cancellation bites."""
        arr = np.atleast_1d(self._check(x)).astype(float)
        c = self.corridor
        g1, g2, _ = (g(arr) for g in self.gammas)
        d1, d2, _ = (g(arr, 1) for g in self.gammas)
        with np.errstate(divide="ignore", invalid="ignore"):
            G = g2 / g1
            Gp = (d2 * g1 - g2 * d1) / g1**2
        zone = SERIES_ZONE * (c.b - c.a)
        for key, end in (("a", c.a), ("b", c.b)):
            mask = np.abs(arr - end) < zone
            if not np.any(mask):
                continue
            n, dd = self._series[key]
            delta = arr[mask] - end
            N = sum(n[k] * delta ** (k - 1) / math.factorial(k) for k in range(1, SERIES_ORDER + 1))
            D = sum(dd[k] * delta ** (k - 1) / math.factorial(k) for k in range(1, SERIES_ORDER + 1))
            Np = sum(n[k] * (k - 1) * delta ** (k - 2) / math.factorial(k) for k in range(2, SERIES_ORDER + 1))
            Dp = sum(dd[k] * (k - 1) * delta ** (k - 2) / math.factorial(k) for k in range(2, SERIES_ORDER + 1))
            G[mask] = N / D
            Gp[mask] = (Np * D - N * Dp) / D**2
        if np.ndim(x) == 0:
            return float(G[0]), float(Gp[0])
        return G, Gp

    def Gamma(self, x):
        return self.ratio(x)[0]

    def M_pair(self, x: float) -> tuple[float, float]:
        """(M(x), M'(x)) for a scalar x; the hot path of the boundary solver."""
        c = self.corridor
        if x <= c.a or x >= c.b:
            x = min(max(x, c.a), c.b)
            G = self.Gamma(x)
            d1, d2, d3 = (g(x, 1) for g in self.gammas)
            return 0.0, G * G * d1 - 2 * G * d2 + d3
        s1, s2, s3 = self.gammas
        g1, g2, g3 = s1(x), s2(x), s3(x)
        d1, d2, d3 = s1(x, 1), s2(x, 1), s3(x, 1)
        if min(x - c.a, c.b - x) < SERIES_ZONE * (c.b - c.a):
            G = self.Gamma(x)
        else:
            G = g2 / g1
        return max(g3 - 2 * G * g2 + G * G * g1, 0.0), G * G * d1 - 2 * G * d2 + d3

    @property
    def M_scale(self) -> float:
        """Largest value of M on the corridor (sampled), used for tolerances."""
        if "M_scale" not in self._series:
            xs = np.linspace(self.corridor.a, self.corridor.b, 513)
            self._series["M_scale"] = float(np.max(self.M(xs)))
        return self._series["M_scale"]

    def M(self, x):
        arr = self._check(x)
        G, _ = self.ratio(arr)
        g1, g2, g3 = self.gamma(arr)
        out = np.maximum(g3 - 2 * G * g2 + G**2 * g1, 0.0)
        at_end = (arr == self.corridor.a) | (arr == self.corridor.b)
        out = np.where(at_end, 0.0, out)
        return float(out) if np.ndim(x) == 0 else out

    def M_deriv(self, x, order: int = 1):
        arr = self._check(x)
        G, Gp = self.ratio(arr)
        e1, e2, e3 = self.gamma(arr, order)
        out = G**2 * e1 - 2 * G * e2 + e3
        if order == 2:
            out = out - 2 * Gp**2 * self.gamma(arr)[0]
        elif order != 1:
            raise ValueError("order must be 1 or 2")
        return float(out) if np.ndim(x) == 0 else out

    def quadratic_cost(self, x, zeta):
        """M-hat(x, zeta): residual variance when holding zeta from x until the corridor exit."""
        g1, g2, g3 = self.gamma(x)
        return g3 - 2 * zeta * g2 + zeta**2 * g1

    def G(self, x, h):
        arr = self._check(x)
        p = self.params
        Gm, Gp = self.ratio(arr)
        g1 = self.gamma(arr)[0]
        dP = put_delta(arr, p)
        out = p.sigma**2 * arr**2 * ((h - dP) ** 2 - (Gm - dP) ** 2 - Gp**2 * g1)
        return float(out) if np.ndim(x) == 0 and np.ndim(h) == 0 else out

    @property
    def limits(self) -> tuple[float, float]:
        """(Gamma(a+), Gamma(b-))."""
        return self.Gamma(self.corridor.a), self.Gamma(self.corridor.b)


def _gamma_sums(c: Corridor, p: MarketParams, k: GammaCoefficients):
    q1, q2 = p.roots
    d, ah = p.d, p.a_hat
    g1 = PowerSum((-1.0, k.A1 * k.D2, k.A2 * k.D1), (2.0, q1, q2))
    g2 = PowerSum((-_pow(ah, 1 + d) / d, k.A1 * k.C2, k.A2 * k.C1), (1.0 - d, q1, q2))
    g3 = PowerSum((-_pow(ah, 2 + 2 * d) / d**2, k.A1 * k.B2, k.A2 * k.B1), (-2.0 * d, q1, q2))
    return g1, g2, g3


@lru_cache(maxsize=4096)
def payoff_model(c: Corridor, p: MarketParams) -> CorridorPayoff:
    k = gamma_coefficients(c, p)
    sums = _gamma_sums(c, p, k)
    series = {}
    for key, end in (("a", c.a), ("b", c.b)):
        n = [sums[1](end, j) for j in range(SERIES_ORDER + 1)]
        dd = [sums[0](end, j) for j in range(SERIES_ORDER + 1)]
        series[key] = (n, dd)
    return CorridorPayoff(c, p, k, sums, series)


def gamma_functions(x, c: Corridor, p: MarketParams):
    return payoff_model(c, p).gamma(x)


def gamma_post_trade(x, c: Corridor, p: MarketParams):
    """Gamma(x) = gamma_2/gamma_1; endpoint values are the one-sided limits."""
    return payoff_model(c, p).Gamma(x)


def gamma_limits(c: Corridor, p: MarketParams) -> tuple[float, float]:
    return payoff_model(c, p).limits


def stopping_payoff(x, c: Corridor, p: MarketParams):
    return payoff_model(c, p).M(x)


def stopping_payoff_deriv(x, c: Corridor, p: MarketParams, order: int = 1):
    return payoff_model(c, p).M_deriv(x, order)


def running_cost(x, theta, p: MarketParams):
    """f(x, theta) = (theta - P'(x))^2 sigma^2 x^2."""
    x = np.asarray(x, dtype=float)
    out = (theta - put_delta(x, p)) ** 2 * p.sigma**2 * x**2
    return float(out) if np.ndim(out) == 0 else out


def sign_function(x, h, c: Corridor, p: MarketParams):
    return payoff_model(c, p).G(x, h)


def x_p(h, p: MarketParams):
    """Spot where the put delta equals h."""
    arr = np.asarray(h, dtype=float)
    if np.any(arr < -1.0) or np.any(arr >= 0.0) or np.any(np.isnan(arr)):
        raise DomainError(f"x_p needs h in [-1, 0), got {h!r}")
    out = p.a_hat * (-arr) ** (-1.0 / (1.0 + p.d))
    return float(out) if np.ndim(h) == 0 else out


def x_gamma(h: float, c: Corridor, p: MarketParams) -> float:
    """Spot where Gamma equals h."""
    model = payoff_model(c, p)
    ga, gb = model.limits
    if not (ga < h < gb):
        raise DomainError(f"x_gamma needs h in ({ga}, {gb}), got {h}")
    root = optimize.brentq(lambda x: model.Gamma(x) - h, c.a, c.b, xtol=1e-14, rtol=4 * np.finfo(float).eps)
    if abs(model.Gamma(root) - h) > 1e-10:
        raise NumericalError(f"x_gamma residual too large at h={h}")
    return root


@dataclass(frozen=True)
class CaseClassification:
    case: str  # "A1", "A2" or "A3"
    h: float
    x_G1: float
    x_G2: float | None
    tangential: tuple = ()
    gamma_a: float = math.nan
    gamma_b: float = math.nan


def _grid(c: Corridor, n: int = SCAN_POINTS) -> np.ndarray:
    return np.geomspace(c.a, c.b, n)


def classify_case(h: float, c: Corridor, p: MarketParams) -> CaseClassification:
    """Locate the roots of G(., h) and tag the sign pattern A1/A2/A3."""
    model = payoff_model(c, p)
    pa, pb = put_delta(c.a, p), put_delta(c.b, p)
    tol_h = 1e-12
    if not (pa - tol_h <= h <= pb + tol_h):
        raise DomainError(f"h={h} outside [P'(a), P'(b)] = [{pa}, {pb}]")
    h = min(max(h, pa), pb)
    ga, gb = model.limits
    xs = _grid(c)
    G = model.G(xs, h)
    scale = float(np.max(np.abs(G)))
    if scale == 0.0:
        raise AssumptionViolated("sign function vanishes identically", {"h": h})
    zero = 1e-12 * scale

    # endpoint signs, with the tie broken by the h-rule
    sa = np.sign(G[0]) if abs(G[0]) > zero else (1.0 if h > ga else -1.0)
    sb = np.sign(G[-1]) if abs(G[-1]) > zero else (-1.0 if h >= gb else 1.0)

    s = np.sign(G)
    s[0], s[-1] = sa, sb
    # carry signs across exact zeros so a touch does not count as a crossing
    for i in range(1, len(s)):
        if s[i] == 0:
            s[i] = s[i - 1]
    idx = np.nonzero(s[:-1] * s[1:] < 0)[0]
    roots = []
    for i in idx:
        lo, hi = xs[i], xs[i + 1]
        f = lambda x: model.G(x, h)
        if f(lo) == 0.0:
            roots.append(lo)
            continue
        if f(lo) * f(hi) > 0:  # sign flip came from an endpoint override
            roots.append(lo if i == 0 else hi)
            continue
        roots.append(optimize.brentq(f, lo, hi, xtol=1e-10, rtol=4 * np.finfo(float).eps))

    # tangential touches: local minima of |G| that come close to zero without a sign change
    tangential = []
    absG = np.abs(G)
    cand = np.nonzero((absG[1:-1] <= absG[:-2]) & (absG[1:-1] <= absG[2:]) & (absG[1:-1] < 1e-3 * scale))[0] + 1
    for i in cand:
        if i - 1 in idx or i in idx:
            continue
        res = optimize.minimize_scalar(lambda x: abs(model.G(x, h)), bounds=(xs[i - 1], xs[i + 1]),
                                       method="bounded", options={"xatol": 1e-10 * xs[i]})
        if res.fun < 1e-9 * scale:
            tangential.append(float(res.x))

    diag = {"h": h, "roots": roots, "tangential": tangential, "G_a": float(G[0]), "G_b": float(G[-1]),
            "Gamma_a": ga, "Gamma_b": gb}
    if len(roots) + len(tangential) > 2:
        raise AssumptionViolated(f"sign function has more than two roots for h={h}", diag)

    if sa > 0 and sb < 0:
        case, expected = "A1", 1
    elif sa > 0 and sb > 0:
        case, expected = "A2", 2
    elif sa < 0 and sb > 0:
        case, expected = "A3", 1
    else:
        raise AssumptionViolated(f"unsupported sign pattern (G(a)<0, G(b)<0) for h={h}", diag)
    if len(roots) != expected:
        raise AssumptionViolated(f"case {case} expects {expected} crossing root(s), found {len(roots)}", diag)
    # cross-check against the holding-based characterisation
    by_h = "A3" if h <= ga else ("A1" if h >= gb else "A2")
    if by_h != case:
        raise AssumptionViolated(f"sign pattern says {case} but h versus Gamma limits says {by_h}", diag)

    if case == "A2":
        x1, x2 = roots
    else:
        x1 = roots[0]
        x2 = tangential[0] if tangential else None
    return CaseClassification(case, h, x1, x2, tuple(tangential), ga, gb)
