"""Optimal initial holding h*: the fixed point h = Gamma-hat_h(x)."""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .boundary import BoundarySolution, solve_boundaries
from .errors import DomainError, NumericalError
from .market import Corridor, MarketParams, put_delta
from .payoff import payoff_model

H_GRID = 256


_CACHE: dict = {}
_LOCK = threading.Lock()
_CACHE_LIMIT = 200_000


def cached_solution(h: float, c: Corridor, p: MarketParams) -> BoundarySolution:
    """Memoised boundary solve keyed on h rounded to 12 decimals.

    A cached solution at the nearest h seeds the local solver; the result is
    verified either way, so the seed only affects speed.
    """
    h = round(float(h), 12)
    with _LOCK:
        table = _CACHE.setdefault((c, p), {})
        sol = table.get(h)
        guess = table[min(table, key=lambda k: abs(k - h))] if table and sol is None else None
    if sol is not None:
        return sol
    sol = solve_boundaries(h, c, p, guess=guess)
    with _LOCK:
        if sum(len(t) for t in _CACHE.values()) > _CACHE_LIMIT:
            _CACHE.clear()
        _CACHE.setdefault((c, p), {})[h] = sol
    return sol


def _inner_model(sol: BoundarySolution):
    return payoff_model(sol.continuation, sol.params)


def _in_continuation(x, sol: BoundarySolution, closed: bool) -> bool:
    if closed:
        return sol.x1 <= x <= sol.x2
    return sol.x1 < x < sol.x2


def gamma_hat(x: float, h: float, c: Corridor, p: MarketParams) -> float:
    """Gamma computed on the continuation corridor (x1*(h), x2*(h))."""
    sol = cached_solution(h, c, p)
    if not _in_continuation(x, sol, closed=True):
        raise DomainError(f"x={x} lies in the stopping region [{c.a}, {sol.x1}] U [{sol.x2}, {c.b}] for h={h}")
    return _inner_model(sol).Gamma(x)


def dV_dh(x: float, h: float, c: Corridor, p: MarketParams) -> float:
    """2 gamma-hat_1 (h - Gamma-hat_h); zero when x is in the stopping region."""
    sol = cached_solution(h, c, p)
    if not _in_continuation(x, sol, closed=False):
        return 0.0
    g1, g2, _ = _inner_model(sol).gamma(x)
    return 2.0 * (h * g1 - g2)


def _fixed_point_gap(x: float, h: float, c: Corridor, p: MarketParams) -> float:
    """h - Gamma-hat_h(x), NaN when x is not in the continuation set."""
    sol = cached_solution(h, c, p)
    if not _in_continuation(x, sol, closed=False):
        return math.nan
    return h - _inner_model(sol).Gamma(x)


@dataclass(frozen=True)
class HedgePlan:
    x: float
    h_star: float
    solution: BoundarySolution
    value: float
    corridor: Corridor
    params: MarketParams
    residual: float
    roots: tuple = field(default=())

    @property
    def x1(self) -> float:
        return self.solution.x1

    @property
    def x2(self) -> float:
        return self.solution.x2

    def post_trade(self, s):
        """Holding after the rebalance at spot s: Gamma on the full corridor."""
        return payoff_model(self.corridor, self.params).Gamma(s)


def optimal_initial_holding(x: float, c: Corridor, p: MarketParams, n_grid: int = H_GRID) -> HedgePlan:
    """All grid-bracketed roots of h - Gamma-hat_h(x); keep the one with least V(x, h)."""
    c.check(p)
    if not (c.a < x < c.b):
        raise DomainError(f"x={x} must lie strictly inside ({c.a}, {c.b})")
    pa, pb = put_delta(c.a, p), put_delta(c.b, p)
    hs = np.linspace(pa, pb, n_grid)
    gaps = np.array([_fixed_point_gap(x, h, c, p) for h in hs])
    roots = []
    for i in range(n_grid - 1):
        g0, g1 = gaps[i], gaps[i + 1]
        if np.isnan(g0) or np.isnan(g1):
            continue
        if g0 == 0.0:
            roots.append(hs[i])
        elif g0 * g1 < 0:
            root = optimize.brentq(lambda h: _fixed_point_gap(x, h, c, p), hs[i], hs[i + 1],
                                   xtol=1e-14, rtol=4 * np.finfo(float).eps)
            roots.append(root)
    if not roots:
        raise NumericalError(f"no sign change of h - Gamma-hat_h(x) at x={x}",)
    values = [cached_solution(h, c, p).value(x) for h in roots]
    best = int(np.argmin(values))
    h_star = float(roots[best])
    sol = cached_solution(h_star, c, p)
    residual = abs(h_star - _inner_model(sol).Gamma(x))
    if residual > 1e-8:
        raise NumericalError(f"fixed-point residual {residual:.3g} above 1e-8 at x={x}")
    return HedgePlan(x, h_star, sol, float(values[best]), c, p, residual, tuple(float(r) for r in roots))


def scalar_value(x: float, c: Corridor, p: MarketParams) -> float:
    """inf over h of V(x, h); zero at the corridor ends."""
    if x <= c.a or x >= c.b:
        if x < c.a or x > c.b:
            raise DomainError(f"x={x} outside [{c.a}, {c.b}]")
        return 0.0
    return optimal_initial_holding(x, c, p).value
