"""Free-boundary solver for the rebalancing problem at a fixed initial holding h.

For a threshold rule "stop on leaving (x1, x2)" the cost J(x; x1, x2) solves
(L - 2r)v = -f(., h) with v = M at x1 and x2. Moving a threshold changes J by
-(v'(x_i) - M'(x_i)) times a positive factor, so smooth pasting is exactly the
first-order condition of minimising J over threshold pairs. The solver looks
for the pair where these pasting residuals change sign from + to -, falling
back to the corridor ends when the residual sign says J keeps decreasing
towards them.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .errors import DomainError, NoBracket, NumericalError, VerificationFailed
from .market import Corridor, MarketParams, PowerSum, put_delta
from .payoff import CaseClassification, classify_case, payoff_model, running_cost, x_p

VERIFY_POINTS = 512
SCAN = 33
XTOL = 1e-12


def particular_solution(h: float, p: MarketParams) -> PowerSum:
    """-x^2 (h - d^{-1} (a_hat/x)^{1+d})^2 expanded in powers of x."""
    d, ah = p.d, p.a_hat
    return PowerSum((-h * h, 2.0 * h * ah ** (1 + d) / d, -ah ** (2 + 2 * d) / d**2), (2.0, 1.0 - d, -2.0 * d))


def value_sum(h: float, C1: float, C2: float, p: MarketParams) -> PowerSum:
    q1, q2 = p.roots
    return PowerSum((C1, C2), (q1, q2)) + particular_solution(h, p)


def candidate_value(x, h: float, C1: float, C2: float, p: MarketParams, deriv: int = 0):
    """C1 x^{q1} + C2 x^{q2} plus the particular solution; valid for x >= a_hat."""
    arr = np.asarray(x, dtype=float)
    if np.any(arr < p.a_hat * (1 - 1e-12)):
        raise DomainError("candidate_value is only valid above the exercise boundary")
    return value_sum(h, C1, C2, p)(x, deriv)


@dataclass(frozen=True)
class BoundarySolution:
    h: float
    x1: float
    x2: float
    C1: float
    C2: float
    case: CaseClassification
    corridor: Corridor
    params: MarketParams
    diagnostics: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def continuation(self) -> Corridor:
        return Corridor(self.x1, self.x2)

    def value(self, x):
        return value(x, self.h, self, self.corridor, self.params)

    def value_deriv(self, x, order: int = 1):
        """Derivative of V(., h); inside the continuation set uses the ODE solution."""
        arr = np.asarray(x, dtype=float)
        model = payoff_model(self.corridor, self.params)
        inside = (arr > self.x1) & (arr < self.x2)
        v = value_sum(self.h, self.C1, self.C2, self.params)(arr, order)
        out = np.where(inside, v, model.M_deriv(arr, order))
        return float(out) if np.ndim(x) == 0 else out


class _Problem:
    """Threshold-rule algebra for one (h, corridor, params)."""

    def __init__(self, h: float, c: Corridor, p: MarketParams):
        self.h, self.c, self.p = h, c, p
        self.model = payoff_model(c, p)
        self.vp = particular_solution(h, p)
        self.q1, self.q2 = p.roots

    def solve(self, x1, x2):
        """Value-matching solve in the scaled basis (x/x2)^{q1}, (x/x1)^{q2}.

        Returns (C1, C2, R1, R2) with R_i = v'(x_i) - M'(x_i). Either argument
        may be an array; scalars take a pure-math fast path.
        """
        q1, q2, vp = self.q1, self.q2, self.vp
        if np.ndim(x1) == 0 and np.ndim(x2) == 0:
            M1, dM1 = self.model.M_pair(float(x1))
            M2, dM2 = self.model.M_pair(float(x2))
            lr = math.log(x1 / x2)
            u11, u22 = math.exp(q1 * lr), math.exp(-q2 * lr)
            lx1, lx2 = math.log(x1), math.log(x2)
            exp = math.exp
        else:
            x1, x2 = np.broadcast_arrays(np.asarray(x1, dtype=float), np.asarray(x2, dtype=float))
            M1, dM1 = self.model.M(x1), self.model.M_deriv(x1)
            M2, dM2 = self.model.M(x2), self.model.M_deriv(x2)
            lr = np.log(x1 / x2)
            u11, u22 = np.exp(q1 * lr), np.exp(-q2 * lr)
            lx1, lx2 = np.log(x1), np.log(x2)
            exp = np.exp
        r1 = M1 - vp(x1)
        r2 = M2 - vp(x2)
        det = u11 * u22 - 1.0
        alpha = (r1 * u22 - r2) / det
        beta = (u11 * r2 - r1) / det
        C1 = alpha * exp(-q1 * lx2)
        C2 = beta * exp(-q2 * lx1)
        R1 = (alpha * q1 * u11 + beta * q2) / x1 + vp(x1, 1) - dM1
        R2 = (alpha * q1 + beta * q2 * u22) / x2 + vp(x2, 1) - dM2
        return C1, C2, R1, R2

    def cost(self, x, x1, x2):
        C1, C2, _, _ = self.solve(x1, x2)
        return C1 * x ** self.q1 + C2 * x ** self.q2 + self.vp(x)

    def _pick(self, resid, lo, hi, lo_free, hi_free, cost, vectorized=False):
        """argmin over t in [lo, hi] of a cost with dJ/dt = -resid(t) * positive.

        ``lo_free``/``hi_free`` say whether an end is an admissible answer
        (a corridor end) or just the edge of the search range.
        """
        grid = np.geomspace(lo, hi, SCAN)
        r = resid(grid) if vectorized else np.array([resid(t) for t in grid])
        cands = []
        if lo_free and r[0] <= 0:
            cands.append(lo)
        if hi_free and r[-1] >= 0:
            cands.append(hi)
        for i in np.nonzero((r[:-1] > 0) & (r[1:] <= 0))[0]:
            if r[i + 1] == 0:
                cands.append(grid[i + 1])
                continue
            lo_i, hi_i = grid[i], grid[i + 1]
            f_lo, f_hi = resid(lo_i), resid(hi_i)
            if f_lo * f_hi > 0:  # vector and scalar paths disagree in the last bits: already a root
                cands.append(lo_i if abs(f_lo) < abs(f_hi) else hi_i)
                continue
            cands.append(optimize.brentq(resid, lo_i, hi_i, xtol=XTOL * lo_i, rtol=1e-15))
        if not cands:
            raise NoBracket("pasting residual has no + to - sign change on the search range",
                            {"lo": lo, "hi": hi, "residuals": np.asarray(r).tolist()})
        if len(cands) == 1:
            return float(cands[0])
        costs = [cost(t) for t in cands]
        return float(cands[int(np.argmin(costs))])

    def best_upper(self, x1, lo, x_ref):
        return self._pick(lambda t: self.solve(x1, t)[3], lo, self.c.b, False, True,
                          lambda t: self.cost(x_ref, x1, t), vectorized=True)

    def best_lower(self, x2, hi, x_ref):
        return self._pick(lambda t: self.solve(t, x2)[2], self.c.a, hi, True, False,
                          lambda t: self.cost(x_ref, t, x2), vectorized=True)

    def inner(self, x1, lo2, x_ref):
        """Best x2 in (x_p, b] for a given x1 (x2* always lies above x_p(h))."""
        try:
            return self.best_upper(x1, lo2, x_ref)
        except NoBracket:
            # cost keeps rising in x2: for this (non-optimal) x1 the interval collapses onto x_p
            return lo2


def _search_ranges(h: float, c: Corridor, p: MarketParams):
    """x1 lives in [a, x_p(h)) and x2 in (x_p(h), b]."""
    pa, pb = put_delta(c.a, p), put_delta(c.b, p)
    if h <= pa:
        xp = c.a
    elif h >= pb:
        xp = c.b
    else:
        xp = x_p(h, p)
    gap = 1e-9 * (c.b - c.a)
    return xp, max(xp - gap, c.a), min(xp + gap, c.b)


def _solve_variant(prob: _Problem, variant: str):
    c = prob.c
    xp, hi1, lo2 = _search_ranges(prob.h, c, prob.p)
    x_ref = min(max(xp, c.a + 1e-6 * (c.b - c.a)), c.b - 1e-6 * (c.b - c.a))
    fix1 = variant == "lower-fixed" or hi1 <= c.a
    fix2 = variant == "upper-fixed" or lo2 >= c.b
    if fix1 and fix2:
        return c.a, c.b
    if fix1:
        return c.a, prob.best_upper(c.a, lo2, x_ref)
    if fix2:
        return prob.best_lower(c.b, hi1, x_ref), c.b

    def outer(t):
        return prob.solve(t, prob.inner(t, lo2, x_ref))[2]

    def outer_cost(t):
        return prob.cost(x_ref, t, prob.inner(t, lo2, x_ref))

    x1 = prob._pick(outer, c.a, hi1, True, False, outer_cost)
    return x1, prob.inner(x1, lo2, x_ref)


def verify(sol: BoundarySolution) -> dict:
    """A-posteriori checks; raises VerificationFailed with diagnostics."""
    c, p, h = sol.corridor, sol.params, sol.h
    model = payoff_model(c, p)
    prob = _Problem(h, c, p)
    scale = model.M_scale
    diag = {"h": h, "x1": sol.x1, "x2": sol.x2, "M_scale": scale}
    fails = []
    if not (c.a <= sol.x1 < sol.x2 <= c.b):
        fails.append("ordering a <= x1 < x2 <= b")
    v = value_sum(h, sol.C1, sol.C2, p)
    vm = [abs(v(xi) - model.M(xi)) for xi in (sol.x1, sol.x2)]
    diag["value_match"] = vm
    if max(vm) > 1e-8 * scale:
        fails.append("value matching")
    _, _, R1, R2 = prob.solve(sol.x1, sol.x2)
    paste = []
    for xi, R, interior in ((sol.x1, R1, sol.x1 > c.a), (sol.x2, R2, sol.x2 < c.b)):
        if interior:
            ref = max(abs(model.M_deriv(xi)), 1e-6 * scale / (c.b - c.a))
            paste.append(abs(R) / ref)
    diag["pasting_rel"] = paste
    if paste and max(paste) > 1e-7:
        fails.append("smooth pasting")
    # at a corridor end the cost must not decrease when the threshold moves inwards
    end_tol = 1e-7 * max(abs(model.M_deriv(c.a)), abs(model.M_deriv(c.b)))
    if sol.x1 == c.a and R1 > end_tol:
        fails.append("x1 = a although moving it inwards lowers the cost")
    if sol.x2 == c.b and R2 < -end_tol:
        fails.append("x2 = b although moving it inwards lowers the cost")
    diag["end_residuals"] = (float(R1), float(R2))
    xs = np.linspace(sol.x1, sol.x2, VERIFY_POINTS + 2)[1:-1]
    excess = float(np.max(v(xs) - model.M(xs)))
    diag["max_v_minus_M"] = excess
    if excess > 1e-9 * scale:
        fails.append("v <= M in the continuation set")
    Gs = []
    if sol.x1 > c.a:
        Gs.append(model.G(np.linspace(c.a, sol.x1, VERIFY_POINTS), h))
    if sol.x2 < c.b:
        Gs.append(model.G(np.linspace(sol.x2, c.b, VERIFY_POINTS), h))
    if Gs:
        gscale = float(np.max(np.abs(model.G(np.linspace(c.a, c.b, VERIFY_POINTS), h))))
        gmin = float(min(g.min() for g in Gs))
        diag["min_G_outside"] = gmin
        if gmin < -1e-9 * gscale:
            fails.append("G >= 0 on the stopping set")
    case = sol.case.case
    if case == "A1" and sol.x2 != c.b:
        fails.append("case A1 needs x2 = b")
    if case == "A3" and sol.x1 != c.a:
        fails.append("case A3 needs x1 = a")
    if fails:
        diag["failed"] = fails
        raise VerificationFailed("; ".join(fails), diag)
    return diag


def _local_solve(prob: _Problem, guess: BoundarySolution):
    """Newton-type solve in the same one/two-sided pattern as a nearby solution."""
    c = prob.c
    fix1, fix2 = guess.x1 == c.a, guess.x2 == c.b
    if fix1 and fix2:
        return c.a, c.b
    if fix1 or fix2:
        if fix1:
            f, t0, lo_lim, hi_lim = (lambda t: prob.solve(c.a, t)[3]), guess.x2, c.a, c.b
        else:
            f, t0, lo_lim, hi_lim = (lambda t: prob.solve(t, c.b)[2]), guess.x1, c.a, c.b
        step = 1e-3 * (c.b - c.a)
        for _ in range(12):
            lo, hi = max(t0 - step, lo_lim + 1e-9 * (c.b - c.a)), min(t0 + step, hi_lim - 1e-9 * (c.b - c.a))
            flo, fhi = f(lo), f(hi)
            if flo > 0 > fhi:
                return (c.a, optimize.brentq(f, lo, hi, xtol=XTOL * lo, rtol=1e-15)) if fix1 else \
                    (optimize.brentq(f, lo, hi, xtol=XTOL * lo, rtol=1e-15), c.b)
            step *= 3
        raise NoBracket("local bracket search failed")
    scale = np.array([guess.x1, guess.x2])

    def F(v):
        x1, x2 = v * scale
        if not (c.a <= x1 < x2 <= c.b):
            return [1e3, 1e3]
        _, _, R1, R2 = prob.solve(x1, x2)
        return [R1, R2]

    # convergence is judged by the full verification that follows, not by the solver's own flag
    res = optimize.root(F, np.ones(2), method="hybr", options={"xtol": 1e-12})
    x1, x2 = res.x * scale
    if not (c.a < x1 < x2 < c.b):
        raise NoBracket("local two-sided solve did not converge")
    return x1, x2


def solve_boundaries(h: float, c: Corridor, p: MarketParams, guess: BoundarySolution | None = None
                     ) -> BoundarySolution:
    """Optimal continuation interval (x1*, x2*) and value-function coefficients at holding h.

    ``guess`` (a solution at a nearby h) enables a fast local solve; any
    candidate is accepted only after the full verification, and the global
    nested search runs whenever the local one fails.
    """
    c.check(p)
    case = classify_case(h, c, p)
    h = case.h
    prob = _Problem(h, c, p)
    variants = (["local"] if guess is not None else []) + ["nested"]
    if case.case == "A2":
        variants += ["lower-fixed", "upper-fixed"]
    errors = []
    for variant in variants:
        try:
            x1, x2 = _local_solve(prob, guess) if variant == "local" else _solve_variant(prob, variant)
            C1, C2, _, _ = prob.solve(x1, x2)
            sol = BoundarySolution(h, float(x1), float(x2), float(C1), float(C2), case, c, p)
            diag = verify(sol)
        except (NoBracket, VerificationFailed) as exc:
            errors.append((variant, exc))
            continue
        sol.diagnostics.update(diag, variant=variant)
        return sol
    errors = [e for e in errors if e[0] != "local"] or errors
    variant, exc = errors[0]
    diags = {v: getattr(e, "diagnostics", {}) for v, e in errors}
    raise type(exc)(f"no verified solution at h={h}: {exc}", diags)


def value(x, h: float, sol: BoundarySolution, c: Corridor, p: MarketParams):
    """V(x, h): the ODE solution inside (x1*, x2*) and M elsewhere."""
    model = payoff_model(c, p)
    arr = np.asarray(x, dtype=float)
    Mx = model.M(arr)
    inside = (arr > sol.x1) & (arr < sol.x2)
    v = value_sum(h, sol.C1, sol.C2, p)(np.clip(arr, sol.x1, sol.x2))
    out = np.where(inside, v, Mx)
    return float(out) if np.ndim(x) == 0 else out


def second_derivative_jump(sol: BoundarySolution, which: int) -> tuple[float, float]:
    """(v'' - M'') at a boundary: analytic candidate versus the jump formula from the ODE."""
    p, model = sol.params, payoff_model(sol.corridor, sol.params)
    x0 = sol.x1 if which == 1 else sol.x2
    v2 = value_sum(sol.h, sol.C1, sol.C2, p)(x0, 2)
    M0, dM0 = model.M(x0), model.M_deriv(x0)
    formula = 2.0 / (p.sigma * x0) ** 2 * (-p.r * x0 * dM0 + 2 * p.r * M0 - running_cost(x0, sol.h, p))
    return v2 - model.M_deriv(x0, 2), formula - model.M_deriv(x0, 2)


@dataclass
class BoundaryCurves:
    h: np.ndarray
    x1: np.ndarray
    x2: np.ndarray
    cases: list
    errors: list
    solutions: list

    @property
    def ok(self) -> np.ndarray:
        return np.array([e is None for e in self.errors])

    def _tol(self):
        c = self.solutions[int(np.argmax(self.ok))].corridor
        return 1e-9 * (c.b - c.a), c

    def monotone(self) -> tuple[bool, bool]:
        tol, _ = self._tol()
        ok = self.ok
        return (bool(np.all(np.diff(self.x1[ok]) >= -tol)), bool(np.all(np.diff(self.x2[ok]) >= -tol)))

    def max_jumps(self) -> tuple[float, float]:
        ok = self.ok
        return float(np.max(np.abs(np.diff(self.x1[ok])))), float(np.max(np.abs(np.diff(self.x2[ok]))))

    def transitions(self) -> tuple[float, float]:
        """(h_alpha, h_beta): first h with x1 > a, first h with x2 = b."""
        tol, c = self._tol()
        ok = self.ok
        h, x1, x2 = self.h[ok], self.x1[ok], self.x2[ok]
        above = np.nonzero(x1 > c.a + tol)[0]
        at_b = np.nonzero(x2 >= c.b - tol)[0]
        return (float(h[above[0]]) if len(above) else math.nan, float(h[at_b[0]]) if len(at_b) else math.nan)


def boundary_curves(h_grid, c: Corridor, p: MarketParams, workers: int = 1) -> BoundaryCurves:
    """Solve on every h of the grid; failures are recorded, not raised."""
    h_grid = np.asarray(h_grid, dtype=float)

    def run(block):
        out, prev = [], None
        for h in block:
            try:
                prev = solve_boundaries(float(h), c, p, guess=prev)
                out.append((prev, None))
            except (NumericalError, DomainError) as exc:
                out.append((None, f"{type(exc).__name__}: {exc}"))
        return out

    # contiguous blocks, each warm-started left to right; verified answers do not depend on the split
    blocks = [b for b in np.array_split(h_grid, max(1, workers)) if len(b)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = [r for part in pool.map(run, blocks) for r in part]
    else:
        results = run(h_grid)
    sols = [r[0] for r in results]
    nan = math.nan
    return BoundaryCurves(
        h=h_grid,
        x1=np.array([s.x1 if s else nan for s in sols]),
        x2=np.array([s.x2 if s else nan for s in sols]),
        cases=[s.case.case if s else None for s in sols],
        errors=[r[1] for r in results],
        solutions=sols,
    )
