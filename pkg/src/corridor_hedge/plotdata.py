"""(x, y) series behind each figure, written as CSV files. Rendering is left to the user."""

from __future__ import annotations

import csv
import math
from pathlib import Path

import numpy as np

from .boundary import boundary_curves
from .errors import NumericalError
from .holding import cached_solution, optimal_initial_holding
from .market import Corridor, MarketParams, put_delta, put_price
from .payoff import payoff_model
from .sim import build_plans, chunk_rng, fmt

FIG_PARAMS = MarketParams(0.03, 0.30, 100.0)
FIG_CORRIDOR = Corridor(40.0, 150.0)
PATH_CORRIDOR = Corridor(90.0, 130.0)
G_HOLDINGS = (-0.6, -0.3, -0.15)  # one holding per shape of the sign function
V_HOLDINGS = G_HOLDINGS


def write_series(path: Path, header, columns):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in zip(*columns):
            w.writerow([v if isinstance(v, str) else fmt(v) for v in row])
    return path


def _x_grid(c: Corridor, n: int) -> np.ndarray:
    return np.linspace(c.a, c.b, n)


def fig_gamma_delta(out: Path, p=FIG_PARAMS, c=FIG_CORRIDOR, n: int = 401):
    xs = _x_grid(c, n)
    m = payoff_model(c, p)
    return [write_series(out / "p1.0_gamma_delta.csv", ["x", "Gamma", "P_prime"], [xs, m.Gamma(xs), put_delta(xs, p)])]


def fig_sign_function(out: Path, p=FIG_PARAMS, c=FIG_CORRIDOR, holdings=G_HOLDINGS, n: int = 401):
    xs = _x_grid(c, n)
    m = payoff_model(c, p)
    return [write_series(out / f"p2.0_G_h{h:+.4f}.csv", ["x", "G"], [xs, m.G(xs, h)]) for h in holdings]


def fig_value_payoff(out: Path, p=FIG_PARAMS, c=FIG_CORRIDOR, holdings=V_HOLDINGS, n: int = 401):
    xs = _x_grid(c, n)
    m = payoff_model(c, p)
    files = []
    for h in holdings:
        sol = cached_solution(h, c, p)
        files.append(write_series(out / f"p3.0_V_M_h{h:+.4f}.csv", ["x", "V", "M"], [xs, sol.value(xs), m.M(xs)]))
    return files


def fig_boundaries(out: Path, p=FIG_PARAMS, c=FIG_CORRIDOR, n: int = 200, workers: int = 1):
    hs = np.linspace(put_delta(c.a, p), put_delta(c.b, p), n)
    bc = boundary_curves(hs, c, p, workers=workers)
    return [write_series(out / "p4.0_boundaries.csv", ["h", "x1", "x2", "case"],
                         [bc.h, bc.x1, bc.x2, [str(k) for k in bc.cases]])]


def fig_value_surface(out: Path, p=FIG_PARAMS, c=FIG_CORRIDOR, nx: int = 41, nh: int = 41):
    """V on an (x, h) grid plus h*(x), Gamma(x) and P'(x) along x."""
    xs = _x_grid(c, nx + 2)[1:-1]
    hs = np.linspace(put_delta(c.a, p), put_delta(c.b, p), nh)
    X, H, V = [], [], []
    for h in hs:
        sol = cached_solution(float(h), c, p)
        X.extend(xs)
        H.extend([h] * len(xs))
        V.extend(sol.value(xs))
    files = [write_series(out / "p6.0_value_surface.csv", ["x", "h", "V"], [X, H, V])]
    hstar = []
    for x in xs:
        try:
            hstar.append(optimal_initial_holding(float(x), c, p).h_star)
        except NumericalError:
            hstar.append(math.nan)
    m = payoff_model(c, p)
    files.append(write_series(out / "p6.0_holdings.csv", ["x", "h_star", "Gamma", "P_prime"],
                              [xs, hstar, m.Gamma(xs), put_delta(xs, p)]))
    return files


def sample_path(p: MarketParams, c: Corridor, x: float, dt: float = 1e-3, seed: int = 42, max_steps: int = 10**7):
    """One GBM path on a fixed grid, stopped at the first grid time outside the corridor."""
    rng = chunk_rng(seed, 0)
    mu, sd = (p.r - 0.5 * p.sigma**2) * dt, p.sigma * math.sqrt(dt)
    ys = [math.log(x)]
    la, lb = math.log(c.a), math.log(c.b)
    while la < ys[-1] < lb and len(ys) < max_steps:
        ys.append(ys[-1] + mu + sd * rng.standard_normal())
    s = np.exp(np.array(ys))
    s[0] = x
    s[-1] = min(max(s[-1], c.a), c.b)
    return dt * np.arange(len(s)), s


def fig_sample_path(out: Path, p=FIG_PARAMS, c=PATH_CORRIDOR, x: float = 100.0, seed: int = 42):
    """Stock path with the Strategy-1 holding and its rebalance thresholds."""
    plans = build_plans(p, c, x)
    st = plans.strategies[1]
    t, s = sample_path(p, c, x, seed=seed)
    outside = (s <= st.lower) | (s >= st.upper)
    k = int(np.argmax(outside)) if outside.any() else len(s)
    m = payoff_model(c, p)
    holding = np.full(len(s), st.h)
    if k < len(s):
        holding[k:] = m.Gamma(min(max(s[k], c.a), c.b))
    n = len(s)
    return [write_series(out / "p5.0_sample_path.csv",
                         ["t", "S", "holding", "delta", "x1", "x2", "option"],
                         [t, s, holding, put_delta(s, p), [st.lower] * n, [st.upper] * n, put_price(s, p)])]


def emit_all(out, workers: int = 1):
    out = Path(out) / "plot_data"
    files = []
    files += fig_gamma_delta(out)
    files += fig_sign_function(out)
    files += fig_value_payoff(out)
    files += fig_boundaries(out, workers=workers)
    files += fig_sample_path(out)
    files += fig_value_surface(out)
    return files
