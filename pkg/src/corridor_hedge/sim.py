"""Monte Carlo engine: GBM paths with Brownian-bridge barrier monitoring.

Paths are generated in fixed-size chunks. Chunk k draws from its own stream
``PCG64(SeedSequence(seed, spawn_key=(k,)))`` and chunks are concatenated in
index order, so per-path results do not depend on how many workers run them.

Every simulation tracks a set of lower levels (below the spot) and upper
levels (above it). Per step the bridge minimum and maximum of log-price are
sampled once; all nested levels are then resolved against the same extremes,
so "hit the inner level before the outer one" is always consistent. A level
crossing is timestamped at the step midpoint and the spot is set to the level.

Running integrals of e^{-2ru} sigma^2 S^2 (1, P'(S), P'(S)^2) du are kept with
the trapezoid rule, so the running cost f(S, h) for any h is a quadratic in h
of three recorded numbers.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from ._kernels import level_paths
from .errors import ConfigError, DomainError
from .halfline import SuperhedgePlan
from .holding import HedgePlan, optimal_initial_holding
from .market import Corridor, MarketParams, put_delta, put_price
from .payoff import payoff_model, x_p

CHUNK = 16384
CENSOR_LIMIT = 1e-4
STRATEGIES = (1, 2, 3, 4, 5)
SWEEPS = {
    "spot": [91.0, 93.0, 95.0, 97.0, 99.0, 101.0, 103.0, 105.0, 107.0, 109.0],
    "sigma": [float(s) for s in np.linspace(0.2, 0.4, 10)],
    "b": [float(b) for b in np.linspace(105.0, 150.0, 10)],
}
CSV_COLUMNS = ["sweep_param", "strategy", "n_paths", "seed", "mean", "variance", "var_se", "censored_count"]


def default_horizon(r: float) -> float:
    """Horizon with e^{-2 r T} = 1e-8."""
    return math.log(1e8) / (2.0 * r)


@dataclass(frozen=True)
class SimConfig:
    params: MarketParams = field(default_factory=MarketParams)
    corridor: Corridor = field(default_factory=lambda: Corridor(90.0, 110.0))
    x: float = 100.0
    n_paths: int = 100_000
    dt: float = 1e-4
    t_max: float | None = None
    seed: int = 42
    bridge: bool = True
    workers: int = 1
    chunk_size: int = CHUNK

    def __post_init__(self):
        if not (isinstance(self.n_paths, (int, np.integer)) and self.n_paths >= 1):
            raise ConfigError(f"n_paths must be a positive integer, got {self.n_paths!r}")
        if not (0 < self.dt <= 1e-2):
            raise ConfigError(f"dt must lie in (0, 1e-2], got {self.dt!r}")
        if not (0 <= self.seed < 2**64):
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.workers < 1 or self.chunk_size < 1:
            raise ConfigError("workers and chunk_size must be positive")
        floor = default_horizon(self.params.r)
        if self.t_max is not None and self.t_max < floor * (1 - 1e-12):
            raise ConfigError(f"t_max={self.t_max} is too short: need e^(-2 r T) <= 1e-8, i.e. T >= {floor:.4g}")
        if not (self.corridor.a <= self.x <= self.corridor.b):
            raise ConfigError(f"spot {self.x} outside the corridor [{self.corridor.a}, {self.corridor.b}]")

    @property
    def horizon(self) -> float:
        return self.t_max if self.t_max is not None else default_horizon(self.params.r)


def chunk_rng(seed: int, chunk: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(chunk,))))


def _chunks(n: int, size: int):
    return [(k, min(size, n - k * size)) for k in range((n + size - 1) // size)]


def _level_chunk(p: MarketParams, x: float, lower: np.ndarray, upper: np.ndarray, n: int, dt: float,
                 horizon: float, bridge: bool, integrals: bool, rng: np.random.Generator):
    """Simulate n paths until the outermost lower or upper level is crossed.

    ``lower`` is sorted descending (outermost last), ``upper`` ascending.
    """
    kL, kU = len(lower), len(upper)
    out = dict(
        tL=np.full((n, kL), np.inf),
        tU=np.full((n, kU), np.inf),
        IL=np.zeros((n, kL, 3) if integrals else (1, kL, 3)),
        IU=np.zeros((n, kU, 3) if integrals else (1, kU, 3)),
        exit_time=np.full(n, np.inf),
        exit_side=np.zeros(n, dtype=np.int8),
        exit_int=np.zeros((n, 3)),
        censored=np.zeros(n, dtype=np.bool_),
    )
    level_paths(rng, n, math.log(x), (p.r - 0.5 * p.sigma**2) * dt, p.sigma * math.sqrt(dt),
                2.0 * p.sigma**2 * dt, dt, int(math.ceil(horizon / dt)), bridge,
                np.log(lower), np.log(upper), integrals, p.r, p.sigma**2, math.log(p.a_hat), 1.0 + p.d,
                out["tL"], out["tU"], out["IL"], out["IU"], out["exit_time"], out["exit_side"],
                out["exit_int"], out["censored"])
    if not integrals:
        out["IL"] = out["IU"] = None
    return out


@dataclass
class LevelHits:
    """First-passage data for a set of levels, in the caller's level order."""

    lower: np.ndarray
    upper: np.ndarray
    t_lower: np.ndarray  # (N, len(lower))
    t_upper: np.ndarray
    I_lower: np.ndarray | None  # (N, len(lower), 3)
    I_upper: np.ndarray | None
    exit_time: np.ndarray
    exit_side: np.ndarray  # -1 lower, +1 upper, 0 censored
    exit_price: np.ndarray
    exit_int: np.ndarray
    censored: np.ndarray

    @property
    def censored_count(self) -> int:
        return int(self.censored.sum())

    def first_exit(self, lower_level: float, upper_level: float):
        """(time, price, integrals) at the first exit from (lower_level, upper_level)."""
        i = int(np.nonzero(self.lower == lower_level)[0][0])
        j = int(np.nonzero(self.upper == upper_level)[0][0])
        tl, tu = self.t_lower[:, i], self.t_upper[:, j]
        low_first = tl <= tu
        t = np.where(low_first, tl, tu)
        price = np.where(low_first, lower_level, upper_level)
        ints = None
        if self.I_lower is not None:
            ints = np.where(low_first[:, None], self.I_lower[:, i], self.I_upper[:, j])
        return t, price, ints


def simulate_levels(cfg: SimConfig, lower=(), upper=(), integrals: bool = False, censor_ok: bool = False) -> LevelHits:
    """Simulate cfg.n_paths paths until they leave the corridor, recording every level crossing."""
    c = cfg.corridor
    lower = np.unique(np.append(np.asarray(lower, dtype=float), c.a))
    upper = np.unique(np.append(np.asarray(upper, dtype=float), c.b))
    if np.any(lower < c.a) or np.any(lower > cfg.x) or np.any(upper > c.b) or np.any(upper < cfg.x):
        raise DomainError("levels must satisfy a <= lower <= x <= upper <= b")
    low_desc = lower[::-1]
    up_asc = upper if math.isfinite(c.b) else upper[:-1]
    up_arr = up_asc if len(up_asc) else np.array([np.inf])

    def run(chunk):
        k, n = chunk
        return _level_chunk(cfg.params, cfg.x, low_desc, up_arr, n, cfg.dt, cfg.horizon, cfg.bridge,
                            integrals, chunk_rng(cfg.seed, k))

    chunks = _chunks(cfg.n_paths, cfg.chunk_size)
    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            parts = list(pool.map(run, chunks))
    else:
        parts = [run(ch) for ch in chunks]
    cat = {key: (np.concatenate([q[key] for q in parts]) if parts[0][key] is not None else None)
           for key in parts[0]}
    side = cat["exit_side"]
    price = np.where(side < 0, c.a, np.where(side > 0, c.b, np.nan))
    hits = LevelHits(lower=lower, upper=up_arr, t_lower=cat["tL"][:, ::-1], t_upper=cat["tU"],
                     I_lower=None if cat["IL"] is None else cat["IL"][:, ::-1], I_upper=cat["IU"],
                     exit_time=cat["exit_time"], exit_side=side, exit_price=price, exit_int=cat["exit_int"],
                     censored=cat["censored"])
    if not censor_ok and hits.censored_count > CENSOR_LIMIT * cfg.n_paths:
        raise ConfigError(f"{hits.censored_count} of {cfg.n_paths} paths hit the horizon cap; raise t_max")
    return hits


def simulate_exit(cfg: SimConfig) -> LevelHits:
    """Exit time and side from the corridor for every path."""
    return simulate_levels(cfg)


# ---------------------------------------------------------------- strategies


@dataclass(frozen=True)
class StrategyPlan:
    """Hold h until the first exit from (lower, upper), then switch to post(S)."""

    h: float
    lower: float
    upper: float
    post: str  # "gamma" or "delta"


@dataclass
class Plans:
    params: MarketParams
    corridor: Corridor
    x: float
    strategies: dict
    hedge: HedgePlan | None = None

    def levels(self):
        lows = sorted({s.lower for s in self.strategies.values()})
        ups = sorted({s.upper for s in self.strategies.values()})
        return lows, ups


def build_plans(params: MarketParams, corridor: Corridor, x: float) -> Plans:
    a, b = corridor.a, corridor.b
    dx = put_delta(x, params)
    hp = optimal_initial_holding(x, corridor, params)
    model = payoff_model(corridor, params)
    pa, pb = put_delta(a, params), put_delta(b, params)
    st = {
        1: StrategyPlan(hp.h_star, hp.x1, hp.x2, "gamma"),
        2: StrategyPlan(dx, 0.5 * (a + x), 0.5 * (b + x), "delta"),
        3: StrategyPlan(dx, x_p(0.5 * (pa + dx), params), x_p(0.5 * (pb + dx), params), "delta"),
        4: StrategyPlan(model.Gamma(x), a, b, "gamma"),
        5: StrategyPlan(dx, a, b, "delta"),
    }
    return Plans(params, corridor, x, st, hp)


def tracking_errors(plan: StrategyPlan, hits: LevelHits, plans: Plans) -> np.ndarray:
    """Discounted portfolio minus discounted option price at the corridor exit (NaN when censored)."""
    p, c, x = plans.params, plans.corridor, plans.x
    r = p.r
    tau, s_tau, _ = hits.first_exit(plan.lower, plan.upper)
    tI, sI = hits.exit_time, hits.exit_price
    ok = ~hits.censored
    D_tau = np.where(ok, np.exp(-r * tau) * s_tau, np.nan)
    D_I = np.where(ok, np.exp(-r * tI) * sI, np.nan)
    s_safe = np.where(ok, s_tau, x)
    if plan.post == "gamma":
        theta = payoff_model(c, p).Gamma(s_safe)
    else:
        theta = put_delta(s_safe, p)
    P_I = np.where(ok, put_price(np.where(ok, sI, x), p), np.nan)
    return put_price(x, p) + plan.h * (D_tau - x) + theta * (D_I - D_tau) - np.exp(-r * tI) * P_I


def run_strategy(sid: int, hits: LevelHits, plans: Plans) -> np.ndarray:
    if sid not in plans.strategies:
        raise DomainError(f"unknown strategy id {sid!r}")
    return tracking_errors(plans.strategies[sid], hits, plans)


@dataclass(frozen=True)
class StrategyStats:
    strategy: object
    mean: float
    variance: float
    var_se: float
    mean_se: float
    n_paths: int
    seed: int
    censored: int = 0


def variance_se(e: np.ndarray) -> tuple[float, float]:
    """Sample variance and its standard error from the fourth central moment."""
    n = len(e)
    m = e.mean()
    d = e - m
    var = float(d @ d / (n - 1))
    mu4 = float(np.mean(d**4))
    s2 = float(d @ d / n)
    se2 = (mu4 - (n - 3) / (n - 1) * s2 * s2) / n
    return var, math.sqrt(max(se2, 0.0))


def summarize(sid, errors: np.ndarray, seed: int, censored: int) -> StrategyStats:
    e = errors[np.isfinite(errors)]
    var, se = variance_se(e)
    return StrategyStats(sid, float(e.mean()), var, se, math.sqrt(var / len(e)), len(e), seed, censored)


def paired_variance_gap(e1: np.ndarray, e2: np.ndarray) -> tuple[float, float]:
    """var(e2) - var(e1) and its standard error from the paired samples."""
    ok = np.isfinite(e1) & np.isfinite(e2)
    a, b = e1[ok], e2[ok]
    n = len(a)
    u = (a - a.mean()) ** 2
    v = (b - b.mean()) ** 2
    diff = (v - u) * n / (n - 1)
    return float(diff.mean()), float(diff.std(ddof=1) / math.sqrt(n))


def simulate_strategies(cfg: SimConfig, plans: Plans | None = None):
    """Tracking errors of all five strategies on one shared set of paths."""
    if plans is None:
        plans = build_plans(cfg.params, cfg.corridor, cfg.x)
    lows, ups = plans.levels()
    hits = simulate_levels(cfg, lows, ups)
    return {sid: run_strategy(sid, hits, plans) for sid in STRATEGIES}, hits, plans


def estimate(sid: int, cfg: SimConfig, plans: Plans | None = None) -> StrategyStats:
    errors, hits, _ = simulate_strategies(cfg, plans)
    return summarize(sid, errors[sid], cfg.seed, hits.censored_count)


@dataclass
class SweepRow:
    value: float
    stats: dict  # strategy id -> StrategyStats
    errors: dict = field(repr=False, default_factory=dict)
    failure: str | None = None


def sweep_config(base: SimConfig, sweep: str, value: float) -> SimConfig:
    p, c = base.params, base.corridor
    if sweep == "spot":
        return replace(base, x=float(value))
    if sweep == "sigma":
        return replace(base, params=MarketParams(p.r, float(value), p.K))
    if sweep == "b":
        return replace(base, corridor=Corridor(c.a, float(value)))
    raise DomainError(f"unknown sweep {sweep!r}; choose from {sorted(SWEEPS)}")


def compare(sweep: str, cfg: SimConfig, grid=None, keep_errors: bool = False) -> list[SweepRow]:
    """One row per grid value with statistics for the five strategies (same seed in every row)."""
    grid = SWEEPS[sweep] if grid is None else grid
    rows = []
    for value in grid:
        row_cfg = sweep_config(cfg, sweep, value)
        errs, hits, _ = simulate_strategies(row_cfg)
        stats = {sid: summarize(sid, errs[sid], cfg.seed, hits.censored_count) for sid in STRATEGIES}
        rows.append(SweepRow(float(value), stats, errs if keep_errors else {}))
    return rows


def fmt(v) -> str:
    """17 significant digits: round-trips every double."""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def rows_to_csv(rows: list[SweepRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for row in rows:
        for sid in STRATEGIES:
            s = row.stats[sid]
            w.writerow([fmt(row.value), sid, s.n_paths, s.seed, fmt(s.mean), fmt(s.variance), fmt(s.var_se),
                        s.censored])
    return buf.getvalue()


# ---------------------------------------------------------------- oracles


@dataclass(frozen=True)
class MCEstimate:
    mean: float
    se: float
    n: int


def _mc(samples: np.ndarray) -> MCEstimate:
    s = samples[np.isfinite(samples)]
    return MCEstimate(float(s.mean()), float(s.std(ddof=1) / math.sqrt(len(s))), len(s))


def stopping_costs(hits: LevelHits, h: float, lower: float, upper: float, params: MarketParams,
                   corridor: Corridor) -> np.ndarray:
    """Per-path int_0^tau e^{-2ru} f(S_u, h) du + e^{-2r tau} M(S_tau) for the rule 'leave (lower, upper)'."""
    tau, s_tau, I = hits.first_exit(lower, upper)
    M = payoff_model(corridor, params).M(s_tau)
    return h * h * I[:, 0] - 2 * h * I[:, 1] + I[:, 2] + np.exp(-2 * params.r * tau) * M


def mc_stopping_cost(x: float, h: float, rule, cfg: SimConfig) -> MCEstimate:
    """Monte Carlo cost of a threshold rule; rule=None stops immediately."""
    lower, upper = rule if rule is not None else (x, x)
    if not lower < x < upper:
        # already in the stopping region: tau = 0
        m = payoff_model(cfg.corridor, cfg.params).M(x)
        return MCEstimate(m, 0.0, cfg.n_paths)
    cfg = replace(cfg, x=x)
    hits = simulate_levels(cfg, [lower], [upper], integrals=True)
    return _mc(stopping_costs(hits, h, lower, upper, cfg.params, cfg.corridor))


def mc_gamma(cfg: SimConfig) -> tuple[MCEstimate, MCEstimate, MCEstimate]:
    """Monte Carlo of the three gamma integrals up to the corridor exit."""
    hits = simulate_levels(cfg, integrals=True)
    return tuple(_mc(hits.exit_int[:, i]) for i in range(3))


def threshold_grid_costs(hits: LevelHits, h: float, params: MarketParams, corridor: Corridor, reference=None):
    """Mean cost and SE for every recorded (lower, upper) pair.

    With ``reference`` = (lower, upper) the statistics are of the paired
    difference cost(pair) - cost(reference) on the same paths.
    """
    M = payoff_model(corridor, params).M
    disc = 2.0 * params.r

    def level_costs(t, I, levels):
        # cost per path if the rule stops at each level: running integral plus discounted payoff
        run = h * h * I[..., 0] - 2 * h * I[..., 1] + I[..., 2]
        return run + np.exp(-disc * t) * M(np.asarray(levels))[None, :]

    cL = level_costs(hits.t_lower, hits.I_lower, hits.lower)
    cU = level_costs(hits.t_upper, hits.I_upper, hits.upper)
    base = 0.0
    if reference is not None:
        base = stopping_costs(hits, h, reference[0], reference[1], params, corridor)
    nl, nu = len(hits.lower), len(hits.upper)
    n = hits.t_lower.shape[0]
    mean = np.empty((nl, nu))
    se = np.empty((nl, nu))
    for i in range(nl):
        tl = hits.t_lower[:, i]
        for j in range(nu):
            c = np.where(tl <= hits.t_upper[:, j], cL[:, i], cU[:, j]) - base
            mean[i, j] = c.mean()
            se[i, j] = c.std(ddof=1) / math.sqrt(n)
    return mean, se


# ---------------------------------------------------------------- half-line


def mc_halfline_payoff(x: float, a: float, params: MarketParams, n_paths: int, dt: float, horizon: float,
                       seed: int) -> MCEstimate:
    """Truncated Monte Carlo of int_0^{tau_a ^ T} e^{-2ru} sigma^2 S^2 P'(S)^2 du."""
    cfg = SimConfig(params, Corridor(a, math.inf), x, n_paths, dt, None, seed)
    return _mc(_halfline_levels(cfg, horizon).exit_int[:, 2])


def _halfline_levels(cfg: SimConfig, horizon: float) -> LevelHits:
    c = cfg.corridor

    def run(chunk):
        k, n = chunk
        return _level_chunk(cfg.params, cfg.x, np.array([c.a]), np.array([np.inf]), n, cfg.dt, horizon, cfg.bridge,
                            True, chunk_rng(cfg.seed, k))

    parts = [run(ch) for ch in _chunks(cfg.n_paths, cfg.chunk_size)]
    cat = {key: np.concatenate([q[key] for q in parts]) for key in ("exit_time", "exit_side", "exit_int", "censored")}
    return LevelHits(np.array([c.a]), np.array([np.inf]), None, None, None, None, cat["exit_time"],
                     cat["exit_side"], np.where(cat["exit_side"] < 0, c.a, np.nan), cat["exit_int"], cat["censored"])


@dataclass(frozen=True)
class SuperhedgeReport:
    n_paths: int
    horizon: float
    freq_switched: float  # fraction of paths with tau* <= T
    freq_hit_a: float  # fraction of paths with tau_a <= T
    chain_breaks: int  # paths reaching a without switching first (tau* < tau_a fails)
    violations: int  # switched paths whose discounted portfolio ends below the discounted price
    mean_error: float  # over switched paths, at min(tau_a, T)
    var_error: float
    min_error: float
    max_error: float
    truncated_mean_error: float  # paths still unswitched at T (not covered by the superhedge argument)


def simulate_superhedge(plan: SuperhedgePlan, n_paths: int = 10_000, dt: float = 1e-2, horizon: float = 100.0,
                        seed: int = 42, tol: float = 1e-9) -> SuperhedgeReport:
    """Discounted error e^{-r t}(portfolio - P(S_t)) at t = min(tau_a, T) for the superhedge plan.

    The switch time tau* is the first time the discounted price e^{-rt}S_t reaches s_hat.
    Both bridge minima in a step (of log S and of the discounted log-price) reuse one
    uniform, which couples them the way the single underlying path does.
    """
    p = plan.params
    errs, switched_all, hit_all, breaks = [], [], [], 0
    mu = (p.r - 0.5 * p.sigma**2) * dt
    sd = p.sigma * math.sqrt(dt)
    var2 = 2.0 * p.sigma**2 * dt
    ln_a, ln_s = math.log(plan.a), math.log(plan.s_hat)
    n_steps = int(math.ceil(horizon / dt))
    for k, n in _chunks(n_paths, CHUNK):
        rng = chunk_rng(seed, k)
        y = np.full(n, math.log(plan.x))
        alive = np.ones(n, dtype=bool)
        switched = np.zeros(n, dtype=bool)
        t_end = np.full(n, horizon)
        y_end = np.full(n, np.nan)
        hit_a = np.zeros(n, dtype=bool)
        for step in range(n_steps):
            t0 = step * dt
            z = rng.standard_normal(n)
            lu = np.log(rng.random(n))
            y1 = y + mu + sd * z
            mn = 0.5 * (y + y1 - np.sqrt((y1 - y) ** 2 - var2 * lu))
            zd0, zd1 = y - p.r * t0, y1 - p.r * (t0 + dt)
            mnd = 0.5 * (zd0 + zd1 - np.sqrt((zd1 - zd0) ** 2 - var2 * lu))
            switched |= alive & (mnd <= ln_s)
            hit = alive & (mn <= ln_a)
            breaks += int(np.sum(hit & ~switched))
            t_end[hit] = t0 + 0.5 * dt
            y_end[hit] = ln_a
            hit_a |= hit
            alive &= ~hit
            y = y1
            if not alive.any():
                break
        y_end[alive] = y[alive]
        S = np.exp(y_end)
        disc = np.exp(-p.r * t_end)
        # portfolio: before the switch m0 e^{rt} + h S; after it h1 S
        port_disc = np.where(switched, plan.h1 * S * disc, plan.m0 + plan.h * S * disc)
        errs.append(port_disc - disc * put_price(S, p))
        switched_all.append(switched)
        hit_all.append(hit_a)
    e = np.concatenate(errs)
    sw = np.concatenate(switched_all)
    ha = np.concatenate(hit_all)
    scale = put_price(plan.x, p)
    es = e[sw]
    nan = math.nan
    return SuperhedgeReport(n_paths, horizon, float(sw.mean()), float(ha.mean()), breaks,
                            int(np.sum(es < -tol * scale)),
                            float(es.mean()) if len(es) else nan, float(es.var(ddof=1)) if len(es) > 1 else nan,
                            float(es.min()) if len(es) else nan, float(es.max()) if len(es) else nan,
                            float(e[~sw].mean()) if (~sw).any() else nan)
