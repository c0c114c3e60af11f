import csv
import io
import math
from dataclasses import replace

import numpy as np
import pytest

from corridor_hedge.boundary import solve_boundaries
from corridor_hedge.errors import ConfigError, DomainError
from corridor_hedge.market import Corridor, fundamental_pair, put_delta
from corridor_hedge.payoff import payoff_model
from corridor_hedge.sim import (STRATEGIES, Plans, SimConfig, StrategyPlan, build_plans, compare, mc_stopping_cost, paired_variance_gap,
                                rows_to_csv, run_strategy, simulate_exit, simulate_levels, simulate_strategies,
                                summarize, variance_se)


@pytest.fixture(scope="module")
def base():
    return SimConfig(n_paths=100_000, seed=42)


@pytest.fixture(scope="module")
def shared(base):
    return simulate_strategies(base)


@pytest.mark.parametrize("bad", [dict(n_paths=0), dict(dt=0.02), dict(dt=0.0), dict(t_max=10.0), dict(x=120.0),
                                 dict(seed=-1)])
def test_config_validation(bad):
    with pytest.raises(ConfigError):
        SimConfig(**bad)


def test_start_on_boundary_exits_immediately(base):
    hits = simulate_exit(replace(base, x=90.0, n_paths=10))
    assert np.all(hits.exit_time == 0.0) and np.all(hits.exit_side == -1)


def test_exit_probability_matches_scale_function(base, shared):
    _, hits, _ = shared
    p, c = base.params, base.corridor
    s = lambda z: z ** (1 - p.d) / (1 - p.d)
    exact = (s(100.0) - s(c.a)) / (s(c.b) - s(c.a))
    up = hits.exit_side > 0
    se = math.sqrt(exact * (1 - exact) / base.n_paths)
    assert abs(up.mean() - exact) <= 3 * se


def test_discounted_lower_exit_matches_fundamental_solution(base, shared):
    _, hits, _ = shared
    p, c = base.params, base.corridor
    fp = fundamental_pair(c, p)
    exact = fp.phi(100.0) / fp.phi(c.a)
    sample = np.exp(-2 * p.r * hits.exit_time) * (hits.exit_side < 0)
    assert abs(sample.mean() - exact) <= 3 * sample.std(ddof=1) / math.sqrt(len(sample))


def test_all_strategies_have_zero_mean(shared):
    errors, _, _ = shared
    for sid in STRATEGIES:
        st = summarize(sid, errors[sid], 42, 0)
        assert abs(st.mean) <= 3 * st.mean_se


def test_simulated_variances_match_closed_forms(base, shared):
    errors, _, plans = shared
    m = payoff_model(base.corridor, base.params)
    exact = {1: plans.hedge.value, 4: m.M(100.0), 5: m.quadratic_cost(100.0, put_delta(100.0, base.params))}
    for sid, v in exact.items():
        st = summarize(sid, errors[sid], 42, 0)
        assert abs(st.variance - v) <= 3 * st.var_se


def test_static_gamma_hedge_beats_static_delta_hedge(shared):
    errors, _, _ = shared
    gap, se = paired_variance_gap(errors[4], errors[5])
    assert gap >= -3 * se


def test_delta_hedge_at_exercise_boundary_is_exact(params):
    c = Corridor(40.0, 150.0)
    cfg = SimConfig(params, c, 40.0, n_paths=100)
    plans = Plans(params, c, 40.0, {5: StrategyPlan(put_delta(40.0, params), c.a, c.b, "delta")})
    hits = simulate_levels(cfg)
    assert np.all(hits.exit_time == 0.0)
    assert np.all(run_strategy(5, hits, plans) == 0.0)


def test_unknown_strategy_rejected(shared):
    _, hits, plans = shared
    with pytest.raises(DomainError):
        run_strategy(7, hits, plans)


def test_variance_standard_error_for_gaussian_samples():
    rng = np.random.default_rng(0)
    e = rng.standard_normal(200_000) * 2.0
    var, se = variance_se(e)
    assert var == pytest.approx(4.0, rel=0.02)
    assert se == pytest.approx(4.0 * math.sqrt(2 / len(e)), rel=0.05)


def test_stopping_cost_oracle_orders_rules(params, wide):
    cfg = SimConfig(params, Corridor(90.0, 110.0), 100.0, n_paths=40_000, seed=7)
    c, h = cfg.corridor, -0.22
    m = payoff_model(c, params)
    now = mc_stopping_cost(100.0, h, None, cfg)
    assert now.mean == m.M(100.0) and now.se == 0.0
    assert mc_stopping_cost(100.0, h, (101.0, 109.0), cfg).mean == m.M(100.0)
    never = mc_stopping_cost(100.0, h, (c.a, c.b), cfg)
    assert abs(never.mean - m.quadratic_cost(100.0, h)) <= 3 * never.se
    sol = solve_boundaries(h, c, params)
    best = mc_stopping_cost(100.0, h, (sol.x1, sol.x2), cfg)
    assert abs(best.mean - sol.value(100.0)) <= 3 * best.se
    assert best.mean <= now.mean + 3 * best.se and best.mean <= never.mean + 3 * never.se


def test_levels_must_bracket_spot(base):
    with pytest.raises(DomainError):
        simulate_levels(replace(base, n_paths=10), lower=[101.0])


def test_per_path_results_independent_of_workers(base):
    cfg = replace(base, n_paths=5000, chunk_size=1024)
    one = simulate_levels(cfg, [95.0], [104.0])
    three = simulate_levels(replace(cfg, workers=3), [95.0], [104.0])
    assert np.array_equal(one.exit_time, three.exit_time)
    assert np.array_equal(one.t_lower, three.t_lower)


def test_csv_round_trips_exactly(base):
    rows = compare("spot", replace(base, n_paths=2000), grid=[95.0, 101.0])
    text = rows_to_csv(rows)
    parsed = list(csv.DictReader(io.StringIO(text)))
    assert len(parsed) == 10
    for rec in parsed:
        st = rows[0 if float(rec["sweep_param"]) == 95.0 else 1].stats[int(rec["strategy"])]
        assert float(rec["variance"]) == st.variance and float(rec["mean"]) == st.mean


@pytest.mark.slow
def test_monitoring_bias_below_two_percent(base, shared):
    errors, _, plans = shared
    fine, _, _ = simulate_strategies(replace(base, dt=base.dt / 4), plans)
    for sid in (1, 4):
        coarse_var = summarize(sid, errors[sid], 42, 0).variance
        fine_var = summarize(sid, fine[sid], 42, 0).variance
        assert abs(coarse_var - fine_var) < 0.02 * fine_var
