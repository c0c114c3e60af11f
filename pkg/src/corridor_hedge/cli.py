"""Command-line front end.

Every option can also come from a flat JSON file (``--config``) whose keys are
the flag names in snake_case; flags given on the command line win. When
``--out`` is set the resolved configuration is written next to the outputs as
``config.json`` so that a run can be repeated exactly.

Exit codes: 0 success, 2 invalid input, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from .boundary import boundary_curves
from .errors import ConfigError, DivergentIntegral, DomainError, NumericalError
from .halfline import solve_boundary_infinite, superhedge_plan
from .holding import optimal_initial_holding
from .market import Corridor, MarketParams, put_delta, put_price
from .payoff import gamma_limits, payoff_model
from .sim import SWEEPS, SimConfig, compare, fmt, rows_to_csv, simulate_superhedge

EXIT_USAGE = 2
EXIT_NUMERICAL = 3

# par:1 is the simulation default; the solver commands default to the figure setting
SIM_DEFAULTS = dict(r=0.03, sigma=0.30, strike=100.0, spot=100.0, a=90.0, b=110.0)
FIG_DEFAULTS = dict(r=0.03, sigma=0.30, strike=100.0, a=40.0, b=150.0)
COMMON_DEFAULTS = dict(seed=42, threads=1, emit_plot_data=False)
COMMAND_DEFAULTS = {
    "price": {},
    "boundaries": dict(FIG_DEFAULTS),
    "curves": dict(FIG_DEFAULTS, h_grid=200),
    "optimize": dict(FIG_DEFAULTS),
    "simulate": dict(SIM_DEFAULTS, sweep="spot", n=100_000, dt=1e-4, bridge=True),
    "halfline": dict(r=0.03, sigma=0.30, strike=100.0, a=40.0, spot=100.0, mode="zero-mean", n=10_000,
                     dt=1e-2, horizon=100.0),
}


class UsageError(Exception):
    pass


def _add_market(p: argparse.ArgumentParser, corridor=True, spot=True):
    p.add_argument("--r", type=float, help="short rate")
    p.add_argument("--sigma", type=float, help="volatility")
    p.add_argument("--strike", type=float, help="strike K")
    if corridor:
        p.add_argument("--a", type=float, help="lower corridor end")
        p.add_argument("--b", type=float, help="upper corridor end")
    if spot:
        p.add_argument("--spot", type=float, help="current stock price")


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    # subcommands repeat the global flags; SUPPRESS keeps them from resetting values given earlier
    kw = dict(default=argparse.SUPPRESS) if suppress else {}
    glob = argparse.ArgumentParser(add_help=False)
    glob.add_argument("--config", type=Path, help="flat JSON file with defaults for any flag", **kw)
    glob.add_argument("--out", type=Path, help="directory for CSV outputs and the resolved config", **kw)
    glob.add_argument("--seed", type=int, help="base seed (unsigned 64-bit)", **kw)
    glob.add_argument("--threads", type=int, help="worker threads", **kw)
    glob.add_argument("--emit-plot-data", action="store_const", const=True,
                      help="also write the data series behind every figure into OUT/plot_data", **kw)
    return glob


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="corridor-hedge", description=__doc__.splitlines()[0],
                                     parents=[_global_flags(False)])
    glob = _global_flags(True)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("price", parents=[glob], help="perpetual put price, Delta and model constants")
    _add_market(p, corridor=False)

    for name, helptext in (("boundaries", "optimal rebalance thresholds for given holdings"),
                           ("curves", "boundary curves over the whole holding range with a property summary")):
        p = sub.add_parser(name, parents=[glob], help=helptext)
        _add_market(p, spot=False)
        p.add_argument("--h", type=float, action="append", help="initial holding (repeatable)")
        p.add_argument("--h-grid", type=int, help="number of holdings evenly spread over [P'(a), P'(b)]")

    p = sub.add_parser("optimize", parents=[glob], help="optimal initial holding h*")
    _add_market(p)
    p.add_argument("--x-grid", type=int, help="number of interior spots; emits the h*(x) curve as CSV")

    p = sub.add_parser("simulate", parents=[glob], help="Monte Carlo comparison of the five strategies")
    _add_market(p)
    p.add_argument("--sweep", choices=sorted(SWEEPS))
    p.add_argument("--n", type=int, help="number of paths")
    p.add_argument("--dt", type=float, help="time step in years")
    p.add_argument("--t-max", type=float, help="horizon cap in years")
    p.add_argument("--bridge", action=argparse.BooleanOptionalAction, default=None,
                   help="Brownian-bridge barrier correction")

    p = sub.add_parser("halfline", parents=[glob], help="half-line variants with no upper corridor end")
    _add_market(p, corridor=False)
    p.add_argument("--a", type=float, help="lower threshold")
    p.add_argument("--mode", choices=["zero-mean", "superhedge"])
    p.add_argument("--h", type=float, help="initial holding (zero-mean mode)")
    p.add_argument("--n", type=int, help="simulated paths (superhedge mode)")
    p.add_argument("--dt", type=float, help="time step in years (superhedge mode)")
    p.add_argument("--horizon", type=float, help="simulation horizon in years (superhedge mode)")
    return parser


def resolve(args: argparse.Namespace) -> dict:
    """Command defaults, then the config file, then explicit flags."""
    cfg = dict(COMMON_DEFAULTS)
    cfg.update(COMMAND_DEFAULTS[args.command])
    if args.config is not None:
        try:
            data = json.loads(args.config.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(data, dict):
            raise UsageError("config file must hold a flat JSON object")
        known = set(vars(args)) - {"config", "command"}
        unknown = sorted(set(data) - known - {"command"})
        if unknown:
            raise UsageError(f"unknown config keys for '{args.command}': {', '.join(unknown)}")
        cfg.update({k: v for k, v in data.items() if k != "command"})
    for key, val in vars(args).items():
        if key not in ("config", "command", "out") and val is not None:
            cfg[key] = val
    cfg["command"] = args.command
    if args.out is not None:
        cfg["out"] = str(args.out)
    elif "out" in cfg and cfg["out"] is not None:
        cfg["out"] = str(cfg["out"])
    return cfg


def _need(cfg: dict, *keys):
    missing = [k for k in keys if cfg.get(k) is None]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + k.replace("_", "-") for k in missing))


def _params(cfg) -> MarketParams:
    _need(cfg, "r", "sigma", "strike")
    return MarketParams(float(cfg["r"]), float(cfg["sigma"]), float(cfg["strike"]))


def _corridor(cfg, p: MarketParams) -> Corridor:
    _need(cfg, "a", "b")
    return Corridor(float(cfg["a"]), float(cfg["b"])).check(p)


def _emit(cfg: dict, name: str, text: str, stdout):
    if cfg.get("out"):
        out = Path(cfg["out"])
        out.mkdir(parents=True, exist_ok=True)
        (out / name).write_text(text)
        print(f"wrote {out / name}", file=stdout)
    else:
        stdout.write(text)


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([v if isinstance(v, str) else fmt(v) for v in row])
    return buf.getvalue()


def cmd_price(cfg, stdout):
    _need(cfg, "spot")
    p = _params(cfg)
    x = float(cfg["spot"])
    if not x > 0:
        raise DomainError(f"spot must be positive, got {x}")
    for key, val in (("P", put_price(x, p)), ("P_prime", put_delta(x, p)), ("a_hat", p.a_hat), ("d", p.d),
                     ("q1", p.q1), ("q2", p.q2)):
        print(f"{key}={fmt(val)}", file=stdout)
    return 0


def _h_values(cfg, c, p):
    pa, pb = put_delta(c.a, p), put_delta(c.b, p)
    if cfg.get("h"):
        hs = cfg["h"] if isinstance(cfg["h"], list) else [cfg["h"]]
        hs = [float(h) for h in hs]
        bad = [h for h in hs if not (pa - 1e-12 <= h <= pb + 1e-12)]
        if bad:
            raise DomainError(f"holding(s) {bad} outside [P'(a), P'(b)] = [{pa:.6g}, {pb:.6g}]")
        return np.array(hs)
    if cfg.get("h_grid"):
        n = int(cfg["h_grid"])
        if n < 2:
            raise UsageError("--h-grid needs at least 2 points")
        return np.linspace(pa, pb, n)
    raise UsageError("give --h or --h-grid")


def cmd_boundaries(cfg, stdout, summary_only=False):
    p = _params(cfg)
    c = _corridor(cfg, p)
    hs = _h_values(cfg, c, p)
    bc = boundary_curves(hs, c, p, workers=int(cfg["threads"]))
    rows = []
    for h, sol, err in zip(hs, bc.solutions, bc.errors):
        if sol is None:
            rows.append([h, "", math.nan, math.nan, math.nan, math.nan, err])
        else:
            rows.append([h, sol.case.case, sol.x1, sol.x2, sol.C1, sol.C2, ""])
    name = "curves.csv" if summary_only else "boundaries.csv"
    _emit(cfg, name, _csv(["h", "case", "x1", "x2", "C1", "C2", "error"], rows), stdout)
    ok = bc.ok
    if not ok.any():
        print("every row failed", file=sys.stderr)
        return EXIT_NUMERICAL
    mono = bc.monotone() if ok.sum() > 1 else (True, True)
    print(f"# rows={len(hs)} failed={int((~ok).sum())} x1_non_decreasing={mono[0]} x2_non_decreasing={mono[1]}",
          file=sys.stderr)
    if summary_only and ok.sum() > 1:
        ga, gb = gamma_limits(c, p)
        h_alpha, h_beta = bc.transitions()
        j1, j2 = bc.max_jumps()
        print(f"# Gamma(a+)={fmt(ga)} h_alpha={fmt(h_alpha)} Gamma(b-)={fmt(gb)} h_beta={fmt(h_beta)} "
              f"max_jump_x1={fmt(j1)} max_jump_x2={fmt(j2)}", file=sys.stderr)
    return 0


def cmd_optimize(cfg, stdout):
    p = _params(cfg)
    c = _corridor(cfg, p)
    if cfg.get("x_grid"):
        n = int(cfg["x_grid"])
        xs = np.linspace(c.a, c.b, n + 2)[1:-1]
        m = payoff_model(c, p)
        rows = []
        for x in xs:
            plan = optimal_initial_holding(float(x), c, p)
            rows.append([x, plan.h_star, m.Gamma(float(x)), put_delta(float(x), p), plan.residual])
        _emit(cfg, "optimize.csv", _csv(["x", "h_star", "Gamma", "P_prime", "residual"], rows), stdout)
        return 0
    _need(cfg, "spot")
    x = float(cfg["spot"])
    if not (c.a < x < c.b):
        raise DomainError(f"spot {x} must lie strictly inside ({c.a}, {c.b})")
    plan = optimal_initial_holding(x, c, p)
    for key, val in (("h_star", plan.h_star), ("V", plan.value), ("x1", plan.x1), ("x2", plan.x2),
                     ("residual", plan.residual)):
        print(f"{key}={fmt(val)}", file=stdout)
    return 0


def cmd_simulate(cfg, stdout):
    p = _params(cfg)
    c = _corridor(cfg, p)
    _need(cfg, "spot", "n", "dt", "sweep")
    if cfg["sweep"] not in SWEEPS:
        raise UsageError(f"--sweep must be one of {sorted(SWEEPS)}")
    sim = SimConfig(p, c, float(cfg["spot"]), int(cfg["n"]), float(cfg["dt"]), cfg.get("t_max"), int(cfg["seed"]),
                    bool(cfg["bridge"]), int(cfg["threads"]))
    print(f"# params: r={p.r:.4g}, sigma={p.sigma:.4g}, K={p.K:.6g}, S0={sim.x:.6g}, a={c.a:.6g}, b={c.b:.6g}; "
          f"sweep={cfg['sweep']}, N={sim.n_paths}, dt={sim.dt:.3g}, seed={sim.seed}", file=sys.stderr)
    rows = compare(cfg["sweep"], sim)
    _emit(cfg, f"simulate_{cfg['sweep']}.csv", rows_to_csv(rows), stdout)
    return 0


def cmd_halfline(cfg, stdout):
    p = _params(cfg)
    _need(cfg, "a")
    a = float(cfg["a"])
    if cfg["mode"] == "zero-mean":
        _need(cfg, "h")
        h = cfg["h"][0] if isinstance(cfg["h"], list) else cfg["h"]
        try:
            sol = solve_boundary_infinite(float(h), a, p)
        except DivergentIntegral as exc:
            print(f"error: {exc}. The residual variance is infinite for these parameters, so the half-line "
                  "problem has no finite value.", file=sys.stderr)
            return EXIT_NUMERICAL
        print(f"x_star={fmt(sol.x_star)}", file=stdout)
        print(f"x_G={fmt(sol.x_G)}", file=stdout)
        if cfg.get("spot") is not None and float(cfg["spot"]) >= a:
            print(f"value={fmt(sol.value(float(cfg['spot'])))}", file=stdout)
        return 0
    _need(cfg, "spot")
    plan = superhedge_plan(float(cfg["spot"]), a, p)
    rep = simulate_superhedge(plan, int(cfg["n"]), float(cfg["dt"]), float(cfg["horizon"]), int(cfg["seed"]))
    for key, val in (("m0", plan.m0), ("s_hat", plan.s_hat), ("h", plan.h), ("h1", plan.h1),
                     ("paths", rep.n_paths), ("freq_switched", rep.freq_switched), ("freq_hit_a", rep.freq_hit_a),
                     ("chain_breaks", rep.chain_breaks), ("violations", rep.violations),
                     ("error_mean", rep.mean_error), ("error_var", rep.var_error), ("error_min", rep.min_error),
                     ("error_max", rep.max_error), ("truncated_error_mean", rep.truncated_mean_error)):
        print(f"{key}={fmt(val)}", file=stdout)
    return 0


COMMANDS = {
    "price": cmd_price,
    "boundaries": cmd_boundaries,
    "curves": lambda cfg, out: cmd_boundaries(cfg, out, summary_only=True),
    "optimize": cmd_optimize,
    "simulate": cmd_simulate,
    "halfline": cmd_halfline,
}


def main(argv=None, stdout=None) -> int:
    stdout = stdout or sys.stdout
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = resolve(args)
        if cfg.get("seed") is not None and not (0 <= int(cfg["seed"]) < 2**64):
            raise UsageError("--seed must be an unsigned 64-bit integer")
        if int(cfg["threads"]) < 1:
            raise UsageError("--threads must be positive")
        if cfg.get("out"):
            out = Path(cfg["out"])
            out.mkdir(parents=True, exist_ok=True)
            saved = {k: v for k, v in cfg.items() if k not in ("out", "command")}
            (out / "config.json").write_text(json.dumps(saved, indent=2, sort_keys=True) + "\n")
        code = COMMANDS[args.command](cfg, stdout)
        if code == 0 and cfg.get("emit_plot_data"):
            from .plotdata import emit_all

            files = emit_all(cfg.get("out") or ".", workers=int(cfg["threads"]))
            print(f"# wrote {len(files)} plot-data files", file=sys.stderr)
        return code
    except (UsageError, ConfigError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
