import csv
import io
import json

import numpy as np
import pytest

from corridor_hedge.cli import main


def run(args):
    out = io.StringIO()
    code = main(args, stdout=out)
    return code, out.getvalue()


def kv(text):
    return dict(line.split("=", 1) for line in text.strip().splitlines())


def test_price_reports_constants():
    code, out = run(["price", "--r", "0.03", "--sigma", "0.30", "--strike", "100", "--spot", "100"])
    assert code == 0
    vals = kv(out)
    assert float(vals["a_hat"]) == pytest.approx(40.0)
    assert float(vals["q1"]) == pytest.approx(4 / 3) and float(vals["q2"]) == pytest.approx(-1.0)
    assert set(vals) == {"P", "P_prime", "a_hat", "d", "q1", "q2"}


def test_price_at_exercise_boundary():
    code, out = run(["price", "--r", "0.03", "--sigma", "0.30", "--strike", "100", "--spot", "40"])
    assert code == 0 and float(kv(out)["P"]) == pytest.approx(60.0)


def test_missing_strike_is_usage_error(capsys):
    code, _ = run(["price", "--r", "0.03", "--sigma", "0.30", "--spot", "100"])
    assert code == 2
    assert "--strike" in capsys.readouterr().err


def test_unknown_flag_is_usage_error():
    assert run(["price", "--bogus"])[0] == 2


def test_boundaries_single_holding_at_upper_delta():
    code, out = run(["boundaries", "--h", "-0.11047937798947055"])
    assert code == 0
    row = list(csv.DictReader(io.StringIO(out)))[0]
    assert row["case"] == "A1" and float(row["x2"]) == 150.0


def test_boundaries_holding_out_of_range():
    assert run(["boundaries", "--h", "0.2"])[0] == 2


def test_boundaries_grid_is_monotone(capsys):
    code, out = run(["boundaries", "--h-grid", "40"])
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out)))
    assert len(rows) == 40 and all(r["error"] == "" for r in rows)
    x1 = np.array([float(r["x1"]) for r in rows])
    x2 = np.array([float(r["x2"]) for r in rows])
    assert np.all(np.diff(x1) >= 0) and np.all(np.diff(x2) >= 0)
    assert "x1_non_decreasing=True x2_non_decreasing=True" in capsys.readouterr().err


def test_optimize_report_and_rejections():
    code, out = run(["optimize", "--spot", "100", "--a", "90", "--b", "110"])
    assert code == 0
    vals = kv(out)
    assert float(vals["residual"]) <= 1e-8
    assert float(vals["x1"]) < 100 < float(vals["x2"])
    assert run(["optimize", "--spot", "40"])[0] == 2


def test_optimize_x_grid_curve():
    code, out = run(["optimize", "--x-grid", "8"])
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out)))
    assert len(rows) == 8
    for r in rows:
        assert -1.0 < float(r["h_star"]) < -0.11047937798947
        assert float(r["residual"]) <= 1e-8


def test_halfline_modes(capsys):
    code, out = run(["halfline", "--h", "-1"])
    assert code == 0
    vals = kv(out)
    assert float(vals["x_star"]) >= float(vals["x_G"])
    code, out = run(["halfline", "--mode", "superhedge", "--n", "500", "--horizon", "20"])
    assert code == 0 and float(kv(out)["m0"]) > 0
    assert run(["halfline", "--h", "0"])[0] == 2
    assert "degenerate" in capsys.readouterr().err


def test_simulate_shape_order_and_defaults(capsys):
    code, out = run(["simulate", "--sweep", "b", "--n", "300"])
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out)))
    assert len(rows) == 50
    bs = [float(r["sweep_param"]) for r in rows[::5]]
    assert bs == sorted(bs) and bs[0] == 105.0 and bs[-1] == 150.0
    err = capsys.readouterr().err
    assert "r=0.03, sigma=0.3, K=100, S0=100, a=90, b=110" in err


def test_config_round_trip(tmp_path):
    first = tmp_path / "one"
    code, _ = run(["--out", str(first), "simulate", "--sweep", "spot", "--n", "200", "--seed", "9"])
    assert code == 0
    cfg = json.loads((first / "config.json").read_text())
    assert cfg["seed"] == 9 and cfg["n"] == 200
    second = tmp_path / "two"
    code, _ = run(["simulate", "--config", str(first / "config.json"), "--out", str(second)])
    assert code == 0
    assert (first / "simulate_spot.csv").read_bytes() == (second / "simulate_spot.csv").read_bytes()


def test_flags_override_config(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"r": 0.03, "sigma": 0.3, "strike": 100, "spot": 40}))
    code, out = run(["price", "--config", str(path), "--spot", "100"])
    assert code == 0 and float(kv(out)["P"]) == pytest.approx(32.573011399138863)
    path.write_text(json.dumps({"unknown_key": 1}))
    assert run(["price", "--config", str(path)])[0] == 2


def test_plot_data_emission(tmp_path):
    code, _ = run(["--out", str(tmp_path), "--emit-plot-data", "price", "--r", "0.03", "--sigma", "0.3",
                   "--strike", "100", "--spot", "100"])
    assert code == 0
    names = sorted(p.name for p in (tmp_path / "plot_data").iterdir())
    for prefix in ("p1.0", "p2.0", "p3.0", "p4.0", "p5.0", "p6.0"):
        assert any(n.startswith(prefix) for n in names)
    path = list(csv.DictReader(open(tmp_path / "plot_data" / "p5.0_sample_path.csv")))
    s = [float(r["S"]) for r in path]
    assert s[0] == 100.0 and (s[-1] in (90.0, 130.0))
