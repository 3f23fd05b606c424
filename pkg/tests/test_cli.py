import json
import math
import subprocess
import sys

import numpy as np
import pytest

from qtrend import cli
from qtrend.errors import InputError
from qtrend.solver import QuantileSpec, objective, solve_block


def _csv(path, text):
    path.write_text(text)
    return str(path)


def _series(tmp_path, name="s.csv", n=300, seed=1):
    cli.run_simulate("peaks", n, seed, str(tmp_path / name))
    return str(tmp_path / name)


def test_ingest_full_mask(tmp_path):
    s = cli.ingest(_csv(tmp_path / "a.csv", "t,y\n1,1.5\n2,2.5\n3,0\n"))
    np.testing.assert_array_equal(s.y, [1.5, 2.5, 0.0])
    np.testing.assert_array_equal(s.mask.weights, 1.0)


def test_ingest_gap_policies(tmp_path):
    path = _csv(tmp_path / "g.csv", "t,y\n1,1\n2,\n3,3\n")
    s = cli.ingest(path, missing="interpolate")
    np.testing.assert_allclose(s.y, [1, 2, 3])
    np.testing.assert_array_equal(s.mask.weights, 1.0)
    s = cli.ingest(path, missing="mask")
    assert math.isnan(s.y[1])
    np.testing.assert_array_equal(s.mask.weights, [1, 0, 1])


def test_ingest_errors(tmp_path):
    with pytest.raises(InputError, match="3"):
        cli.ingest(_csv(tmp_path / "b.csv", "t,y\n1,1\n2,abc\n"))
    with pytest.raises(InputError):
        cli.ingest(_csv(tmp_path / "m.csv", "t,y\n1,\n2,NA\n"))
    with pytest.raises(InputError):
        cli.ingest(_csv(tmp_path / "o.csv", "t,y\n2,1\n1,1\n"))
    with pytest.raises(InputError):
        cli.ingest(_csv(tmp_path / "c.csv", "t,v\n1,1\n"), value_col="y")


def test_detrend_artifacts_and_round_trip(tmp_path):
    inp = _series(tmp_path)
    out = tmp_path / "out"
    code = cli.main(["detrend", "-i", inp, "--tau", "0.05,0.5", "--lambda", "60", "-o", str(out)])
    assert code == cli.EXIT_OK
    for name in ("trends.csv", "residuals.csv", "classifications.csv", "summary.json",
                 "trends.svg", "rug.svg"):
        assert (out / name).exists(), name
    summary = json.loads((out / "summary.json").read_text())
    trends = cli.read_table(out / "trends.csv")
    y = cli.read_table(inp)["y"]
    theta = np.column_stack([trends["tau_0.05"], trends["tau_0.5"]])
    spec = QuantileSpec((0.05, 0.5), summary["lambdas"])
    assert abs(objective(y, theta, spec) - summary["objective"]) <= 1e-10 * max(1, abs(summary["objective"]))
    classes = cli.read_table(out / "classifications.csv")
    assert {"tau_0.05_q0.9", "tau_0.5_q0.99"} <= set(classes)


def test_zero_lambda_gives_zero_residuals(tmp_path):
    inp = _series(tmp_path, n=60)
    out = tmp_path / "o"
    assert cli.main(["detrend", "-i", inp, "--tau", "0.5", "--lambda", "0", "--no-plots",
                     "-o", str(out)]) == 0
    np.testing.assert_allclose(cli.read_table(out / "residuals.csv")["tau_0.5"], 0.0, atol=1e-7)


def test_outputs_are_deterministic(tmp_path):
    inp = _series(tmp_path)
    runs = []
    for name in ("a", "b"):
        out = tmp_path / name
        cli.main(["detrend", "-i", inp, "--tau", "0.1", "--lambda", "60", "--windows", "2",
                  "--overlap", "50", "-o", str(out)])
        runs.append(out)
    for name in ("trends.csv", "residuals.csv", "classifications.csv", "summary.json",
                 "convergence_trace.csv", "trends.svg", "rug.svg"):
        assert (runs[0] / name).read_bytes() == (runs[1] / name).read_bytes(), name


def test_windowed_trends_track_the_single_block(tmp_path):
    inp = _series(tmp_path, n=600, seed=4)
    for W in (1, 3):
        cli.main(["detrend", "-i", inp, "--tau", "0.05,0.5", "--lambda", "120", "--windows",
                  str(W), "--overlap", "100", "--no-plots", "-o", str(tmp_path / f"w{W}")])
    a = cli.read_table(tmp_path / "w1" / "trends.csv")
    b = cli.read_table(tmp_path / "w3" / "trends.csv")
    y = cli.read_table(inp)["y"]
    diff = max(np.max(np.abs(a[c] - b[c])) for c in ("tau_0.05", "tau_0.5"))
    # loose bound here; the acceptance suite measures the tight one
    assert diff <= 0.5 * np.std(y)


def test_selection_report_and_vi(tmp_path):
    inp = _series(tmp_path, "a.csv", n=300, seed=2)
    y = cli.read_table(inp)["y"]
    other = tmp_path / "b.csv"
    cli.write_table(other, {"t": np.arange(1, 301), "y": y + np.linspace(0, 3, 300)})
    out = tmp_path / "o"
    assert cli.main(["detrend", "-i", inp, "--input2", str(other), "--tau", "0.05",
                     "--criterion", "bic", "--grid", "1,10,100", "-o", str(out)]) == 0
    rep = json.loads((out / "selection_report.json").read_text())
    assert rep["grid"] == [1.0, 10.0, 100.0] and len(rep["chosen"]) == 1
    summary = json.loads((out / "summary.json").read_text())
    assert len(summary["vi"]["raw"]) == 3 and (out / "vi.svg").exists()


def test_select_subcommand_writes_report_only(tmp_path):
    inp = _series(tmp_path, n=120)
    out = tmp_path / "o"
    assert cli.main(["select", "-i", inp, "--tau", "0.5", "--grid", "1,10", "-o", str(out)]) == 0
    assert (out / "selection_report.json").exists() and not (out / "trends.svg").exists()


def test_config_file_and_flag_override(tmp_path):
    inp = _series(tmp_path, n=100)
    cfg = _csv(tmp_path / "run.cfg", f"# run\ninput = {inp}\ntau = 0.2,0.8\nlambda = 5\n"
                                     f"output = {tmp_path / 'o'}\nno-plots = true\n")
    args = cli.parse_args(["detrend", "--config", cfg, "--tau", "0.5"])
    conf = cli.config_from_args(args)
    assert conf.taus == (0.5,) and conf.lam == (5.0,) and conf.input == inp
    bad = _csv(tmp_path / "bad.cfg", "colour = blue\n")
    assert cli.main(["detrend", "--config", bad]) == cli.EXIT_INPUT


def test_exit_codes(tmp_path):
    assert cli.main(["detrend", "-i", str(tmp_path / "missing.csv")]) == cli.EXIT_INPUT
    bad = _csv(tmp_path / "bad.csv", "t,y\n1,x\n")
    assert cli.main(["detrend", "-i", bad, "--lambda", "1"]) == cli.EXIT_INPUT
    inp = _series(tmp_path, n=400)
    out = tmp_path / "nc"
    code = cli.main(["detrend", "-i", inp, "--tau", "0.5", "--lambda", "80", "--windows", "2",
                     "--overlap", "50", "--max-iterations", "1", "--eps-abs", "1e-9",
                     "--eps-rel", "1e-9", "--no-plots", "-o", str(out)])
    assert code == cli.EXIT_NONCONVERGED
    assert (out / "convergence_trace.csv").exists()
    assert cli.EXIT_INPUT != cli.EXIT_NONCONVERGED != cli.EXIT_OK


def test_classify_and_metrics_commands(tmp_path, capsys):
    inp = _series(tmp_path, n=200)
    cli.main(["detrend", "-i", inp, "--tau", "0.05", "--lambda", "40", "--no-plots",
              "-o", str(tmp_path / "o")])
    capsys.readouterr()
    est = tmp_path / "est.csv"
    assert cli.main(["classify", "-i", inp, "--trends", str(tmp_path / "o" / "trends.csv"),
                     "--level", "0.9", "-o", str(est)]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["positives"] == 20
    truth = tmp_path / "truth.csv"
    sig = cli.read_table(inp)["signal"]
    cli.write_table(truth, {"t": np.arange(1, 201), "label": (sig > 0.5).astype(int)})
    assert cli.main(["metrics", "--truth", str(truth), "--est", str(est)]) == 0
    scores = json.loads(capsys.readouterr().out)
    assert scores["vi"] >= 0
    assert cli.main(["metrics", "--trend", str(tmp_path / "o" / "trends.csv"), "--column",
                     "tau_0.05", "--true-trend", inp]) == 0
    assert json.loads(capsys.readouterr().out)["rmse"] >= 0


def test_simulate_columns(tmp_path):
    out = tmp_path / "r.csv"
    assert cli.main(["simulate", "--design", "gaussian", "--n", "50", "--tau", "0.5",
                     "-o", str(out)]) == 0
    tab = cli.read_table(out)
    assert set(tab) == {"t", "y", "trend", "signal", "q_0.5"}


def test_timing_table(tmp_path):
    rows = cli.run_timing([400], [1, 2], 2, seed=3, overlap=50, output=str(tmp_path / "t.csv"))
    assert len(rows) == 4
    assert len({r["seed"] for r in rows}) == 2
    med = cli.timing_medians(rows)
    assert set(med) == {(400, 1), (400, 2)}
    one = cli.run_timing([300], [1], 1, seed=0, overlap=50)
    assert len(one) == 1


def test_module_entry_point(tmp_path):
    out = tmp_path / "p.csv"
    proc = subprocess.run([sys.executable, "-m", "qtrend", "simulate", "--n", "30", "-o", str(out)],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and out.exists()
