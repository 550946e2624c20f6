import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from aidnet.cases import case1_dict, case2_dict
from aidnet.cli import main
from aidnet.scenario import DispatchPlan, load_scenario
from aidnet.evaluator import reliability


@pytest.fixture
def case1_file(tmp_path):
    path = tmp_path / "case1.json"
    path.write_text(json.dumps(case1_dict()))
    return path


@pytest.fixture(scope="module")
def case1_report(tmp_path_factory):
    d = tmp_path_factory.mktemp("solve")
    scen = d / "case1.json"
    scen.write_text(json.dumps(case1_dict()))
    out = d / "report.json"
    assert main(["solve", str(scen), "--out", str(out)]) == 0
    return scen, out, json.loads(out.read_text())


def test_validate_ok(case1_file, capsys):
    assert main(["validate", str(case1_file)]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["valid"] and doc["commodities"] == 5


def test_validate_reports_field(tmp_path, capsys):
    d = case1_dict()
    d["commodities"][0]["weight"] = -1.0
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(d))
    assert main(["validate", str(path)]) == 3
    assert "commodities" in capsys.readouterr().err


def test_unparsable_file_exit_2(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    assert main(["validate", str(path)]) == 2
    assert main(["solve", str(tmp_path / "missing.json")]) == 2


def test_empty_demand_exit_3(tmp_path):
    d = case1_dict()
    d["demand"]["amounts"] = [[0.0]] * 5
    path = tmp_path / "empty.json"
    path.write_text(json.dumps(d))
    assert main(["solve", str(path)]) == 3


def test_solve_case1(case1_report):
    _, _, doc = case1_report
    assert doc["R"] == pytest.approx(59.32, abs=0.05)
    assert doc["plan"]["t_fa"][0] == pytest.approx(4.399, abs=0.01)
    assert doc["plan"]["t_df"][0] == pytest.approx(1.712, abs=0.01)
    assert doc["plan"]["t_sd"][0] == 0.0
    assert doc["solver"]["converged"]
    assert doc["cost"] == 3.0
    assert "metrics" in doc and "trace" in doc["solver"]


def test_solve_output_is_reproducible(case1_report, tmp_path):
    scen, out, _ = case1_report
    again = tmp_path / "again.json"
    assert main(["solve", str(scen), "--out", str(again), "--threads", "2"]) == 0
    a = json.loads(out.read_text())
    b = json.loads(again.read_text())
    for doc in (a, b):
        doc["solver"].pop("runtime_s")
    assert a == b


def test_report_round_trips_through_eval(case1_report, tmp_path):
    scen, out, doc = case1_report
    ev = tmp_path / "eval.json"
    assert main(["eval", str(scen), "--plan", str(out), "--out", str(ev)]) == 0
    assert abs(json.loads(ev.read_text())["R"] - doc["R"]) <= 1e-12
    # The plan itself round-trips bit for bit.
    s = load_scenario(scen)
    plan = DispatchPlan.from_dict(doc["plan"], s)
    assert abs(reliability(s, plan) - doc["R"]) <= 1e-12


def test_report_round_trips_through_mc_check(case1_report, tmp_path):
    scen, out, doc = case1_report
    mc = tmp_path / "mc.json"
    hist = tmp_path / "hist.csv"
    args = ["mc-check", str(scen), "--plan", str(out), "--samples", "1000000", "--seed", "4",
            "--out", str(mc), "--hist", str(hist)]
    assert main(args) == 0
    res = json.loads(mc.read_text())
    assert abs(res["R_analytic"] - doc["R"]) <= 1e-12
    assert abs(res["R_hat"] - 59.32) <= 3 * res["std_err"] + 0.01
    assert res["within_3_std_err"]
    rows = list(csv.reader(hist.open()))
    assert rows[0] == ["lateness_lo", "lateness_hi", "count"]
    assert rows[1][0] == "-inf"


def test_eval_rejects_plan_of_wrong_shape(tmp_path, case1_file):
    d = case2_dict()
    scen2 = tmp_path / "case2.json"
    scen2.write_text(json.dumps(d))
    plan = DispatchPlan.empty(load_scenario(scen2))
    path = tmp_path / "plan.json"
    path.write_text(json.dumps(plan.to_dict()))
    assert main(["eval", str(case1_file), "--plan", str(path)]) == 3


def test_force_prob_one_case2(tmp_path):
    scen = tmp_path / "case2.json"
    scen.write_text(json.dumps(case2_dict()))
    out = tmp_path / "r.json"
    assert main(["solve", str(scen), "--force-prob-one", "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["R"] == pytest.approx(85.0, abs=0.01)
    assert doc["force_prob_one"]


def read_grid(path):
    rows = list(csv.reader(path.open()))
    return rows[0], np.array([[float(x) for x in r] for r in rows[1:]])


def test_contour_case1(case1_report, tmp_path):
    scen, out, _ = case1_report
    grid = tmp_path / "grid.csv"
    summary = tmp_path / "summary.json"
    args = ["contour", str(scen), "--plan", str(out), "--x", "t_fa[0]", "--y", "t_df[0]",
            "--x-range", "0:6", "--y-range", "0:6", "--n", "200", "--zeta", "0.001",
            "--out", str(grid), "--summary", str(summary)]
    assert main(args) == 0
    header, data = read_grid(grid)
    assert header == ["t_fa[0]", "t_df[0]", "R"]
    assert data.shape == (200 * 200, 3)
    doc = json.loads(summary.read_text())
    cell = 6.0 / 199
    assert abs(doc["argmax"]["t_fa[0]"] - 4.399) <= cell
    assert abs(doc["argmax"]["t_df[0]"] - 1.712) <= cell
    assert doc["argmax"]["R"] == pytest.approx(59.32, abs=0.1)
    assert len(doc["local_maxima"]) >= 2


def test_contour_high_penalty_plateau(case1_report, tmp_path):
    """At a penalty scale of 70 a near-perfect plateau should appear."""
    scen, out, _ = case1_report
    summary = tmp_path / "summary.json"
    args = ["contour", str(scen), "--plan", str(out), "--x", "t_fa[0]", "--y", "t_df[0]",
            "--x-range", "0:6", "--y-range", "0:6", "--zeta", "70", "--out", str(tmp_path / "g.csv"),
            "--summary", str(summary)]
    assert main(args) == 0
    assert json.loads(summary.read_text())["argmax"]["R"] >= 99.0


def test_contour_constant_without_deadlines(tmp_path):
    d = case1_dict()
    d["demand"]["times"] = [["inf"]] * 5
    scen = tmp_path / "open.json"
    scen.write_text(json.dumps(d))
    s = load_scenario(scen)
    plan = DispatchPlan.empty(s)
    plan.u_fa[:] = plan.u_df[:] = plan.u_sd[:] = 1
    plan.b_fa[:] = 4.0
    plan.t_fa[:], plan.t_df[:], plan.t_sd[:] = 1.0, 0.5, 0.0
    plan_path = tmp_path / "plan.json"
    plan_path.write_text(json.dumps(plan.to_dict()))
    grid = tmp_path / "g.csv"
    args = ["contour", str(scen), "--plan", str(plan_path), "--x", "t_fa[0]", "--y", "t_df[0]",
            "--x-range", "0:6", "--y-range", "0:6", "--n", "20", "--out", str(grid)]
    assert main(args) == 0
    _, data = read_grid(grid)
    assert np.ptp(data[:, 2]) == 0.0
    assert data[0, 2] == pytest.approx(40.0)


def test_contour_unknown_variable_exit_5(case1_report, tmp_path):
    scen, out, _ = case1_report
    args = ["contour", str(scen), "--plan", str(out), "--x", "t_xx[0]", "--y", "t_df[0]",
            "--x-range", "0:6", "--y-range", "0:6", "--out", str(tmp_path / "g.csv")]
    assert main(args) == 5


def test_tighten_curve(case1_file, tmp_path):
    curve = tmp_path / "curve.csv"
    summary = tmp_path / "best.json"
    assert main(["tighten", str(case1_file), "--out", str(curve), "--summary", str(summary)]) == 0
    rows = list(csv.DictReader(curve.open()))
    assert float(rows[0]["budget"]) == 1000.0
    best = json.loads(summary.read_text())
    assert best["cost"] <= best["initial_cost"]
    Rs = [float(r["R"]) for r in rows]
    assert all(b <= a + 1e-6 for a, b in zip(Rs, Rs[1:]))


def test_warmstart_command(case1_file, capsys):
    assert main(["warmstart", str(case1_file)]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["stopped_at"] == "S" and doc["constraints_satisfied"]


def test_module_entry_point(case1_file):
    proc = subprocess.run([sys.executable, "-m", "aidnet", "validate", str(case1_file)],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["valid"]
