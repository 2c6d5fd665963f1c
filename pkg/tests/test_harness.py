import os
import subprocess
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest
import yaml

from drem_observer.harness.cli import EXIT_FAULT, EXIT_INVALID, EXIT_OK, main
from drem_observer.harness.outputs import read_table_csv, read_trajectory_csv, write_table_csv, write_trajectory_csv
from drem_observer.harness.runner import RuntimeFault, compute_metrics, run_scenario, simulate
from drem_observer.harness.scenario import (
    ScenarioError,
    duffing_scenario,
    load_scenario,
    scenario_from_dict,
    with_outputs,
    with_param,
)
from drem_observer.harness.sweep import METRIC_FIELDS, sweep
from drem_observer.plant import Signal

import runs

SCENARIOS = Path(__file__).resolve().parent.parent / "scenarios"


def write_yaml(path, doc):
    path.write_text(yaml.safe_dump(doc))
    return str(path)


def short_doc(**over):
    doc = {"plant": {"preset": "duffing"}, "clock": {"t_end": 20}, "outputs": {"csv": "run.csv", "decimation": 100}}
    for k, v in over.items():
        doc.setdefault(k, {}).update(v)
    return doc


# -- scenario files -------------------------------------------------------------------------


@pytest.mark.parametrize("name", sorted(p.name for p in SCENARIOS.glob("*.yaml")))
def test_shipped_scenarios_load(name):
    s = load_scenario(SCENARIOS / name)
    assert s.name == Path(name).stem
    if s.outputs.csv:
        assert Path(s.outputs.csv).is_absolute() or Path(s.outputs.csv).parent.name == "out"


def test_duffing_file_matches_builtin():
    s = load_scenario(SCENARIOS / "duffing.yaml")
    d = duffing_scenario()
    np.testing.assert_array_equal(s.plant.A, d.plant.A)
    np.testing.assert_array_equal(s.observer.L, d.observer.L)
    np.testing.assert_array_equal(s.drem.K, d.drem.K)
    assert (s.observer.mu, s.drem.T, s.drem.alpha, s.drem.k) == (d.observer.mu, d.drem.T, d.drem.alpha, d.drem.k)
    assert s.estimator.gamma == d.estimator.gamma


def test_validation_lists_every_problem(tmp_path, capsys):
    doc = short_doc(drem={"alpha": -1.0}, clock={"dt": 0.3}, sweep={"param": "zeta", "values": [1]})
    with pytest.raises(ScenarioError) as ei:
        scenario_from_dict(doc)
    text = str(ei.value)
    assert "alpha" in text and "dt=0.3" in text and "sweep.param" in text
    assert len(ei.value.problems) >= 3
    assert main(["check", write_yaml(tmp_path / "bad.yaml", doc)]) == EXIT_INVALID
    assert "alpha" in capsys.readouterr().err


def test_custom_plant_needs_gains():
    doc = {"plant": {"A": [[-1, 0], [0, -2]], "C": [[1, 0]], "D": [1, 0], "phi": ["0", "0"],
                     "G": [["y", "0"], ["0", "u"]], "theta": [1, 2], "x0": [0, 0], "delta": 0, "u": 1}}
    with pytest.raises(ScenarioError) as ei:
        scenario_from_dict(doc)
    text = str(ei.value)
    assert "observer.L" in text and "drem.K" in text and "gamma" in text


def test_rk4_stability_is_checked():
    doc = short_doc(observer={"mu": 125.0}, clock={"dt": 1e-3, "t_end": 20})
    with pytest.raises(ScenarioError, match="RK4 stability"):
        scenario_from_dict(doc)
    doc["clock"]["dt"] = 5e-4
    assert scenario_from_dict(doc).observer.mu == 125.0


def test_unwritable_output_fails_validation(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    doc = short_doc(outputs={"csv": str(blocker / "run.csv")})
    with pytest.raises(ScenarioError, match="output directory"):
        scenario_from_dict(doc)


def test_with_param():
    s = replace(duffing_scenario(), plant=replace(duffing_scenario().plant, delta=Signal.build([0.0])))
    a = with_param(s, "A_amp", 1.5)
    assert a.plant.u(0.0)[0] == 1.5 and a.A_amp == 1.5
    assert a.plant.delta(1.0)[0] == 0.0
    assert with_param(s, "T", 20).drem.T == 20.0
    assert with_param(s, "mu", 5).observer.mu == 5.0
    assert str(with_param(s, "gamma", "1e200").estimator.gamma) == "1e200"
    with pytest.raises(ScenarioError):
        with_param(s, "L", 1.0)


# -- run ------------------------------------------------------------------------------------


def test_cli_run_writes_trajectory_and_metrics(tmp_path, capsys):
    path = write_yaml(tmp_path / "short.yaml", short_doc(outputs={"metrics_csv": "m.csv", "plot_script": True}))
    assert main(["run", path]) == EXIT_OK
    out = capsys.readouterr().out
    assert "201 rows" in out
    cols = read_trajectory_csv(tmp_path / "run.csv")
    assert list(cols)[:5] == ["t", "x1", "x2", "xhat1", "xhat2"]
    for name in ("delta", "deltahat", "theta1hat", "theta2hat", "log10_abs_omega", "errx", "errtheta", "c1_min",
                 "log10_c3", "c4_sign"):
        assert name in cols
    assert cols["t"].size == 201 and cols["t"][-1] == 20.0
    m = read_table_csv(tmp_path / "m.csv")[0]
    again = compute_metrics(cols).as_dict()
    for k, v in again.items():
        assert float(m[k]) == pytest.approx(v, rel=1e-12, abs=1e-300)
    script = (tmp_path / "run_plot.py").read_text()
    compile(script, "run_plot.py", "exec")
    assert str(tmp_path / "run.csv") in script


def test_csv_override_and_log_length(tmp_path):
    path = write_yaml(tmp_path / "short.yaml", short_doc())
    assert main(["run", path, "--csv", str(tmp_path / "other.csv")]) == EXIT_OK
    assert (tmp_path / "other.csv").exists() and not (tmp_path / "run.csv").exists()
    log, _ = runs.run()
    assert len(log) == 3001


def test_csv_round_trips_exactly(tmp_path):
    s = with_outputs(duffing_scenario(t_end=10.0), csv=str(tmp_path / "a.csv"), decimation=10)
    log, _ = run_scenario(s)
    write_trajectory_csv(log.columns, s.outputs.csv)
    back = read_trajectory_csv(s.outputs.csv)
    for k, v in log.columns.items():
        np.testing.assert_array_equal(back[k], v)


def test_runtime_fault_exit_code_and_no_partial_file(tmp_path, capsys):
    # T = 10 loses identifiability and kappa escapes (see the acceptance suite)
    path = write_yaml(tmp_path / "t10.yaml", short_doc(drem={"T": 10}, clock={"t_end": 40}))
    assert main(["run", path]) == EXIT_FAULT
    err = capsys.readouterr().err
    assert "estimator" in err and "t=" in err
    assert not (tmp_path / "run.csv").exists()
    assert list(tmp_path.iterdir()) == [tmp_path / "t10.yaml"]


def test_runtime_fault_carries_time_and_block():
    s = with_param(duffing_scenario(t_end=40.0), "T", 10)
    with pytest.raises(RuntimeFault) as ei:
        simulate(s)
    assert ei.value.block == "estimator"
    assert 10.0 < ei.value.t < 40.0


def test_debug_scenario_error_decays(tmp_path):
    s = with_outputs(load_scenario(SCENARIOS / "duffing_debug.yaml"), csv=None)
    log, rep = run_scenario(s)
    e = log.columns["errx"]
    assert e[-1] < 1e-2 * e[0]
    np.testing.assert_array_equal(log.columns["errdelta"], np.abs(log.columns["deltahat"]))


def test_check_reports_matching(capsys):
    assert main(["check", str(SCENARIOS / "duffing.yaml")]) == EXIT_OK
    out = capsys.readouterr().out
    assert "valid" in out and "relative residual" in out and "300000 steps" in out


def test_console_entry_point_runs_as_module():
    r = subprocess.run([sys.executable, "-m", "drem_observer.harness.cli", "check",
                        str(SCENARIOS / "custom_linear.yaml")], capture_output=True, text=True)
    assert r.returncode == EXIT_OK, r.stderr
    assert "n=2 p=1 q=2" in r.stdout


# -- sweep -----------------------------------------------------------------------------------


def test_empty_sweep_writes_header_only(tmp_path):
    path = write_yaml(tmp_path / "s.yaml", short_doc())
    table = tmp_path / "table.csv"
    assert main(["sweep", path, "--param", "T", "--values", "--out", str(table)]) == EXIT_OK
    assert table.read_text().strip().split(",") == ["param", "value", "status"] + METRIC_FIELDS


def test_sweep_isolates_a_faulting_run(tmp_path):
    s = load_scenario(write_yaml(tmp_path / "s.yaml", short_doc(clock={"t_end": 40})))
    table = tmp_path / "cmp.csv"
    res = sweep(s, "T", [10, 20], table=str(table))
    assert [r.ok for r in res] == [False, True]
    assert "RuntimeFault" in res[0].error
    rows = read_table_csv(table)
    assert rows[0]["status"].startswith("RuntimeFault") and rows[1]["status"] == "ok"
    assert (tmp_path / "run_T=20.csv").exists() and not (tmp_path / "run_T=10.csv").exists()


def test_sweep_invalid_value_is_isolated(tmp_path):
    s = load_scenario(write_yaml(tmp_path / "s.yaml", short_doc(clock={"t_end": 10})))
    res = sweep(s, "T", [0.00025, 5])
    assert not res[0].ok and "ScenarioError" in res[0].error
    assert res[1].ok


def test_sweep_parallel_matches_serial(tmp_path):
    s = load_scenario(write_yaml(tmp_path / "s.yaml", short_doc(clock={"t_end": 10})))
    a = sweep(s, "mu", [5, 25], workers=1)
    b = sweep(s, "mu", [5, 25], workers=2)
    assert [r.report for r in a] == [r.report for r in b]


def test_cli_sweep_from_file_section(tmp_path, capsys):
    doc = short_doc(clock={"t_end": 10}, outputs={"metrics_csv": "m.csv", "plot_script": True},
                    sweep={"param": "A_amp", "values": [1.5, 2.5]})
    assert main(["sweep", write_yaml(tmp_path / "s.yaml", doc)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "A_amp=1.5" in out and "A_amp=2.5" in out
    rows = read_table_csv(tmp_path / "m_sweep_A_amp.csv")
    assert [r["value"] for r in rows] == ["1.5", "2.5"]
    compile((tmp_path / "sweep_A_amp_plot.py").read_text(), "plot", "exec")


def test_sweep_rejects_unknown_parameter(tmp_path):
    path = write_yaml(tmp_path / "s.yaml", short_doc())
    with pytest.raises(SystemExit):
        main(["sweep", path, "--param", "zeta"])
    with pytest.raises(ScenarioError):
        sweep(load_scenario(path), "zeta", [1])


def test_outputs_get_default_file_mode(tmp_path):
    write_table_csv([{"a": 1.0}], tmp_path / "t.csv")
    umask = os.umask(0)
    os.umask(umask)
    assert (tmp_path / "t.csv").stat().st_mode & 0o777 == 0o666 & ~umask
