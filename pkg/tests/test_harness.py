import csv
import json

import numpy as np
import pytest

from swarmloc.cli import main
from swarmloc.errors import MismatchedRobots
from swarmloc.geometry import Configuration
from swarmloc.harness import (
    RunOptions,
    SweepSpec,
    align_and_rmse,
    outcome_failed,
    report_json,
    run_scenario,
    run_sweep,
)
from swarmloc.sim import ScenarioConfig, save_config

SMALL = ScenarioConfig(n_robots=6, n_steps=2, seed=1)
FAST = RunOptions(per_step=False, multistart=8)


def conf(points, ids=None, origin=None):
    points = np.asarray(points, dtype=float)
    ids = tuple(range(len(points))) if ids is None else ids
    return Configuration(ids, points, ids[0] if origin is None else origin)


def test_alignment_is_translation_free():
    truth = conf([[0, 0], [3, 0], [0, 4]])
    est = conf([[10, 10], [13, 10], [10, 14]])
    al = align_and_rmse(est, truth)
    assert al.rmse == pytest.approx(0.0, abs=1e-12) and not al.reflection_detected


def test_alignment_error_example():
    truth = conf([[0, 0], [3, 0], [0, 4]])
    est = conf([[0, 0], [3, 0.3], [0, 4]])
    al = align_and_rmse(est, truth)
    assert al.rmse == pytest.approx(0.3 / np.sqrt(3))
    assert al.errors == pytest.approx({0: 0.0, 1: 0.3, 2: 0.0})


def test_alignment_flags_mirror():
    truth = conf([[0, 0], [3, 1], [1, 4]])
    est = conf([[0, 0], [3, -1], [1, -4]])
    assert align_and_rmse(est, truth).reflection_detected


def test_alignment_compares_planar_part_of_spatial_truth():
    truth = conf([[0, 0, 1], [3, 0, 5], [0, 4, 2]])
    est = conf([[0, 0], [3, 0], [0, 4]])
    assert align_and_rmse(est, truth).rmse == pytest.approx(0.0, abs=1e-12)


def test_alignment_needs_same_robots():
    with pytest.raises(MismatchedRobots):
        align_and_rmse(conf([[0, 0], [1, 0]]), conf([[0, 0], [1, 0]], ids=(0, 2)))


def test_run_options_validation():
    with pytest.raises(ValueError):
        RunOptions(method="magic")
    with pytest.raises(ValueError):
        RunOptions(n_members=2)


def test_report_is_deterministic_and_scored():
    a = report_json(run_scenario(SMALL, FAST))
    b = report_json(run_scenario(SMALL, FAST))
    assert a == b
    doc = json.loads(a)
    cons = doc["methods"]["constraints"]
    assert cons["solved"] and cons["rmse"] < 1e-3
    assert doc["methods"]["trilateration"]["outcome"] in ("resolved", "ambiguous")
    assert "timings" not in doc


def test_timings_are_opt_in():
    doc = run_scenario(SMALL, RunOptions(method="trilateration", include_timings=True))
    assert "trilateration" in doc["timings"]


def test_steps_to_uniqueness_is_reported():
    doc = run_scenario(SMALL, RunOptions(method="constraints", multistart=8))
    cons = doc["methods"]["constraints"]
    assert len(cons["clusters_per_step"]) == 2
    if cons["clusters_per_step"][-1] == 1:
        assert cons["steps_to_uniqueness"] in (1, 2)


def test_outcome_failed():
    assert outcome_failed({"methods": {"a": {"solved": False}}})
    assert outcome_failed({"methods": {"a": {"solved": True, "outcome": "ambiguous"}}})
    assert not outcome_failed({"methods": {"a": {"solved": True, "outcome": "unique"}}})


def test_sweep_shapes_and_seeds():
    spec = SweepSpec("sigma_distance", (0.0, 0.05), 2, SMALL, 10, RunOptions(method="trilateration"))
    res = run_sweep(spec, workers=1)
    assert [r["seed"] for r in res.reports] == [10, 11, 12, 13]
    assert len(res.table) == 4 and len(res.aggregate) == 2
    assert all(row["runs"] == 2 for row in res.aggregate)


def test_single_repetition_gives_single_report():
    spec = SweepSpec("n_steps", (2,), 1, SMALL, 0, RunOptions(method="trilateration"))
    assert len(run_sweep(spec).reports) == 1


def test_sweep_validation():
    with pytest.raises(ValueError):
        SweepSpec("colour", (1,))
    with pytest.raises(ValueError):
        SweepSpec("n_steps", ())
    with pytest.raises(ValueError):
        SweepSpec("n_steps", (2,), 0)


# ---------------------------------------------------------------------------
# command line


def test_cli_simulate_then_solve(tmp_path):
    cfg = tmp_path / "cfg.json"
    save_config(SMALL, cfg)
    log, truth, out, plot = (tmp_path / n for n in ("obs.jsonl", "truth.json", "report.json", "plot.csv"))
    assert main(["simulate", "--config", str(cfg), "--out", str(log), "--truth", str(truth),
                 "--emit-plot-data", str(plot)]) == 0
    with open(plot) as fh:
        assert len(list(csv.DictReader(fh))) == 3 * 6
    code = main(["solve", "--log", str(log), "--truth", str(truth), "--out", str(out),
                 "--method", "constraints", "--final-only", "--multistart", "8"])
    doc = json.loads(out.read_text())
    assert code == (2 if outcome_failed(doc) else 0)
    assert doc["methods"]["constraints"]["rmse"] < 1e-3


def test_cli_run_and_sweep_outputs(tmp_path):
    cfg = tmp_path / "cfg.json"
    save_config(SMALL, cfg)
    out, agg = tmp_path / "sweep.json", tmp_path / "agg.csv"
    assert main(["sweep", "--config", str(cfg), "--axis", "sigma_distance", "--values", "0,0.1",
                 "--method", "trilateration", "--out", str(out), "--aggregate", str(agg)]) == 0
    assert len(json.loads(out.read_text())["reports"]) == 2
    assert agg.read_text().startswith("value,method,runs")
    run_out = tmp_path / "run.json"
    code = main(["run", "--config", str(cfg), "--method", "trilateration", "--out", str(run_out)])
    assert code == (2 if outcome_failed(json.loads(run_out.read_text())) else 0)


@pytest.mark.parametrize("argv", [
    ["simulate"],
    ["solve"],
    ["frobnicate"],
    ["sweep", "--axis", "colour", "--values", "1"],
    ["run", "--method", "magic"],
])
def test_cli_usage_errors_exit_one(argv, capsys):
    assert main(argv) == 1
    assert capsys.readouterr().err


def test_cli_missing_file_exits_one(tmp_path, capsys):
    assert main(["solve", "--log", str(tmp_path / "nope.jsonl")]) == 1


def test_cli_solver_failure_exits_two(tmp_path):
    # three robots are too few for a trilateration constellation
    cfg = tmp_path / "cfg.json"
    save_config(ScenarioConfig(n_robots=3, n_steps=1, seed=0, uniform_translation=True), cfg)
    assert main(["run", "--config", str(cfg), "--method", "trilateration", "--out", str(tmp_path / "r.json")]) == 2
