"""
Тесты командной строки и движка экспериментов
"""
import asyncio
import csv
import json
import math

import numpy as np
import pytest

from engine.experiment_engine import ExperimentEngine
from engine.fixtures import two_atom_fixture
from handlers.commands import EXIT_CONFIG_FAILED, EXIT_OK, EXIT_RUN_FAILED, build_parser, handle
from storage.repository import MeasureRepository
from utils.config_utils import build_config
from utils.report_texts import CONFIG_ERROR_HEADER

GAUSSIAN = {
    "gaussian": {
        "source": {"mean": [0.0, 0.0], "covariance": [[1.0, 0.0], [0.0, 1.0]]},
        "target": {"mean": [0.0, 0.0], "covariance": [[2.0, 1.0], [1.0, 2.0]]},
        "grid": {"nodes": 6},
    }
}


@pytest.fixture
def atom_files(tmp_path):
    instance = two_atom_fixture()
    source, target = tmp_path / "source.csv", tmp_path / "target.csv"
    MeasureRepository.save(instance.source, str(source))
    MeasureRepository.save(instance.target, str(target))
    return str(source), str(target)


def write_config(tmp_path, data, name="run.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data), encoding="utf-8")
    return str(path)


def run_cli(*argv):
    return asyncio.run(handle(list(argv)))


def read_table(path):
    with open(path, encoding="utf-8", newline="") as f:
        return list(csv.DictReader(f))


def test_parser_has_subcommand_per_experiment():
    args = build_parser().parse_args(["sweep-soft", "--config", "a.yaml", "--threads", "2"])
    assert args.command == "sweep-soft"
    assert args.threads == 2
    with pytest.raises(SystemExit):
        build_parser().parse_args(["transport"])


def test_hard_solve_writes_report(tmp_path, atom_files, capsys):
    source, target = atom_files
    config = write_config(tmp_path, {"fixture": {"atoms": {"source": source, "target": target}}})
    out = tmp_path / "out"
    assert run_cli("solve", "--config", config, "--out", str(out)) == EXIT_OK
    assert "✅ ε=1 cost=4" in capsys.readouterr().out

    report = json.loads((out / "report.json").read_text(encoding="utf-8"))
    assert report["status"] == "ok"
    assert report["experiment"] == "solve"
    assert report["cells"][0]["objective"] == pytest.approx(4.0)
    assert report["cells"][0]["seconds"] is None
    assert report["config"]["epsilons"] == [1.0]
    plan = json.loads((out / "plan.json").read_text(encoding="utf-8"))
    assert plan["kind"] == "coupling"
    assert plan["shape"] == [2, 2]
    assert read_table(out / "cells.csv")[0]["status"] == "ok"


def test_identical_measures_cost_nothing(tmp_path, atom_files):
    source, _ = atom_files
    config = write_config(tmp_path, {"fixture": {"atoms": {"source": source, "target": source}}})
    out = tmp_path / "out"
    assert run_cli("solve", "--config", config, "--out", str(out), "--quiet") == EXIT_OK
    report = json.loads((out / "report.json").read_text(encoding="utf-8"))
    assert report["cells"][0]["objective"] == 0.0
    assert report["cells"][0]["map_distance"] == pytest.approx(0.0, abs=1e-12)


def test_kl_decay_table(tmp_path, atom_files):
    source, target = atom_files
    data = {
        "experiment": "kl-decay",
        "fixture": {"atoms": {"source": source, "target": target}},
        "cost": {"epsilon": 1.0},
        "solver": {"kind": "soft-oracle", "lambdas": [1, 10, 100]},
    }
    out = tmp_path / "out"
    assert run_cli("kl-decay", "--config", write_config(tmp_path, data), "--out", str(out), "--quiet") == EXIT_OK
    rows = read_table(out / "kl_decay.csv")
    assert [float(row["lambda"]) for row in rows] == [1.0, 10.0, 100.0]
    for row in rows:
        assert float(row["kl"]) <= float(row["bound"]) + 1e-6


def test_invalid_config_exits_with_two(tmp_path, capsys):
    config = write_config(tmp_path, {"fixture": {}, "cost": {"epsilon": 0}})
    assert run_cli("solve", "--config", config, "--quiet") == EXIT_CONFIG_FAILED
    err = capsys.readouterr().err
    assert CONFIG_ERROR_HEADER in err
    assert "cost: ε должны лежать в (0, 1]" in err


def test_threads_must_be_positive(tmp_path, atom_files):
    source, target = atom_files
    config = write_config(tmp_path, {"fixture": {"atoms": {"source": source, "target": target}}})
    assert run_cli("solve", "--config", config, "--threads", "0", "--quiet") == EXIT_CONFIG_FAILED


def test_run_failure_still_writes_report(tmp_path, atom_files):
    source, target = atom_files
    data = {"fixture": {"atoms": {"source": source, "target": target}}, "solver": {"kind": "soft-oracle"}}
    out = tmp_path / "out"
    assert run_cli("solve", "--config", write_config(tmp_path, data), "--out", str(out), "--quiet") == EXIT_RUN_FAILED
    report = json.loads((out / "report.json").read_text(encoding="utf-8"))
    assert report["status"] == "error"
    assert "needs solver.lambda" in report["error"]


def test_engine_dynamic_experiment():
    config = build_config({"experiment": "dynamic", "fixture": GAUSSIAN, "cost": {"epsilon": 0.1}})
    report = ExperimentEngine().execute(config)
    assert report.status == "ok"
    cell = report.cells[0]
    assert cell.diagnostics["xt_gap"] <= 1e-8
    assert cell.diagnostics["velocity_jacobian_defect"] > 0
    assert len(report.tables["ensemble"]) == 36 * 5
    assert cell.diagnostics["continuity_residual"] >= 0.0
    assert report.artifacts["map"]["matrix"] is not None


def test_engine_dynamic_reports_continuity_on_grid():
    fixture = {"gaussian": dict(GAUSSIAN["gaussian"], closed_form=False)}
    config = build_config({"experiment": "dynamic", "fixture": fixture, "cost": {"epsilon": 0.1}})
    report = ExperimentEngine().execute(config)
    assert report.status == "ok"
    cell = report.cells[0]
    assert cell.diagnostics["continuity_window"] == pytest.approx([0.45, 0.55])
    assert math.isfinite(cell.diagnostics["continuity_residual"])
    assert cell.diagnostics["continuity_residual"] >= 0.0
    assert "velocity_jacobian_defect" not in cell.diagnostics


@pytest.mark.parametrize("error", [np.linalg.LinAlgError("singular matrix"), ValueError("bad value")])
def test_engine_records_numeric_failures(monkeypatch, error):
    def failing(config, instance):
        raise error

    engine = ExperimentEngine()
    monkeypatch.setitem(engine._handlers, "solve", failing)
    report = engine.execute(build_config({"experiment": "solve", "fixture": GAUSSIAN}))
    assert report.status == "error"
    assert report.error == str(error)
    assert report.config["experiment"] == "solve"



def test_engine_kr_experiment():
    config = build_config({"experiment": "kr", "fixture": GAUSSIAN})
    report = ExperimentEngine().execute(config)
    assert report.status == "ok"
    cell = report.cells[0]
    assert cell.epsilon == 0.0
    assert cell.diagnostics["monotone"] is True
    assert "triangular_map" in report.artifacts


def test_engine_ordering_permutes_coordinates():
    config = build_config({"experiment": "solve", "fixture": GAUSSIAN, "ordering": [1, 0]})
    engine = ExperimentEngine()
    instance = engine.build_instance(config)
    assert instance.name.endswith("-ordered")
    np.testing.assert_allclose(instance.target_gaussian.covariance, [[2.0, 1.0], [1.0, 2.0]])


def test_engine_async_run_matches_execute():
    config = build_config({"experiment": "sweep-hard", "fixture": GAUSSIAN, "cost": {"epsilons": [1.0, 0.01]}})
    engine = ExperimentEngine()
    report = asyncio.run(engine.run(config))
    assert [cell.epsilon for cell in report.cells] == [1.0, 0.01]
    assert report.distances() == engine.execute(config).distances()
