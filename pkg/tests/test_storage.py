"""
Тесты хранения мер и отчётов
"""
import json
import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from storage.models import SweepCell, SweepReport
from storage.repository import MeasureRepository, ReportRepository
from storage.serializers import cell_rows, clean, report_to_dict
from transport.errors import MeasureError
from transport.measures import DiscreteMeasure, GridSpec, build_grid_density


def test_clean_converts_numpy_and_special_values():
    data = {1: np.array([1.0, math.inf]), "n": np.int64(3), "x": math.nan, "t": (np.float32(0.5),)}
    assert clean(data) == {"1": [1.0, "inf"], "n": 3, "x": None, "t": [0.5]}


def test_discrete_measure_csv(tmp_path):
    measure = DiscreteMeasure(np.array([[0.1, -2.0], [3.0, 0.25]]), np.array([0.3, 0.7]))
    path = tmp_path / "atoms.csv"
    MeasureRepository.save(measure, str(path))
    assert path.read_text(encoding="utf-8").splitlines()[0] == "x0,x1,weight"
    loaded = MeasureRepository.load(str(path))
    assert_allclose(loaded.support, measure.support)
    assert_allclose(loaded.weights, measure.weights)


def test_csv_without_header_is_normalized(tmp_path):
    path = tmp_path / "raw.csv"
    path.write_text("0,1\n1,3\n", encoding="utf-8")
    loaded = MeasureRepository.load(str(path))
    assert_allclose(loaded.weights, [0.25, 0.75])


def test_grid_density_json(tmp_path):
    grid = GridSpec.uniform([0.0, -1.0], [1.0, 1.0], [3, 4])
    density = build_grid_density(grid, np.arange(1.0, 13.0).reshape(3, 4))
    path = tmp_path / "density.json"
    MeasureRepository.save(density, str(path))
    loaded = MeasureRepository.load(str(path))
    assert loaded.grid.shape == (3, 4)
    assert_allclose(loaded.values, density.values)


def test_load_errors(tmp_path):
    with pytest.raises(MeasureError, match="measure file not found"):
        MeasureRepository.load(str(tmp_path / "absent.csv"))
    path = tmp_path / "odd.json"
    path.write_text(json.dumps({"kind": "histogram"}), encoding="utf-8")
    with pytest.raises(MeasureError, match="unknown measure kind"):
        MeasureRepository.load(str(path))


def test_write_report(tmp_path):
    cell = SweepCell(epsilon=0.1, lam=10.0, objective=1.5, flags=["far-from-target regime"])
    cell.marginal_agreement[1] = 0.25
    report = SweepReport(experiment="sweep-soft", instance={"name": "two-atom"}, epsilons=[0.1], lambdas=[10.0], cells=[cell])
    report.tables["kl_decay"] = [{"lambda": 10.0, "kl": 0.01, "bound": 1.4}]
    report.artifacts["diagram"] = {"labels": ["A", "B", "C", "D"]}

    paths = ReportRepository(str(tmp_path / "nested" / "out")).write_report(report)
    names = sorted(p.name for p in paths)
    assert names == ["cells.csv", "diagram.json", "kl_decay.csv", "report.json"]

    saved = json.loads((tmp_path / "nested" / "out" / "report.json").read_text(encoding="utf-8"))
    assert saved == report_to_dict(report)
    assert saved["cells"][0]["marginal_agreement"] == {"1": 0.25}


def test_cell_rows_flatten_agreements():
    cells = [SweepCell(epsilon=1.0), SweepCell(epsilon=0.1, lam=math.inf)]
    cells[1].marginal_agreement[2] = 0.5
    rows = cell_rows(SweepReport(experiment="sweep-hard", instance={}, cells=cells))
    assert rows[0]["marginal_agreement_2"] is None
    assert rows[1]["marginal_agreement_2"] == 0.5
    assert rows[1]["lambda"] == "inf"
    assert rows[0]["flags"] == ""
