"""
Тесты экспериментов: развёртки, убывание KL, диаграмма, устойчивость
"""
import math

import numpy as np
import pytest

from engine.diagram import commutative_diagram, marginal_agreement
from engine.fixtures import gaussian_fixture, identical_instance, two_atom_fixture
from engine.sweeps import (
    FAR_FROM_TARGET,
    diagonal_sweep,
    kl_decay_curve,
    soft_hard_gap,
    stability_experiment,
    sweep_hard_epsilon,
    sweep_soft,
)
from storage.serializers import report_to_dict
from transport.cost import WeightedCost, cost_matrix
from transport.errors import MeasureError
from transport.kr import kr_plan_discrete
from transport.ot_exact import solve_exact
from utils.config_utils import SolverSpec

ORACLE = SolverSpec()
KL_LAMBDAS = (1.0, 10.0, 1e2, 1e3)


@pytest.fixture(scope="module")
def gaussian_grid_fixture():
    return gaussian_fixture(nodes=16, closed_form=False)


def test_closed_form_sweep_approaches_kr():
    report = sweep_hard_epsilon(gaussian_fixture(), [1.0, 1e-1, 1e-2, 1e-4])
    assert report.status == "ok"
    distances = report.distances()
    assert all(a > b for a, b in zip(distances, distances[1:]))
    assert distances[-1] < 1e-3
    assert report.cell(1e-4).diagnostics["upper_defect"] < 1e-3


def test_grid_sweep_approaches_kr(gaussian_grid_fixture):
    report = sweep_hard_epsilon(gaussian_grid_fixture, [1.0, 1e-3], closed_form=False, agreement_prefixes=())
    assert report.status == "ok"
    assert report.cell(1e-3).map_distance < 0.25 * report.cell(1.0).map_distance
    assert report.cell(1e-3).diagnostics["slackness_residual"] <= 1e-9


def test_identical_measures_give_zero_distances():
    instance = identical_instance(gaussian_fixture(nodes=6, closed_form=False))
    report = sweep_hard_epsilon(instance, [1.0, 1e-2])
    for cell in report.cells:
        assert cell.map_distance == pytest.approx(0.0, abs=1e-12)
        assert cell.objective == pytest.approx(0.0, abs=1e-14)
        assert cell.marginal_agreement[1] == pytest.approx(0.0, abs=1e-7)


def test_soft_sweep_with_huge_lambda_matches_hard():
    instance = two_atom_fixture()
    report = sweep_soft(instance, [1.0], [1e9], ORACLE)
    cell = report.cell(1.0, 1e9)
    assert cell.objective == pytest.approx(4.0, abs=1e-6)
    assert cell.map_distance == pytest.approx(0.0, abs=1e-6)
    assert cell.diagnostics["distance_to_target_kr"] == pytest.approx(0.0, abs=1e-6)
    assert cell.resolve_gap <= 1e-6
    assert not cell.flags


def test_soft_sweep_flags_tiny_lambda():
    report = sweep_soft(two_atom_fixture(), [1.0], [1e-9], ORACLE)
    cell = report.cells[0]
    assert cell.kl_term == pytest.approx(math.log(2), abs=1e-9)
    assert FAR_FROM_TARGET in cell.flags
    assert cell.diagnostics["distance_to_target_kr"] > 0.1


def test_soft_sweep_cells_are_sorted():
    report = sweep_soft(two_atom_fixture(), [1e-2, 1.0], [10.0, 1.0], ORACLE, threads=2)
    keys = [(cell.epsilon, cell.lam) for cell in report.cells]
    assert keys == [(1.0, 1.0), (1.0, 10.0), (1e-2, 1.0), (1e-2, 10.0)]


def test_kl_decay_on_two_atoms():
    report = kl_decay_curve(two_atom_fixture(), 1.0, KL_LAMBDAS, ORACLE)
    rows = report.tables["kl_decay"]
    assert [row["lambda"] for row in rows] == list(KL_LAMBDAS)
    for row in rows:
        assert row["bound"] == pytest.approx(14.0 / row["lambda"])
        assert row["kl"] <= row["bound"] + 1e-6
    kls = [row["kl"] for row in rows]
    assert all(a >= b - 1e-12 for a, b in zip(kls, kls[1:]))


def test_kl_decay_on_gaussian_grid(gaussian_grid_fixture):
    solver = SolverSpec(kind="semi-relaxed", eta_final=0.1, tolerance=1e-6, max_iterations=20000)
    report = kl_decay_curve(gaussian_grid_fixture, 1.0, KL_LAMBDAS, solver)
    assert report.status == "ok"
    rows = report.tables["kl_decay"]
    for row in rows:
        assert row["kl"] <= row["bound"] + 1e-6
    kls = [row["kl"] for row in rows]
    assert all(a >= b - 1e-5 for a, b in zip(kls, kls[1:]))



def test_kl_decays_at_least_linearly_on_sixteen_atoms():
    instance = gaussian_fixture(nodes=4, closed_form=False)
    assert instance.source.size == instance.target.size == 16
    report = kl_decay_curve(instance, 1.0, (10.0, 1e2, 1e3), ORACLE)
    kl = {row["lambda"]: row["kl"] for row in report.tables["kl_decay"]}
    assert kl[10.0] > 0.0
    assert kl[1e3] <= kl[1e2] <= kl[10.0]
    assert kl[1e3] <= 2 * kl[10.0] / 10



def test_soft_hard_gap():
    instance = two_atom_fixture()
    gaps = [soft_hard_gap(instance.source, instance.target, 1.0, lam) for lam in (1e-2, 1.0, 1e6)]
    assert all(gap >= -1e-9 for gap in gaps)
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[2] <= 1e-3 * 4.0


def test_commutative_diagram():
    diagram = commutative_diagram(gaussian_fixture(), [1e-4], [1e6], ORACLE)
    assert diagram.epsilon == 1e-4 and diagram.lam == 1e6
    assert diagram.distances.shape == (4, 4)
    np.testing.assert_allclose(diagram.distances, diagram.distances.T)
    for corner in ("A", "B", "C"):
        assert diagram.distance(corner, "D") <= 5e-2
    assert diagram.distance("A", "B") <= 1e-1
    assert diagram.distance("A", "D") <= 1e-1
    assert math.isfinite(diagram.discretization_gap) and diagram.discretization_gap >= 0.0


def test_commutative_diagram_on_atoms():
    instance = gaussian_fixture(nodes=6, closed_form=False)
    diagram = commutative_diagram(instance, [1e-4, 1e-2], [1e2, 1e6], ORACLE)
    assert diagram.discretization_gap == 0.0
    for label in ("A", "B", "C", "D"):
        np.testing.assert_allclose(diagram.corners[label].points, instance.source.support)
    assert diagram.distance("A", "B") <= 5e-2
    assert diagram.distance("C", "D") <= 5e-2



def test_marginal_agreement():
    instance = gaussian_fixture(nodes=4, closed_form=False)
    source, target = instance.source, instance.target
    plan, _ = solve_exact(source, target, cost_matrix(WeightedCost(1e-4, 2), source.support, target.support))
    reference = kr_plan_discrete(source, target)
    assert marginal_agreement(reference, reference, 2) == pytest.approx(0.0, abs=1e-12)
    assert marginal_agreement(plan, reference, 1) >= 0.0
    with pytest.raises(MeasureError, match=r"prefix length must lie in 1\.\.2"):
        marginal_agreement(plan, reference, 3)
    other = gaussian_fixture(nodes=3, closed_form=False)
    with pytest.raises(MeasureError, match="support mismatch"):
        marginal_agreement(plan, kr_plan_discrete(other.source, other.target), 1)


def test_stability_halves_distance(gaussian_grid_fixture):
    report = stability_experiment(gaussian_grid_fixture, [0.5, 0.2, 0.05], [1e-1, 1e-2, 1e-3])
    assert report.status == "ok"
    rows = report.tables["stability"]
    assert [row["bandwidth"] for row in rows] == [0.5, 0.2, 0.05]
    assert rows[-1]["map_distance"] < 0.5 * rows[0]["map_distance"]


def test_stability_rejects_mismatched_schedule(gaussian_grid_fixture):
    with pytest.raises(MeasureError):
        stability_experiment(gaussian_grid_fixture, [0.5, 0.2], [1e-1])


def test_diagonal_sweep_reaches_kr():
    schedule = [(1.0, 1.0), (1e-1, 1e2), (1e-2, 1e6)]
    report = diagonal_sweep(two_atom_fixture(), schedule, ORACLE)
    distances = report.distances()
    assert distances[-1] < distances[0]
    assert distances[-1] <= 1e-3


def test_reports_are_deterministic():
    first = report_to_dict(sweep_soft(two_atom_fixture(), [1.0, 0.1], [1.0, 1e2], ORACLE))
    second = report_to_dict(sweep_soft(two_atom_fixture(), [1.0, 0.1], [1.0, 1e2], ORACLE, threads=2))
    assert first == second
