"""
Преобразование мер, планов, отображений и отчётов в JSON-совместимые структуры
"""
import math
from dataclasses import asdict
from typing import Any, Dict, List

import numpy as np

from config import REPORT_SCHEMA_VERSION
from transport.dynamic import ParticleEnsemble
from transport.errors import MeasureError
from transport.kr import AffineMap, TriangularMap
from transport.measures import DiscreteMeasure, GridDensity, GridSpec, build_grid_density
from transport.ot_exact import Coupling, MapTable
from transport.ot_soft import SoftSolution
from storage.models import DiagramResult, SweepReport


def clean(value: Any) -> Any:
    """numpy -> python; inf -> "inf", nan -> None"""
    if isinstance(value, dict):
        return {str(k): clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [clean(v) for v in value]
    if isinstance(value, np.ndarray):
        return clean(value.tolist())
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return None
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return value
    return value


def measure_to_dict(measure) -> Dict[str, Any]:
    if isinstance(measure, GridDensity):
        return {
            "kind": "grid_density",
            "axes": clean(list(measure.grid.axes)),
            "values": clean(measure.values.ravel()),
        }
    if isinstance(measure, DiscreteMeasure):
        return {"kind": "discrete_measure", "support": clean(measure.support), "weights": clean(measure.weights)}
    raise MeasureError(f"unsupported measure type {type(measure).__name__}")


def measure_from_dict(data: Dict[str, Any]):
    kind = data.get("kind")
    if kind == "grid_density":
        grid = GridSpec(tuple(np.asarray(a, dtype=float) for a in data["axes"]))
        return build_grid_density(grid, np.asarray(data["values"], dtype=float))
    if kind == "discrete_measure":
        return DiscreteMeasure.normalized(np.asarray(data["support"], dtype=float), np.asarray(data["weights"], dtype=float))
    raise MeasureError(f"unknown measure kind '{kind}'")


def coupling_to_dict(plan: Coupling) -> Dict[str, Any]:
    potentials = None
    if plan.potentials is not None:
        potentials = {"source": clean(plan.potentials[0]), "target": clean(plan.potentials[1])}
    return {
        "kind": "coupling",
        "shape": list(plan.shape),
        "triplets": [[i, j, m] for i, j, m in plan.triplets()],
        "potentials": potentials,
    }


def map_table_to_dict(table: MapTable) -> Dict[str, Any]:
    return {"kind": "map_table", "points": clean(table.points), "images": clean(table.images)}


def affine_map_to_dict(affine: AffineMap) -> Dict[str, Any]:
    return {"kind": "affine_map", "matrix": clean(affine.matrix), "offset": clean(affine.offset)}


def triangular_map_to_dict(kr_map: TriangularMap) -> Dict[str, Any]:
    return {
        "kind": "triangular_map",
        "axes": clean(list(kr_map.grid.axes)),
        "components": [clean(table) for table in kr_map.components],
    }


def soft_solution_to_dict(solution: SoftSolution) -> Dict[str, Any]:
    return {
        "kind": "soft_solution",
        "solver": solution.solver,
        "lambda": clean(solution.lam),
        "epsilon": clean(solution.epsilon),
        "triplets": [[i, j, m] for i, j, m in solution.plan.triplets()],
        "phi": clean(solution.potential),
        "g": clean(solution.density_ratio),
        "normalizer": clean(solution.normalizer),
        "objective": clean(solution.objective),
        "kl_term": clean(solution.kl_term),
        "transport_term": clean(solution.transport_term),
        "eta_trace": clean(solution.eta_trace),
        "iterations": solution.iterations,
        "residual": clean(solution.residual),
    }


def report_to_dict(report: SweepReport) -> Dict[str, Any]:
    return {
        "schema_version": REPORT_SCHEMA_VERSION,
        "experiment": report.experiment,
        "instance": clean(report.instance),
        "epsilons": clean(report.epsilons),
        "lambdas": clean(report.lambdas),
        "cells": [clean(asdict(cell)) for cell in report.cells],
        "tables": clean(report.tables),
        "status": report.status,
        "error": report.error,
        "config": clean(report.config),
    }


def cell_rows(report: SweepReport) -> List[Dict[str, Any]]:
    """Плоские строки cells.csv, по одной на ячейку"""
    prefixes = sorted({k for cell in report.cells for k in cell.marginal_agreement})
    rows = []
    for cell in report.cells:
        row = {
            "epsilon": cell.epsilon,
            "lambda": cell.lam,
            "bandwidth": cell.bandwidth,
            "objective": cell.objective,
            "kl_term": cell.kl_term,
            "transport_term": cell.transport_term,
            "map_distance": cell.map_distance,
            "el_residual": cell.el_residual,
            "resolve_gap": cell.resolve_gap,
        }
        for k in prefixes:
            row[f"marginal_agreement_{k}"] = cell.marginal_agreement.get(k)
        row.update({"seconds": cell.seconds, "flags": ";".join(cell.flags), "status": cell.status})
        rows.append(clean(row))
    return rows


def ensemble_rows(ensemble: ParticleEnsemble) -> List[Dict[str, Any]]:
    """Траектории: время, номер частицы, положение, скорость"""
    d = ensemble.dimension
    rows = []
    for t in ensemble.times:
        positions = ensemble.positions_at(t)
        for index in range(ensemble.size):
            row = {"time": float(t), "particle": index}
            row.update({f"x{k}": float(positions[index, k]) for k in range(d)})
            row.update({f"v{k}": float(ensemble.velocities[index, k]) for k in range(d)})
            rows.append(row)
    return rows


def diagram_to_dict(diagram: DiagramResult) -> Dict[str, Any]:
    return {
        "epsilon": diagram.epsilon,
        "lambda": clean(diagram.lam),
        "labels": list(diagram.labels),
        "distances": clean(diagram.distances),
        "discretization_gap": diagram.discretization_gap,
        "corners": {label: map_table_to_dict(table) for label, table in diagram.corners.items()},
    }


def distance_rows(diagram: DiagramResult) -> List[Dict[str, Any]]:
    rows = []
    for i, label in enumerate(diagram.labels):
        row = {"corner": label}
        row.update({other: float(diagram.distances[i, j]) for j, other in enumerate(diagram.labels)})
        rows.append(row)
    return rows
