"""
Точная задача Канторовича: сетевой симплекс POT (ot.emd)
"""
import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
import ot
from scipy import sparse

from config import EXACT_MAX_ATOMS
from transport.errors import CostError, MeasureError, SolverError
from transport.measures import DiscreteMeasure
from utils.logger import logger

@dataclass(frozen=True, eq=False)
class Coupling:
    """План перевозки: разреженная матрица масс (строки - атомы источника, столбцы - атомы цели)"""
    source: DiscreteMeasure
    target_support: np.ndarray
    mass: sparse.csr_matrix
    potentials: Optional[Tuple[np.ndarray, np.ndarray]] = None

    def __post_init__(self):
        mass = sparse.csr_matrix(self.mass, dtype=float)
        target_support = np.asarray(self.target_support, dtype=float)
        if target_support.ndim == 1:
            target_support = target_support[:, None]
        if mass.shape != (self.source.size, target_support.shape[0]):
            raise MeasureError("shape mismatch")
        if mass.nnz and mass.data.min() < 0:
            raise MeasureError("negative mass in coupling")
        rows = np.asarray(mass.sum(axis=1)).ravel()
        if np.max(np.abs(rows - self.source.weights)) > 1e-9:
            raise MeasureError("coupling row sums differ from source weights")
        object.__setattr__(self, "mass", mass)
        object.__setattr__(self, "target_support", target_support)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.mass.shape

    def dense(self) -> np.ndarray:
        return self.mass.toarray()

    def column_sums(self) -> np.ndarray:
        return np.asarray(self.mass.sum(axis=0)).ravel()

    def triplets(self) -> List[Tuple[int, int, float]]:
        coo = self.mass.tocoo()
        order = np.lexsort((coo.col, coo.row))
        return [(int(coo.row[k]), int(coo.col[k]), float(coo.data[k])) for k in order]


@dataclass(frozen=True, eq=False)
class MapTable:
    """Отображение, заданное образами в точках носителя источника"""
    points: np.ndarray
    images: np.ndarray

    def __post_init__(self):
        points = np.asarray(self.points, dtype=float)
        images = np.asarray(self.images, dtype=float)
        if points.ndim == 1:
            points = points[:, None]
        if images.ndim == 1:
            images = images[:, None]
        if points.shape != images.shape:
            raise MeasureError("shape mismatch")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "images", images)

    def displacement(self) -> np.ndarray:
        return self.images - self.points


@dataclass
class ExactResult:
    """Оптимальный план транспортной задачи и двойственные потенциалы"""
    plan: np.ndarray
    u: np.ndarray
    v: np.ndarray
    value: float


def exact_transport(a: np.ndarray, b: np.ndarray, C: np.ndarray, max_iterations: Optional[int] = None) -> ExactResult:
    """
    Сетевой симплекс на массивах

    Args:
        a: Массы источника
        b: Массы цели (та же сумма)
        C: Матрица стоимости n x m
        max_iterations: Предел числа итераций симплекса

    Returns:
        Оптимальный план с двойственными потенциалами
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    C = np.ascontiguousarray(C, dtype=float)
    n, m = a.size, b.size
    if C.shape != (n, m):
        raise CostError("shape mismatch")
    if max(n, m) > EXACT_MAX_ATOMS:
        raise SolverError(
            f"instance {n}x{m} exceeds the exact solver limit of {EXACT_MAX_ATOMS} atoms; use the entropic solver"
        )
    if not np.all(np.isfinite(C)):
        raise CostError("cost matrix must be finite")
    if max_iterations is None:
        max_iterations = max(100000, 10 * n * m)

    plan, log = ot.emd(a, b, C, numItermax=max_iterations, log=True)
    if log["result_code"] != 1:
        raise SolverError(f"network simplex failed: {log['warning']}")
    plan = np.maximum(np.asarray(plan, dtype=float), 0.0)
    value = math.fsum((plan * C).ravel())
    logger.debug(f"Сетевой симплекс {n}x{m}: значение {value:.6g}")
    return ExactResult(plan, np.asarray(log["u"], dtype=float), np.asarray(log["v"], dtype=float), value)


def solve_exact(source: DiscreteMeasure, target: DiscreteMeasure, C: np.ndarray) -> Tuple[Coupling, float]:
    """Оптимальный план между дискретными мерами"""
    C = np.asarray(C, dtype=float)
    if C.shape != (source.size, target.size):
        raise CostError("shape mismatch")
    result = exact_transport(source.weights, target.weights, C)
    mass = sparse.csr_matrix(result.plan)
    mass.eliminate_zeros()
    plan = Coupling(source, target.support, mass, potentials=(result.u, result.v))
    return plan, result.value


def slackness_residual(plan: Coupling, C: np.ndarray) -> float:
    """Нарушение допустимости и дополняющей нежёсткости двойственных потенциалов"""
    if plan.potentials is None:
        raise SolverError("plan carries no dual potentials")
    C = np.asarray(C, dtype=float)
    if C.shape != plan.shape:
        raise CostError("shape mismatch")
    u, v = plan.potentials
    reduced = C - u[:, None] - v[None, :]
    coo = plan.mass.tocoo()
    on_support = reduced[coo.row[coo.data > 0], coo.col[coo.data > 0]]
    feasibility = max(0.0, -float(reduced.min()))
    slackness = float(np.max(np.abs(on_support))) if on_support.size else 0.0
    return max(feasibility, slackness)


def barycentric_map(plan: Coupling) -> MapTable:
    """T(x_i) = Σ_j γ_ij y_j / μ_i"""
    weights = np.asarray(plan.mass.sum(axis=1)).ravel()
    if np.any(plan.source.weights <= 0) or np.any(weights <= 0):
        raise MeasureError("undefined barycenter")
    images = np.asarray(plan.mass @ plan.target_support) / weights[:, None]
    return MapTable(plan.source.support, images)


def plan_marginals(plan: Coupling) -> Tuple[DiscreteMeasure, DiscreteMeasure]:
    """Маргиналы плана как меры на носителях источника и цели"""
    rows = np.asarray(plan.mass.sum(axis=1)).ravel()
    return (
        DiscreteMeasure.normalized(plan.source.support, rows),
        DiscreteMeasure.normalized(plan.target_support, plan.column_sums()),
    )


def plan_cost(plan: Coupling, C: np.ndarray) -> float:
    """Σ γ_ij C_ij"""
    C = np.asarray(C, dtype=float)
    if C.shape != plan.shape:
        raise CostError("shape mismatch")
    coo = plan.mass.tocoo()
    return math.fsum(coo.data * C[coo.row, coo.col])


def map_distance_l2(map_a: MapTable, map_b: MapTable, source: DiscreteMeasure) -> float:
    """Расстояние между отображениями в L²(μ)"""
    for table in (map_a, map_b):
        if table.points.shape != source.support.shape or not np.allclose(
            table.points, source.support, rtol=0, atol=1e-12
        ):
            raise MeasureError("support mismatch")
    squared = np.sum((map_a.images - map_b.images) ** 2, axis=1)
    return math.sqrt(max(math.fsum(source.weights * squared), 0.0))
