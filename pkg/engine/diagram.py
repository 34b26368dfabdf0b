"""
Диаграмма пределов (ε → 0, λ → ∞) и сравнение планов по маргиналам
"""
import math
from typing import Dict, Sequence

import numpy as np
from scipy.spatial.distance import cdist

from engine.fixtures import Instance, gaussian_instance
from engine.solvers import soft_map, soft_solve
from storage.models import DiagramResult
from transport.cost import WeightedCost, cost_matrix
from transport.errors import MeasureError
from transport.kr import brenier_gaussian_weighted, kr_map_gaussian, kr_reference_map, soft_gaussian_weighted
from transport.measures import DiscreteMeasure
from transport.ot_exact import Coupling, MapTable, barycentric_map, exact_transport, map_distance_l2, solve_exact
from utils.config_utils import SolverSpec
from utils.logger import logger

# Массы ниже порога не участвуют в сравнении проекций
PRUNE_MASS = 1e-12


def _projected(plan: Coupling, k: int) -> DiscreteMeasure:
    """Образ плана при (x, y) ↦ (x_{:k}, y_{:k}) как мера на R^{2k}"""
    coo = plan.mass.tocoo()
    keep = coo.data > PRUNE_MASS
    points = np.hstack([plan.source.support[coo.row[keep], :k], plan.target_support[coo.col[keep], :k]])
    unique, inverse = np.unique(points, axis=0, return_inverse=True)
    masses = np.bincount(inverse.ravel(), weights=coo.data[keep], minlength=unique.shape[0])
    return DiscreteMeasure.normalized(unique, masses)


def marginal_agreement(plan_a: Coupling, plan_b: Coupling, k: int) -> float:
    """
    W₂ между проекциями двух планов на первые k координат источника и цели

    Args:
        plan_a: Первый план
        plan_b: Второй план на тех же носителях
        k: Длина префикса координат, 1..d

    Returns:
        Расстояние ≥ 0; ноль, если проекции совпадают как меры
    """
    if plan_a.shape != plan_b.shape:
        raise MeasureError("support mismatch")
    for first, second in ((plan_a.source.support, plan_b.source.support), (plan_a.target_support, plan_b.target_support)):
        if first.shape != second.shape or not np.allclose(first, second, rtol=0, atol=1e-12):
            raise MeasureError("support mismatch")
    d = plan_a.source.dimension
    if not 1 <= k <= d:
        raise MeasureError(f"prefix length must lie in 1..{d}")
    a = _projected(plan_a, k)
    b = _projected(plan_b, k)
    value = exact_transport(a.weights, b.weights, cdist(a.support, b.support, "sqeuclidean")).value
    return math.sqrt(max(value, 0.0))


def commutative_diagram(
    instance: Instance,
    epsilons: Sequence[float],
    lambdas: Sequence[float],
    solver: SolverSpec,
    coarse_nodes: int = 8,
) -> DiagramResult:
    """
    Четыре угла диаграммы при наименьшем ε и наибольшем λ

    A - мягкое решение T_{ε,λ}; B - жёсткое решение при том же ε (λ → ∞ первым);
    C - KR на собственный второй маргинал мягкого решения (ε → 0 первым);
    D - KR μ → ν. Все углы считаются в одной дискретизации. Для гауссовых фикстур
    это замкнутые формы на атомах экземпляра; дискретный мягкий решатель при этом
    запускается на грубой сетке, и его отклонение от замкнутого угла A
    возвращается как разрыв дискретизации.
    """
    epsilon = min(epsilons)
    lam = max(lambdas)
    cost = WeightedCost(epsilon, instance.dimension)
    source = instance.source
    corners: Dict[str, MapTable] = {}
    if instance.closed_form and instance.has_gaussians:
        mu, nu = instance.source_gaussian, instance.target_gaussian
        soft, perturbed = soft_gaussian_weighted(mu, nu, cost, lam)
        corners["A"] = soft.table(source.support)
        corners["B"] = brenier_gaussian_weighted(mu, nu, cost).table(source.support)
        corners["C"] = kr_map_gaussian(mu, perturbed).table(source.support)
        corners["D"] = kr_map_gaussian(mu, nu).table(source.support)

        coarse = gaussian_instance(mu, nu, coarse_nodes, name="coarse")
        C = cost_matrix(cost, coarse.source.support, coarse.target.support)
        solution = soft_solve(coarse.source, coarse.target, C, lam, solver, epsilon)
        gap = map_distance_l2(soft_map(solution), soft.table(coarse.source.support), coarse.source)
    else:
        target = instance.target
        C = cost_matrix(cost, source.support, target.support)
        solution = soft_solve(source, target, C, lam, solver, epsilon)
        perturbed_atoms = DiscreteMeasure.normalized(target.support, solution.perturbed_target)
        plan, _ = solve_exact(source, target, C)
        corners["A"] = soft_map(solution)
        corners["B"] = barycentric_map(plan)
        corners["C"] = kr_reference_map(source, perturbed_atoms)
        corners["D"] = kr_reference_map(source, target)
        gap = 0.0

    labels = ("A", "B", "C", "D")
    distances = np.zeros((4, 4))
    for i in range(4):
        for j in range(i + 1, 4):
            distances[i, j] = distances[j, i] = map_distance_l2(corners[labels[i]], corners[labels[j]], source)
    logger.info(
        f"Диаграмма ε={epsilon:g}, λ={lam:g}: B-D {distances[1, 3]:.3e}, C-D {distances[2, 3]:.3e}, "
        f"A-C {distances[0, 2]:.3e}, разрыв дискретизации {gap:.3e}"
    )
    return DiagramResult(
        corners={label: corners[label] for label in labels},
        distances=distances,
        epsilon=epsilon,
        lam=lam,
        discretization_gap=gap,
        labels=labels,
    )
