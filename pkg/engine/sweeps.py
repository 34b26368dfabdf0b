"""
Эксперименты-развёртки: ε, (ε, λ), убывание KL, устойчивость, диагональ
"""
import math
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.interpolate import NearestNDInterpolator, RegularGridInterpolator

from config import DENSITY_FLOOR_MASS, FAR_FROM_TARGET_KL
from engine.diagram import marginal_agreement
from engine.fixtures import Instance
from engine.solvers import run_cells, soft_map, soft_solve
from storage.models import SweepCell, SweepReport
from transport.cost import WeightedCost, cost_matrix
from transport.errors import MeasureError, SolverError
from transport.kr import (
    AffineMap,
    brenier_gaussian_weighted,
    gaussian_map_distance,
    kr_map_gaussian,
    kr_plan_discrete,
    kr_reference_map,
)
from transport.measures import DiscreteMeasure, GaussianMeasure, GridSpec, atomize, mollify, second_moment
from transport.ot_exact import Coupling, MapTable, barycentric_map, map_distance_l2, slackness_residual, solve_exact
from transport.ot_soft import (
    el_residual,
    exact_soft_oracle,
    perturbed_target_formula,
    resolve_consistency,
)
from utils.config_utils import SolverSpec
from utils.logger import logger

FAR_FROM_TARGET = "far-from-target regime"


def _affine_cost(transport_map: AffineMap, gaussian: GaussianMeasure, cost: WeightedCost) -> float:
    """E_μ c_ε(x, T(x)) для аффинного T и гауссовой μ"""
    W = np.diag(cost.weights)
    D = transport_map.matrix - np.eye(transport_map.dimension)
    shift = D @ gaussian.mean + transport_map.offset
    return float(np.trace(W @ D @ gaussian.covariance @ D.T) + shift @ W @ shift)


def _agreements(plan: Coupling, reference: Coupling, prefixes: Optional[Sequence[int]], cell: SweepCell) -> None:
    prefixes = range(1, plan.source.dimension + 1) if prefixes is None else prefixes
    for k in prefixes:
        try:
            cell.marginal_agreement[k] = marginal_agreement(plan, reference, k)
        except SolverError as e:
            logger.warning(f"Сравнение маргиналов k={k} пропущено: {e}")


def _new_report(experiment: str, instance: Instance, epsilons: Sequence[float], lambdas: Sequence[float] = ()) -> SweepReport:
    return SweepReport(
        experiment=experiment,
        instance=instance.descriptor(),
        epsilons=[float(e) for e in epsilons],
        lambdas=[float(v) for v in lambdas],
    )


def _finish(report: SweepReport) -> SweepReport:
    failed = [cell for cell in report.cells if cell.status != "ok"]
    if failed:
        report.status = "error"
        report.error = failed[0].error
    return report


def sweep_hard_epsilon(
    instance: Instance,
    epsilons: Sequence[float],
    threads: int = 1,
    closed_form: Optional[bool] = None,
    agreement_prefixes: Optional[Sequence[int]] = None,
) -> SweepReport:
    """
    Жёсткая задача при убывающем ε и расстояние до KR

    Для гауссовой фикстуры в замкнутой форме сравниваются аффинные отображения
    (Бренье для c_ε против Холецкого); иначе - барицентрическое отображение
    точного плана против дискретного плана KR.
    """
    closed = instance.closed_form and instance.has_gaussians if closed_form is None else closed_form
    if closed and not instance.has_gaussians:
        raise MeasureError("closed form needs gaussian measures")
    report = _new_report("sweep-hard", instance, epsilons)
    source, target = instance.source, instance.target
    jobs: List[Tuple[SweepCell, Callable[[SweepCell], None]]] = []

    if closed:
        kr = kr_map_gaussian(instance.source_gaussian, instance.target_gaussian)

        def fill(cell: SweepCell) -> None:
            cost = WeightedCost(cell.epsilon, instance.dimension)
            brenier = brenier_gaussian_weighted(instance.source_gaussian, instance.target_gaussian, cost)
            cell.map_distance = gaussian_map_distance(brenier, kr, instance.source_gaussian)
            cell.objective = cell.transport_term = _affine_cost(brenier, instance.source_gaussian, cost)
            cell.diagnostics["upper_defect"] = brenier.upper_defect()
            cell.diagnostics["matrix"] = brenier.matrix.tolist()
    else:
        kr_plan = kr_plan_discrete(source, target)
        kr_table = kr_reference_map(source, target)

        def fill(cell: SweepCell) -> None:
            C = cost_matrix(WeightedCost(cell.epsilon, instance.dimension), source.support, target.support)
            plan, value = solve_exact(source, target, C)
            cell.map_distance = map_distance_l2(barycentric_map(plan), kr_table, source)
            cell.objective = cell.transport_term = value
            cell.diagnostics["slackness_residual"] = slackness_residual(plan, C)
            _agreements(plan, kr_plan, agreement_prefixes, cell)

    for epsilon in epsilons:
        jobs.append((SweepCell(epsilon=float(epsilon)), fill))
    report.cells = run_cells(jobs, threads)
    logger.info(f"Развёртка по ε ({instance.name}): {len(report.cells)} ячеек")
    return _finish(report)


def sweep_soft(
    instance: Instance,
    epsilons: Sequence[float],
    lambdas: Sequence[float],
    solver: SolverSpec,
    threads: int = 1,
    agreement_prefixes: Optional[Sequence[int]] = None,
) -> SweepReport:
    """
    Мягкая задача на сетке (ε, λ)

    Отображение каждой ячейки сравнивается с KR на собственный второй
    маргинал решения ν_{ε,λ}; расстояние до KR на ν пишется в диагностику.
    """
    report = _new_report("sweep-soft", instance, epsilons, lambdas)
    source, target = instance.source, instance.target
    target_kr = kr_reference_map(source, target)

    def fill(cell: SweepCell) -> None:
        C = cost_matrix(WeightedCost(cell.epsilon, instance.dimension), source.support, target.support)
        solution = soft_solve(source, target, C, cell.lam, solver, cell.epsilon)
        perturbed = DiscreteMeasure.normalized(target.support, solution.perturbed_target)
        soft_table = soft_map(solution)
        cell.objective = solution.objective
        cell.kl_term = solution.kl_term
        cell.transport_term = solution.transport_term
        cell.map_distance = map_distance_l2(soft_table, kr_reference_map(source, perturbed), source)
        if math.isfinite(solution.lam):
            cell.el_residual = el_residual(solution, target, C)
        cell.resolve_gap = resolve_consistency(solution, C)
        formula = perturbed_target_formula(solution, target, C)
        cell.diagnostics.update(
            solver=solution.solver,
            iterations=solution.iterations,
            residual=solution.residual,
            distance_to_target_kr=map_distance_l2(soft_table, target_kr, source),
            formula_disagreement=formula.disagreement,
            formula_marginal_gap=formula.marginal_gap,
            normalizer_gap=formula.normalizer_gap,
        )
        if solution.eta_trace:
            cell.diagnostics["eta_trace"] = solution.eta_trace
        if solution.kl_term > FAR_FROM_TARGET_KL:
            cell.flags.append(FAR_FROM_TARGET)
        _agreements(solution.plan, kr_plan_discrete(source, perturbed), agreement_prefixes, cell)

    jobs = [(SweepCell(epsilon=float(e), lam=float(v)), fill) for e in epsilons for v in lambdas]
    report.cells = run_cells(jobs, threads)
    logger.info(f"Развёртка по (ε, λ) ({instance.name}): {len(report.cells)} ячеек")
    return _finish(report)


def kl_decay_curve(instance: Instance, epsilon: float, lambdas: Sequence[float], solver: SolverSpec) -> SweepReport:
    """
    KL второго маргинала к ν против оценки 2M/λ

    M = второй момент μ + второй момент ν. Таблица kl_decay: lambda, kl, bound.
    """
    report = _new_report("kl-decay", instance, [epsilon], lambdas)
    source, target = instance.source, instance.target
    M = second_moment(source) + second_moment(target)
    C = cost_matrix(WeightedCost(epsilon, instance.dimension), source.support, target.support)

    def fill(cell: SweepCell) -> None:
        solution = soft_solve(source, target, C, cell.lam, solver, epsilon)
        cell.objective = solution.objective
        cell.kl_term = solution.kl_term
        cell.transport_term = solution.transport_term
        cell.diagnostics["bound"] = 2 * M / cell.lam

    report.cells = run_cells([(SweepCell(epsilon=float(epsilon), lam=float(v)), fill) for v in lambdas])
    report.tables["kl_decay"] = [
        {"lambda": cell.lam, "kl": cell.kl_term, "bound": cell.diagnostics.get("bound", 2 * M / cell.lam)}
        for cell in report.cells
    ]
    for row in report.tables["kl_decay"]:
        if row["kl"] is not None and row["kl"] > row["bound"]:
            logger.warning(f"KL {row['kl']:.3e} выше оценки {row['bound']:.3e} при λ={row['lambda']:g}")
    return _finish(report)


def soft_hard_gap(source: DiscreteMeasure, target: DiscreteMeasure, epsilon: float, lam: float) -> float:
    """OT_ε(μ, ν) минус мягкий оптимум; неотрицательно с точностью до округления"""
    C = cost_matrix(WeightedCost(epsilon, source.dimension), source.support, target.support)
    _, hard = solve_exact(source, target, C)
    soft = exact_soft_oracle(source, target, C, lam, epsilon=epsilon)
    return hard - soft.objective


def _auto_grid(measure: DiscreteMeasure, bandwidth: float) -> GridSpec:
    """Сетка [min - 4h, max + 4h]: 65 узлов в 1D, иначе 17 по оси"""
    lows = measure.support.min(axis=0) - 4 * bandwidth
    highs = measure.support.max(axis=0) + 4 * bandwidth
    return GridSpec.uniform(lows, highs, 65 if measure.dimension == 1 else 17)


def _mollified_images(
    source: DiscreteMeasure,
    target: DiscreteMeasure,
    bandwidth: float,
    epsilon: float,
    source_grid: GridSpec,
    target_grid: GridSpec,
) -> np.ndarray:
    """Образы атомов источника под отображением между сглаженными мерами"""
    smooth_source = atomize(mollify(source, bandwidth, source_grid))
    smooth_target = atomize(mollify(target, bandwidth, target_grid))
    rows = smooth_source.weights >= DENSITY_FLOOR_MASS
    cols = smooth_target.weights >= DENSITY_FLOOR_MASS
    kept_source = DiscreteMeasure.normalized(smooth_source.support[rows], smooth_source.weights[rows])
    kept_target = DiscreteMeasure.normalized(smooth_target.support[cols], smooth_target.weights[cols])
    C = cost_matrix(WeightedCost(epsilon, source.dimension), kept_source.support, kept_target.support)
    plan, _ = solve_exact(kept_source, kept_target, C)
    table = barycentric_map(plan)

    images = np.empty_like(smooth_source.support)
    images[rows] = table.images
    if not np.all(rows):
        images[~rows] = NearestNDInterpolator(table.points, table.images)(smooth_source.support[~rows])
    result = np.empty_like(source.support)
    for k in range(source.dimension):
        interpolator = RegularGridInterpolator(source_grid.axes, images[:, k].reshape(source_grid.shape))
        result[:, k] = interpolator(source.support)
    return result


def stability_experiment(
    instance: Instance,
    bandwidths: Sequence[float],
    epsilons: Sequence[float],
    threads: int = 1,
) -> SweepReport:
    """
    Устойчивость: сглаженные маргиналы и c_ε вдоль общей последовательности

    Пары (ширина, ε) берутся по порядку; ширина 0 означает решение на исходных
    атомах. Расстояние считается до KR между несглаженными мерами.
    """
    if len(bandwidths) != len(epsilons):
        raise MeasureError("bandwidth and ε lists differ in length")
    if any(b < 0 for b in bandwidths):
        raise MeasureError("invalid bandwidth")
    report = _new_report("stability", instance, epsilons)
    source, target = instance.source, instance.target
    reference = kr_reference_map(source, target)
    widest = max(bandwidths) if bandwidths else 0.0
    if widest > 0:
        source_grid = instance.source_grid or _auto_grid(source, widest)
        target_grid = instance.target_grid or _auto_grid(target, widest)

    def fill(cell: SweepCell) -> None:
        if cell.bandwidth == 0:
            C = cost_matrix(WeightedCost(cell.epsilon, instance.dimension), source.support, target.support)
            plan, value = solve_exact(source, target, C)
            images = barycentric_map(plan).images
            cell.objective = cell.transport_term = value
        else:
            images = _mollified_images(source, target, cell.bandwidth, cell.epsilon, source_grid, target_grid)
        cell.map_distance = map_distance_l2(MapTable(source.support, images), reference, source)

    jobs = [(SweepCell(epsilon=float(e), bandwidth=float(b)), fill) for b, e in zip(bandwidths, epsilons)]
    report.cells = run_cells(jobs, threads)
    report.tables["stability"] = [
        {"bandwidth": cell.bandwidth, "epsilon": cell.epsilon, "map_distance": cell.map_distance} for cell in report.cells
    ]
    return _finish(report)


def diagonal_sweep(
    instance: Instance,
    schedule: Sequence[Tuple[float, float]],
    solver: SolverSpec,
    threads: int = 1,
) -> SweepReport:
    """Мягкие решения вдоль диагональной последовательности (ε, λ) → (0, ∞)"""
    report = _new_report("diagonal", instance, [e for e, _ in schedule], [v for _, v in schedule])
    source, target = instance.source, instance.target
    reference = kr_reference_map(source, target)

    def fill(cell: SweepCell) -> None:
        C = cost_matrix(WeightedCost(cell.epsilon, instance.dimension), source.support, target.support)
        solution = soft_solve(source, target, C, cell.lam, solver, cell.epsilon)
        cell.objective = solution.objective
        cell.kl_term = solution.kl_term
        cell.transport_term = solution.transport_term
        cell.map_distance = map_distance_l2(soft_map(solution), reference, source)

    jobs = [(SweepCell(epsilon=float(e), lam=float(v)), fill) for e, v in schedule]
    report.cells = run_cells(jobs, threads)
    return _finish(report)
