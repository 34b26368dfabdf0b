"""
Движок экспериментов - выбор эксперимента по конфигурации и сборка отчёта
"""
import asyncio
import math
from typing import Callable, Dict, Tuple

import numpy as np

from config import DEFAULT_EPSILONS, DEFAULT_LAMBDAS, THREADS
from engine.diagram import commutative_diagram
from engine.fixtures import Instance, apply_ordering, build_fixture
from engine.solvers import soft_map, soft_solve, timed
from engine.sweeps import (
    diagonal_sweep,
    kl_decay_curve,
    stability_experiment,
    sweep_hard_epsilon,
    sweep_soft,
)
from storage.models import SweepCell, SweepReport
from storage.serializers import (
    affine_map_to_dict,
    coupling_to_dict,
    diagram_to_dict,
    distance_rows,
    ensemble_rows,
    soft_solution_to_dict,
    triangular_map_to_dict,
)
from transport.cost import WeightedCost, cost_matrix
from transport.dynamic import (
    ParticleEnsemble,
    action,
    continuity_residual,
    displacement_interpolate,
    velocity_jacobian_defect,
    xt_optimality_check,
)
from transport.errors import SolverError, TransportError
from transport.kr import brenier_gaussian_weighted, kr_jacobian_identity_check, kr_map_grid, kr_plan_discrete, kr_reference_map
from transport.measures import GridSpec
from transport.ot_exact import barycentric_map, map_distance_l2, plan_cost, slackness_residual, solve_exact
from transport.ot_soft import el_residual, resolve_consistency
from utils.config_utils import RunConfig, config_echo
from utils.logger import logger


class ExperimentEngine:
    """Запуск экспериментов по RunConfig"""

    def __init__(self, threads: int = THREADS):
        self.threads = threads
        self._handlers: Dict[str, Callable[[RunConfig, Instance], SweepReport]] = {
            "solve": self._solve,
            "kr": self._kr,
            "sweep-hard": self._sweep_hard,
            "sweep-soft": self._sweep_soft,
            "diagram": self._diagram,
            "kl-decay": self._kl_decay,
            "dynamic": self._dynamic,
            "stability": self._stability,
            "diagonal": self._diagonal,
        }

    def build_instance(self, config: RunConfig) -> Instance:
        """Фикстура из конфигурации, с перестановкой координат если задана"""
        instance = build_fixture(config.fixture, config.seed)
        if config.ordering is not None:
            instance = apply_ordering(instance, config.ordering)
        return instance

    def execute(self, config: RunConfig) -> SweepReport:
        """
        Выполнить эксперимент синхронно

        Ошибка всего эксперимента не пробрасывается, а записывается в отчёт,
        чтобы частичные результаты можно было сохранить.
        """
        handler = self._handlers[config.experiment]
        logger.info(f"Эксперимент {config.experiment}: потоков {self.threads}")
        try:
            instance = self.build_instance(config)
            report = handler(config, instance)
        except (TransportError, np.linalg.LinAlgError, ValueError) as e:
            logger.error(f"Эксперимент {config.experiment} завершился ошибкой: {e}")
            report = SweepReport(experiment=config.experiment, instance={}, status="error", error=str(e))
        report.config = config_echo(config)
        return report

    async def run(self, config: RunConfig) -> SweepReport:
        """Выполнить эксперимент в отдельном потоке"""
        return await asyncio.to_thread(self.execute, config)

    @staticmethod
    def _single(config: RunConfig, instance: Instance, cell: SweepCell) -> SweepReport:
        return SweepReport(
            experiment=config.experiment,
            instance=instance.descriptor(),
            epsilons=[cell.epsilon],
            lambdas=[] if cell.lam is None else [cell.lam],
            cells=[cell],
        )

    def _solve(self, config: RunConfig, instance: Instance) -> SweepReport:
        """Одно решение: жёсткое, если не задан λ и не выбран мягкий решатель"""
        source, target = instance.source, instance.target
        epsilon = config.epsilon
        C = cost_matrix(WeightedCost(epsilon, instance.dimension), source.support, target.support)
        solver = config.solver
        soft = solver.lam is not None or solver.kind != "exact"

        if not soft:
            (plan, value), seconds = timed(lambda: solve_exact(source, target, C))
            cell = SweepCell(epsilon=epsilon, objective=value, transport_term=value, seconds=seconds)
            cell.map_distance = map_distance_l2(barycentric_map(plan), kr_reference_map(source, target), source)
            cell.diagnostics["slackness_residual"] = slackness_residual(plan, C)
            report = self._single(config, instance, cell)
            report.artifacts["plan"] = coupling_to_dict(plan)
            return report

        lam = math.inf if solver.kind == "sinkhorn" else solver.lam
        if lam is None:
            raise SolverError(f"solver '{solver.kind}' needs solver.lambda")
        solution, seconds = timed(lambda: soft_solve(source, target, C, lam, solver, epsilon))
        cell = SweepCell(
            epsilon=epsilon,
            lam=lam,
            objective=solution.objective,
            kl_term=solution.kl_term,
            transport_term=solution.transport_term,
            seconds=seconds,
        )
        cell.map_distance = map_distance_l2(soft_map(solution), kr_reference_map(source, target), source)
        if math.isfinite(lam):
            cell.el_residual = el_residual(solution, target, C)
        cell.resolve_gap = resolve_consistency(solution, C)
        cell.diagnostics.update(solver=solution.solver, iterations=solution.iterations, residual=solution.residual)
        report = self._single(config, instance, cell)
        report.artifacts["soft_solution"] = soft_solution_to_dict(solution)
        return report

    def _kr(self, config: RunConfig, instance: Instance) -> SweepReport:
        """KR: на сетках - треугольное отображение, иначе - дискретный план"""
        cell = SweepCell(epsilon=0.0)
        report = self._single(config, instance, cell)
        plan = kr_plan_discrete(instance.source, instance.target)
        C = cost_matrix(WeightedCost(1.0, instance.dimension), instance.source.support, instance.target.support)
        cell.objective = cell.transport_term = plan_cost(plan, C)
        report.artifacts["plan"] = coupling_to_dict(plan)
        if instance.source_density is not None and instance.target_density is not None:
            kr_map, cell.seconds = timed(lambda: kr_map_grid(instance.source_density, instance.target_density))
            cell.diagnostics["monotone"] = kr_map.is_monotone()
            cell.diagnostics["jacobian_identity"] = kr_jacobian_identity_check(
                kr_map, instance.source_density, instance.target_density
            )
            report.artifacts["triangular_map"] = triangular_map_to_dict(kr_map)
        return report

    def _sweep_hard(self, config: RunConfig, instance: Instance) -> SweepReport:
        return sweep_hard_epsilon(instance, config.epsilons, self.threads)

    def _sweep_soft(self, config: RunConfig, instance: Instance) -> SweepReport:
        return sweep_soft(instance, config.epsilons, config.solver.lambdas, config.solver, self.threads)

    def _diagram(self, config: RunConfig, instance: Instance) -> SweepReport:
        diagram = commutative_diagram(instance, config.epsilons, config.solver.lambdas, config.solver)
        cell = SweepCell(epsilon=diagram.epsilon, lam=diagram.lam)
        cell.map_distance = max(diagram.distance(label, "D") for label in ("A", "B", "C"))
        cell.diagnostics.update(
            distances=diagram.distances.tolist(),
            discretization_gap=diagram.discretization_gap,
        )
        report = self._single(config, instance, cell)
        report.epsilons = list(config.epsilons)
        report.lambdas = list(config.solver.lambdas)
        report.artifacts["diagram"] = diagram_to_dict(diagram)
        report.tables["distances"] = distance_rows(diagram)
        return report

    def _kl_decay(self, config: RunConfig, instance: Instance) -> SweepReport:
        return kl_decay_curve(instance, config.epsilon, config.solver.lambdas, config.solver)

    def _dynamic(self, config: RunConfig, instance: Instance) -> SweepReport:
        """Интерполяция смещений по оптимальному отображению при заданном ε"""
        epsilon = config.epsilon
        cost = WeightedCost(epsilon, instance.dimension)
        source, target = instance.source, instance.target
        cell = SweepCell(epsilon=epsilon)
        report = self._single(config, instance, cell)

        if instance.closed_form and instance.has_gaussians:
            transport_map = brenier_gaussian_weighted(instance.source_gaussian, instance.target_gaussian, cost)
            cell.diagnostics["velocity_jacobian_defect"] = velocity_jacobian_defect(transport_map, source.support, 1e-3, config.t)
            report.artifacts["map"] = affine_map_to_dict(transport_map)
        else:
            C = cost_matrix(cost, source.support, target.support)
            plan, value = solve_exact(source, target, C)
            transport_map = barycentric_map(plan)
            cell.diagnostics["plan_cost"] = value

        ensemble = displacement_interpolate(transport_map, source, config.times)
        cell.objective = cell.transport_term = action(ensemble, cost)
        cell.diagnostics["xt_gap"] = xt_optimality_check(source, ensemble, config.t, cost)
        window = _time_window(config.t)
        nearby = displacement_interpolate(transport_map, source, [window[0], config.t, window[1]])
        cell.diagnostics["continuity_residual"] = continuity_residual(nearby, _continuity_grid(instance, nearby), window)
        cell.diagnostics["continuity_window"] = list(window)
        report.tables["ensemble"] = ensemble_rows(ensemble)
        return report

    def _stability(self, config: RunConfig, instance: Instance) -> SweepReport:
        return stability_experiment(instance, config.bandwidths, config.epsilons, self.threads)

    def _diagonal(self, config: RunConfig, instance: Instance) -> SweepReport:
        schedule = config.schedule or list(zip(DEFAULT_EPSILONS, DEFAULT_LAMBDAS))
        return diagonal_sweep(instance, schedule, config.solver, self.threads)


def _time_window(t: float) -> Tuple[float, float]:
    """Окно ±δ вокруг t внутри (0, 1)"""
    delta = min(0.05, t / 2, (1.0 - t) / 2)
    return t - delta, t + delta


def _continuity_grid(instance: Instance, ensemble: ParticleEnsemble) -> GridSpec:
    """Сетка на размахе частиц окна с разрешением сеток экземпляра, иначе 17 узлов по оси"""
    points = ensemble.positions.reshape(-1, ensemble.dimension)
    grids = [grid for grid in (instance.source_grid, instance.target_grid) if grid is not None]
    if grids:
        counts = [max(grid.shape[axis] for grid in grids) for axis in range(instance.dimension)]
    else:
        counts = [65 if instance.dimension == 1 else 17] * instance.dimension
    lows, highs = points.min(axis=0), points.max(axis=0)
    margin = 0.05 * (highs - lows) + 1e-6
    return GridSpec.uniform(lows - margin, highs + margin, counts)
