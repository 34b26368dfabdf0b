"""
Общие части экспериментов: выбор мягкого решателя, замер времени, пул ячеек
"""
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Optional, Tuple, TypeVar

import numpy as np

from config import ORACLE_MAX_ATOMS, RECORD_TIMINGS
from storage.models import SweepCell
from transport.errors import SolverError, TransportError
from transport.measures import DiscreteMeasure
from transport.ot_exact import MapTable, barycentric_map
from transport.ot_soft import (
    SoftSolution,
    annealed_semi_relaxed_sinkhorn,
    exact_soft_oracle,
    semi_relaxed_sinkhorn,
    sinkhorn,
)
from utils.config_utils import SolverSpec
from utils.logger import logger

T = TypeVar("T")


def soft_solve(
    source: DiscreteMeasure,
    target: DiscreteMeasure,
    C: np.ndarray,
    lam: float,
    solver: SolverSpec,
    epsilon: Optional[float] = None,
) -> SoftSolution:
    """
    Решить мягкую задачу выбранным решателем

    kind "exact" означает точный оракул; для инстансов больше предела оракула
    нужно явно выбрать энтропийный решатель с допусками.
    """
    kind = solver.kind
    if kind in ("exact", "soft-oracle"):
        if max(source.size, target.size) > ORACLE_MAX_ATOMS:
            raise SolverError(
                f"instance {source.size}x{target.size} is too large for the soft oracle; use solver kind semi-relaxed"
            )
        return exact_soft_oracle(source, target, C, lam, epsilon=epsilon)
    if solver.tolerance is None or solver.max_iterations is None:
        raise SolverError(f"solver '{kind}' needs tolerance and max_iterations")
    if kind == "sinkhorn":
        return sinkhorn(source, target, C, solver.eta, solver.max_iterations, solver.tolerance, epsilon=epsilon)
    if solver.eta_final is not None:
        return annealed_semi_relaxed_sinkhorn(
            source, target, C, lam, solver.max_iterations, solver.tolerance,
            stages=solver.stages,
            eta_start=solver.eta,
            eta_final=solver.eta_final,
            epsilon=epsilon,
        )
    return semi_relaxed_sinkhorn(source, target, C, lam, solver.eta, solver.max_iterations, solver.tolerance, epsilon=epsilon)


def soft_map(solution: SoftSolution) -> MapTable:
    return barycentric_map(solution.plan)


def timed(fn: Callable[[], T]) -> Tuple[T, Optional[float]]:
    """Результат и время; без KRLIMITS_RECORD_TIMINGS время не пишется"""
    start = time.perf_counter()
    result = fn()
    return result, (time.perf_counter() - start) if RECORD_TIMINGS else None


def run_cells(jobs: List[Tuple[SweepCell, Callable[[SweepCell], None]]], threads: int = 1) -> List[SweepCell]:
    """
    Выполнить ячейки в пуле потоков

    Каждая задача заполняет свою ячейку; ошибка ячейки записывается в неё же
    вместе с координатами и не останавливает остальные.
    """

    def execute(job: Tuple[SweepCell, Callable[[SweepCell], None]]) -> SweepCell:
        cell, fill = job
        try:
            _, cell.seconds = timed(lambda: fill(cell))
        except TransportError as e:
            cell.status = "error"
            cell.error = f"ε={cell.epsilon:g}, λ={cell.lam}: {e}"
            logger.error(f"Ячейка ε={cell.epsilon:g}, λ={cell.lam} завершилась ошибкой: {e}")
        return cell

    if threads <= 1:
        cells = [execute(job) for job in jobs]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            cells = list(pool.map(execute, jobs))
    return sorted(cells, key=lambda cell: cell.key)
