"""
Модели данных отчётов
"""
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from config import REPORT_SCHEMA_VERSION
from transport.ot_exact import MapTable


@dataclass
class SweepCell:
    """Результат одной ячейки (ε, λ); lam = None у жёстких ячеек"""
    epsilon: float
    lam: Optional[float] = None
    bandwidth: Optional[float] = None
    objective: Optional[float] = None
    kl_term: Optional[float] = None
    transport_term: Optional[float] = None
    map_distance: Optional[float] = None
    el_residual: Optional[float] = None
    resolve_gap: Optional[float] = None
    marginal_agreement: Dict[int, float] = field(default_factory=dict)
    seconds: Optional[float] = None
    diagnostics: Dict[str, Any] = field(default_factory=dict)
    flags: List[str] = field(default_factory=list)
    status: str = "ok"
    error: Optional[str] = None

    @property
    def key(self) -> Tuple[float, float, float]:
        lam = float("inf") if self.lam is None else self.lam
        bandwidth = 0.0 if self.bandwidth is None else self.bandwidth
        return (-self.epsilon, lam, -bandwidth)


@dataclass
class SweepReport:
    """Отчёт эксперимента: ячейки и экспериментальные таблицы"""
    experiment: str
    instance: Dict[str, Any]
    epsilons: List[float] = field(default_factory=list)
    lambdas: List[float] = field(default_factory=list)
    cells: List[SweepCell] = field(default_factory=list)
    tables: Dict[str, List[Dict[str, Any]]] = field(default_factory=dict)
    artifacts: Dict[str, Dict[str, Any]] = field(default_factory=dict)
    status: str = "ok"
    error: Optional[str] = None
    config: Dict[str, Any] = field(default_factory=dict)
    schema_version: str = REPORT_SCHEMA_VERSION

    def cell(self, epsilon: float, lam: Optional[float] = None) -> SweepCell:
        """Найти ячейку по (ε, λ)"""
        for cell in self.cells:
            if cell.epsilon == epsilon and cell.lam == lam:
                return cell
        raise KeyError((epsilon, lam))

    def distances(self) -> List[Optional[float]]:
        return [cell.map_distance for cell in self.cells]


@dataclass
class DiagramResult:
    """Четыре угла диаграммы пределов и попарные расстояния в L²(μ)"""
    corners: Dict[str, MapTable]
    distances: np.ndarray
    epsilon: float
    lam: float
    discretization_gap: float
    labels: Tuple[str, ...] = ("A", "B", "C", "D")

    def distance(self, first: str, second: str) -> float:
        return float(self.distances[self.labels.index(first), self.labels.index(second)])
