"""
Динамическая сторона: интерполяция смещений, скорости вдоль частиц, действие
и диагностика треугольности поля скоростей
"""
import math
from dataclasses import dataclass
from typing import Callable, Sequence, Tuple, Union

import numpy as np

from transport.cost import WeightedCost, cost_matrix
from transport.errors import DynamicsError, MeasureError
from transport.kr import AffineMap
from transport.measures import DiscreteMeasure, GridSpec, splat_masses
from transport.ot_exact import MapTable, exact_transport
from utils.logger import logger


@dataclass(frozen=True, eq=False)
class ParticleEnsemble:
    """Частицы на прямых X_t(x) = (1 - t)x + tT(x), по одной на атом источника"""
    times: np.ndarray
    origins: np.ndarray
    images: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        times = np.atleast_1d(np.asarray(self.times, dtype=float))
        _check_times(times)
        if self.origins.shape != self.images.shape or self.origins.shape[0] != self.weights.size:
            raise MeasureError("shape mismatch")
        object.__setattr__(self, "times", times)

    @property
    def size(self) -> int:
        return self.weights.size

    @property
    def dimension(self) -> int:
        return self.origins.shape[1]

    @property
    def velocities(self) -> np.ndarray:
        return self.images - self.origins

    def positions_at(self, t: float) -> np.ndarray:
        _check_times(np.array([t]))
        return (1.0 - t) * self.origins + t * self.images

    @property
    def positions(self) -> np.ndarray:
        """Положения формы (число моментов, число частиц, d)"""
        return np.stack([self.positions_at(t) for t in self.times])


def _check_times(times: np.ndarray) -> None:
    if np.any(times < 0) or np.any(times > 1) or np.any(np.isnan(times)):
        raise DynamicsError("time outside [0, 1]")
    if np.any(np.diff(times) <= 0):
        raise DynamicsError("times must be strictly increasing")


def _images_on_support(transport_map: Union[MapTable, AffineMap, Callable], source: DiscreteMeasure) -> np.ndarray:
    if isinstance(transport_map, MapTable):
        points = transport_map.points
        if points.shape != source.support.shape or not np.allclose(points, source.support, rtol=0, atol=1e-12):
            raise MeasureError("support mismatch")
        return transport_map.images
    images = np.atleast_2d(np.asarray(transport_map(source.support), dtype=float))
    if images.shape != source.support.shape:
        raise MeasureError("shape mismatch")
    return images


def displacement_interpolate(
    transport_map: Union[MapTable, AffineMap, Callable],
    source: DiscreteMeasure,
    times: Sequence[float],
) -> ParticleEnsemble:
    """
    Интерполяция смещений вдоль прямых

    Args:
        transport_map: Таблица образов на носителе источника или вычислимое отображение
        source: Мера источника
        times: Возрастающие моменты из [0, 1]

    Returns:
        ParticleEnsemble с весами источника
    """
    images = _images_on_support(transport_map, source)
    return ParticleEnsemble(np.asarray(times, dtype=float), source.support, images, source.weights)


def particle_velocity(ensemble: ParticleEnsemble, index: int, t: float) -> np.ndarray:
    """v(t, X_t(x)) = T(x) - x, от t не зависит"""
    if not 0 <= index < ensemble.size:
        raise DynamicsError(f"particle index {index} out of range")
    _check_times(np.array([t]))
    return ensemble.velocities[index].copy()


def action(ensemble: ParticleEnsemble, cost: WeightedCost) -> float:
    """∫₀¹ Σ w ‖v‖²_ε dt при постоянных скоростях"""
    return math.fsum(ensemble.weights * cost.norm_squared(ensemble.velocities))


def xt_optimality_check(source: DiscreteMeasure, ensemble: ParticleEnsemble, t: float, cost: WeightedCost) -> float:
    """
    Зазор между стоимостью x ↦ X_t(x) и оптимумом OT_ε(μ, ρ_t)

    Положения частиц могут совпадать, поэтому задача решается на массивах.
    """
    if not 0 < t < 1:
        raise DynamicsError("time outside [0, 1]")
    positions = ensemble.positions_at(t)
    map_cost = math.fsum(ensemble.weights * cost.norm_squared(positions - ensemble.origins))
    C = cost_matrix(cost, source.support, positions)
    optimum = exact_transport(source.weights, ensemble.weights, C).value
    return max(map_cost - optimum, 0.0)


def _velocity_jacobian(jacobian: np.ndarray, t: float) -> np.ndarray:
    """(DT - I)(t·DT + (1 - t)I)⁻¹"""
    d = jacobian.shape[0]
    interpolant = t * jacobian + (1.0 - t) * np.eye(d)
    if np.linalg.cond(interpolant) > 1e12:
        raise DynamicsError("interpolant not invertible")
    return np.linalg.solve(interpolant.T, (jacobian - np.eye(d)).T).T


def _finite_difference_jacobian(transport_map: Callable, point: np.ndarray, radius: float) -> np.ndarray:
    d = point.size
    stencil = np.concatenate([point + radius * np.eye(d), point - radius * np.eye(d)])
    values = np.atleast_2d(transport_map(stencil))
    return ((values[:d] - values[d:]) / (2 * radius)).T


def velocity_jacobian_defect(
    transport_map: Union[AffineMap, Callable],
    points: np.ndarray,
    radius: float,
    t: float = 0.5,
) -> float:
    """
    Норма Фробениуса наддиагональной части ∂v/∂y, максимум по точкам

    Для аффинных отображений якобиан точный; иначе DT оценивается симметричными
    разностями в метках частиц x, а ∂v/∂y в X_t(x) получается по цепному правилу.
    """
    if not radius > 0:
        raise DynamicsError("radius must be positive")
    _check_times(np.array([t]))
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if isinstance(transport_map, AffineMap):
        return float(np.linalg.norm(np.triu(_velocity_jacobian(transport_map.matrix, t), 1)))
    worst = 0.0
    for point in points:
        jacobian = _finite_difference_jacobian(transport_map, point, radius)
        worst = max(worst, float(np.linalg.norm(np.triu(_velocity_jacobian(jacobian, t), 1))))
    return worst


def _divergence(fields: Sequence[np.ndarray], grid: GridSpec) -> np.ndarray:
    return sum(np.gradient(field, grid.axes[k], axis=k) for k, field in enumerate(fields))


def continuity_residual(ensemble: ParticleEnsemble, grid: GridSpec, window: Tuple[float, float]) -> float:
    """
    L¹-норма ∂ρ/∂t + div(vρ) на сетке

    Масса и импульс частиц распределяются по узлам линейно, производная
    по времени - центральная разность по соседним моментам окна.
    Возвращается максимум по внутренним моментам окна.
    """
    if grid.dimension != ensemble.dimension:
        raise MeasureError("dimension mismatch")
    t0, t1 = window
    _check_times(np.array([t0]))
    _check_times(np.array([t1]))
    times = ensemble.times[(ensemble.times >= t0) & (ensemble.times <= t1)]
    if times.size < 3:
        raise DynamicsError("continuity residual needs at least 3 time samples")

    cell = grid.weights()
    velocities = ensemble.velocities

    def density(t: float, masses: np.ndarray) -> np.ndarray:
        splat, dropped = splat_masses(ensemble.positions_at(t), masses, grid)
        if dropped:
            logger.warning(f"t={t:.3g}: {dropped} частиц вне сетки")
        return splat / cell

    worst = 0.0
    for k in range(1, times.size - 1):
        rate = (density(times[k + 1], ensemble.weights) - density(times[k - 1], ensemble.weights)) / (
            times[k + 1] - times[k - 1]
        )
        momentum = [density(times[k], ensemble.weights * velocities[:, axis]) for axis in range(grid.dimension)]
        residual = rate + _divergence(momentum, grid)
        worst = max(worst, float(np.sum(np.abs(residual) * cell)))
    return worst
