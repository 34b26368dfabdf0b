"""
Вероятностные меры на тензорных сетках и конечных носителях
"""
import math
from dataclasses import dataclass
from functools import reduce
from typing import Iterable, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.spatial.distance import cdist
from scipy.stats import multivariate_normal

from config import DENSITY_FLOOR_MASS
from transport.errors import MeasureError
from utils.logger import logger

# Запас по стандартным отклонениям, который должна покрывать сетка гауссианы
COVERAGE_SIGMAS = 5.0


def trapezoid_weights(nodes: np.ndarray) -> np.ndarray:
    """Веса правила трапеций для одной оси"""
    h = np.diff(nodes)
    weights = np.empty_like(nodes)
    weights[0] = h[0] / 2
    weights[-1] = h[-1] / 2
    weights[1:-1] = (nodes[2:] - nodes[:-2]) / 2
    return weights


@dataclass(frozen=True, eq=False)
class GridSpec:
    """Тензорная сетка: по массиву узлов на каждую ось"""
    axes: Tuple[np.ndarray, ...]

    def __post_init__(self):
        axes = tuple(np.asarray(a, dtype=float).ravel() for a in self.axes)
        if not axes:
            raise MeasureError("grid needs at least one axis")
        for k, nodes in enumerate(axes):
            if nodes.size < 2:
                raise MeasureError(f"axis {k} needs at least 2 nodes")
            if not np.all(np.diff(nodes) > 0):
                raise MeasureError(f"axis {k} nodes must be strictly increasing")
        object.__setattr__(self, "axes", axes)

    @classmethod
    def uniform(cls, lows: Sequence[float], highs: Sequence[float], counts: Union[int, Sequence[int]]) -> "GridSpec":
        """Равномерная сетка на прямоугольнике"""
        if isinstance(counts, int):
            counts = [counts] * len(lows)
        return cls(tuple(np.linspace(lo, hi, n) for lo, hi, n in zip(lows, highs, counts)))

    @property
    def dimension(self) -> int:
        return len(self.axes)

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(a.size for a in self.axes)

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def spacing(self) -> float:
        """Наибольший шаг сетки по всем осям"""
        return max(float(np.max(np.diff(a))) for a in self.axes)

    def nodes(self) -> np.ndarray:
        """Узлы сетки построчно (row-major), форма (N, d)"""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def weights(self) -> np.ndarray:
        """Тензорные веса трапеций формы shape"""
        return reduce(np.multiply.outer, [trapezoid_weights(a) for a in self.axes])

    def contains(self, point: Sequence[float]) -> bool:
        return all(a[0] <= p <= a[-1] for a, p in zip(self.axes, point))


@dataclass(frozen=True, eq=False)
class GridDensity:
    """Плотность, заданная значениями в узлах сетки (масса на единицу объёма)"""
    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != self.grid.shape:
            raise MeasureError("shape mismatch")
        if not np.all(np.isfinite(values)):
            raise MeasureError("density values must be finite")
        if np.any(values < 0):
            raise MeasureError("negative density")
        if abs(float(np.sum(values * self.grid.weights())) - 1.0) > 1e-10:
            raise MeasureError("density must integrate to 1")
        object.__setattr__(self, "values", values)

    @property
    def dimension(self) -> int:
        return self.grid.dimension

    def integral(self) -> float:
        return float(np.sum(self.values * self.grid.weights()))

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """Мультилинейная интерполяция в точках (N, d); вне сетки ноль"""
        interpolator = RegularGridInterpolator(
            self.grid.axes, self.values, bounds_error=False, fill_value=0.0
        )
        return np.maximum(interpolator(np.atleast_2d(points)), 0.0)


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Взвешенные атомы в R^d"""
    support: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        support = np.asarray(self.support, dtype=float)
        if support.ndim == 1:
            support = support[:, None]
        weights = np.asarray(self.weights, dtype=float).ravel()
        if support.ndim != 2 or support.shape[0] != weights.size:
            raise MeasureError("shape mismatch")
        if weights.size == 0:
            raise MeasureError("empty support")
        if np.any(weights < 0):
            raise MeasureError("negative weight")
        if abs(math.fsum(weights) - 1.0) > 1e-12:
            raise MeasureError("weights must sum to 1")
        if np.unique(support, axis=0).shape[0] != support.shape[0]:
            raise MeasureError("support points must be distinct")
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def normalized(cls, support: np.ndarray, weights: Optional[np.ndarray] = None) -> "DiscreteMeasure":
        """Мера с нормировкой весов (по умолчанию равномерных)"""
        support = np.asarray(support, dtype=float)
        n = support.shape[0]
        weights = np.full(n, 1.0 / n) if weights is None else np.asarray(weights, dtype=float)
        total = math.fsum(weights)
        if total <= 0:
            raise MeasureError("degenerate density")
        return cls(support, weights / total)

    @property
    def dimension(self) -> int:
        return self.support.shape[1]

    @property
    def size(self) -> int:
        return self.support.shape[0]

    def mean(self) -> np.ndarray:
        return self.weights @ self.support


@dataclass(frozen=True, eq=False)
class GaussianMeasure:
    """Гауссова мера N(mean, covariance)"""
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        if cov.shape != (mean.size, mean.size):
            raise MeasureError("shape mismatch")
        if np.max(np.abs(cov - cov.T)) > 1e-12 * max(1.0, np.max(np.abs(cov))):
            raise MeasureError("covariance not positive definite")
        if np.min(np.linalg.eigvalsh(cov)) <= 0:
            raise MeasureError("covariance not positive definite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "covariance", cov)

    @property
    def dimension(self) -> int:
        return self.mean.size

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(np.diag(self.covariance))

    def pdf(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float).reshape(-1, self.dimension)
        return np.atleast_1d(multivariate_normal(self.mean, self.covariance).pdf(points))

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.multivariate_normal(self.mean, self.covariance, size=n)


@dataclass(frozen=True, eq=False)
class CdfTable:
    """Кусочно-линейная функция распределения в узлах"""
    abscissae: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.abscissae, dtype=float)
        F = np.asarray(self.values, dtype=float)
        if x.shape != F.shape or x.ndim != 1:
            raise MeasureError("shape mismatch")
        if np.any(np.diff(F) < 0):
            raise MeasureError("cdf must be nondecreasing")
        if F[0] != 0.0 or F[-1] != 1.0:
            raise MeasureError("cdf endpoints must be exactly 0 and 1")
        object.__setattr__(self, "abscissae", x)
        object.__setattr__(self, "values", F)

    def evaluate(self, x: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
        return np.interp(x, self.abscissae, self.values)


def build_grid_density(grid: GridSpec, values: np.ndarray) -> GridDensity:
    """
    Нормировать значения в узлах до плотности с единичным интегралом трапеций

    Args:
        grid: Сетка
        values: Неотрицательные значения в узлах

    Returns:
        Нормированная плотность
    """
    values = np.asarray(values, dtype=float)
    if values.size != grid.size:
        raise MeasureError("shape mismatch")
    values = values.reshape(grid.shape)
    if np.any(values < 0):
        raise MeasureError("negative density")
    total = float(np.sum(values * grid.weights()))
    if not total > 0:
        raise MeasureError("degenerate density")
    return GridDensity(grid, values / total)


def _check_axes(axes: Iterable[int], dimension: int) -> Tuple[int, ...]:
    kept = tuple(sorted(set(int(a) for a in axes)))
    if not kept:
        raise MeasureError("no axes kept")
    if kept[0] < 0 or kept[-1] >= dimension:
        raise MeasureError(f"axis out of range for dimension {dimension}")
    return kept


def marginal(density: GridDensity, axes: Iterable[int]) -> GridDensity:
    """Маргинал по оставленным осям: трапеции по остальным"""
    kept = _check_axes(axes, density.dimension)
    values = density.values
    for ax in reversed(range(density.dimension)):
        if ax in kept:
            continue
        w = trapezoid_weights(density.grid.axes[ax])
        shape = [1] * values.ndim
        shape[ax] = w.size
        values = np.sum(values * w.reshape(shape), axis=ax)
    grid = GridSpec(tuple(density.grid.axes[a] for a in kept))
    return build_grid_density(grid, values)


def prefix_marginal(density: GridDensity, axis: int) -> GridDensity:
    """Маргинал по осям 0..axis"""
    if axis == density.dimension - 1:
        return density
    return marginal(density, range(axis + 1))


def slice_prefix(prefix: GridDensity, predecessors: Sequence[float]) -> GridDensity:
    """
    Условная плотность последней оси prefix при фиксированных предыдущих координатах

    Между узлами предшественников совместная плотность интерполируется мультилинейно.
    """
    axis = prefix.dimension - 1
    predecessors = np.asarray(predecessors, dtype=float).ravel()
    if predecessors.size != axis:
        raise MeasureError("dimension mismatch")
    nodes = prefix.grid.axes[axis]
    if axis == 0:
        values = prefix.values
    else:
        if not prefix.grid.contains(predecessors):
            raise MeasureError("predecessor values outside grid")
        points = np.column_stack([np.broadcast_to(predecessors, (nodes.size, axis)), nodes])
        values = prefix.evaluate(points)
    mass = float(np.sum(values * trapezoid_weights(nodes)))
    if mass < DENSITY_FLOOR_MASS:
        raise MeasureError("conditioning on null set")
    return GridDensity(GridSpec((nodes,)), values / mass)


def conditional_slice(density: GridDensity, axis: int, predecessors: Sequence[float]) -> GridDensity:
    """f(x_axis | x_0..x_{axis-1}) как одномерная плотность"""
    if not 0 <= axis < density.dimension:
        raise MeasureError(f"axis out of range for dimension {density.dimension}")
    return slice_prefix(prefix_marginal(density, axis), predecessors)


def cdf_1d(density: GridDensity) -> CdfTable:
    """Накопленные суммы трапеций, последний элемент ровно 1"""
    if density.dimension != 1:
        raise MeasureError("dimension mismatch")
    x = density.grid.axes[0]
    f = density.values
    cells = (f[1:] + f[:-1]) / 2 * np.diff(x)
    cum = np.concatenate([[0.0], np.cumsum(cells)])
    cum = np.maximum.accumulate(cum / cum[-1])
    cum[0] = 0.0
    cum[-1] = 1.0
    return CdfTable(x, np.minimum(cum, 1.0))


def quantile_1d(cdf: CdfTable, u: Union[float, np.ndarray]) -> Union[float, np.ndarray]:
    """
    Кусочно-линейная обратная к CDF

    На плоских участках возвращается левый конец участка.
    """
    levels = np.asarray(u, dtype=float)
    if np.any(levels < 0) or np.any(levels > 1) or np.any(np.isnan(levels)):
        raise MeasureError("quantile level out of range")
    x, F = cdf.abscissae, cdf.values
    k = np.searchsorted(F, levels, side="left")
    lo = np.clip(k - 1, 0, F.size - 1)
    hi = np.clip(k, 0, F.size - 1)
    span = F[hi] - F[lo]
    frac = np.divide(levels - F[lo], span, out=np.zeros_like(levels), where=span > 0)
    result = np.where(k == 0, x[0], x[lo] + frac * (x[hi] - x[lo]))
    return float(result) if np.ndim(u) == 0 else result


def second_moment(measure: Union[DiscreteMeasure, GridDensity, GaussianMeasure]) -> float:
    """Второй момент ∫|x|² dμ"""
    if isinstance(measure, DiscreteMeasure):
        return float(measure.weights @ np.sum(measure.support ** 2, axis=1))
    if isinstance(measure, GaussianMeasure):
        return float(np.trace(measure.covariance) + measure.mean @ measure.mean)
    squared = np.sum(measure.grid.nodes() ** 2, axis=1).reshape(measure.grid.shape)
    return float(np.sum(measure.values * squared * measure.grid.weights()))


def discretize(gaussian: GaussianMeasure, grid: GridSpec) -> GridDensity:
    """Значения гауссовой плотности в узлах, нормированные трапециями"""
    if gaussian.dimension != grid.dimension:
        raise MeasureError("dimension mismatch")
    for k, (m, s) in enumerate(zip(gaussian.mean, gaussian.std)):
        nodes = grid.axes[k]
        if nodes[0] > m - COVERAGE_SIGMAS * s or nodes[-1] < m + COVERAGE_SIGMAS * s:
            logger.warning(f"Сетка по оси {k} не покрывает среднее ± {COVERAGE_SIGMAS:g}σ")
    return build_grid_density(grid, gaussian.pdf(grid.nodes()))


def atomize(density: GridDensity) -> DiscreteMeasure:
    """Каждому узлу - вес трапеций его ячейки"""
    masses = (density.values * density.grid.weights()).ravel()
    return DiscreteMeasure(density.grid.nodes(), masses / math.fsum(masses))


def mollify(measure: DiscreteMeasure, bandwidth: float, grid: GridSpec) -> GridDensity:
    """
    Сглаживание атомов гауссовым ядром на сетке

    Масса каждого атома распределяется по узлам пропорционально весу трапеций
    и значению ядра, поэтому атом в узле при малой ширине остаётся в этом узле.
    """
    if not bandwidth > 0:
        raise MeasureError("invalid bandwidth")
    if measure.dimension != grid.dimension:
        raise MeasureError("dimension mismatch")
    nodes = grid.nodes()
    node_weights = grid.weights().ravel()
    sq = cdist(measure.support, nodes, "sqeuclidean")
    log_kernel = -sq / (2 * bandwidth ** 2)
    log_kernel -= log_kernel.max(axis=1, keepdims=True)
    share = np.exp(log_kernel) * node_weights[None, :]
    share /= share.sum(axis=1, keepdims=True)
    masses = measure.weights @ share
    return build_grid_density(grid, masses / node_weights)


def splat_masses(points: np.ndarray, masses: np.ndarray, grid: GridSpec) -> Tuple[np.ndarray, int]:
    """
    Линейное (CIC) распределение масс точек по узлам сетки

    Returns:
        Кортеж (массы в узлах формы grid.shape, число точек вне сетки)
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    masses = np.asarray(masses, dtype=float)
    inside = np.ones(points.shape[0], dtype=bool)
    for k, axis_nodes in enumerate(grid.axes):
        inside &= (points[:, k] >= axis_nodes[0]) & (points[:, k] <= axis_nodes[-1])
    points, masses = points[inside], masses[inside]

    cells, fracs = [], []
    for k, axis_nodes in enumerate(grid.axes):
        idx = np.clip(np.searchsorted(axis_nodes, points[:, k], side="right") - 1, 0, axis_nodes.size - 2)
        frac = (points[:, k] - axis_nodes[idx]) / (axis_nodes[idx + 1] - axis_nodes[idx])
        cells.append(idx)
        fracs.append(frac)

    out = np.zeros(grid.shape)
    for corner in np.ndindex(*([2] * grid.dimension)):
        weight = masses.copy()
        index = []
        for k, bit in enumerate(corner):
            weight *= fracs[k] if bit else 1.0 - fracs[k]
            index.append(cells[k] + bit)
        np.add.at(out, tuple(index), weight)
    return out, int(np.count_nonzero(~inside))


def permute_axes(measure, order: Sequence[int]):
    """Переставить координаты меры (порядок переменных для KR)"""
    order = [int(k) for k in order]
    dimension = measure.dimension
    if sorted(order) != list(range(dimension)):
        raise MeasureError(f"ordering must be a permutation of 0..{dimension - 1}")
    if isinstance(measure, GridSpec):
        return GridSpec(tuple(measure.axes[k] for k in order))
    if isinstance(measure, GridDensity):
        return GridDensity(permute_axes(measure.grid, order), np.transpose(measure.values, order))
    if isinstance(measure, DiscreteMeasure):
        return DiscreteMeasure(measure.support[:, order], measure.weights)
    if isinstance(measure, GaussianMeasure):
        return GaussianMeasure(measure.mean[order], measure.covariance[np.ix_(order, order)])
    raise TypeError(f"Неподдерживаемый тип меры: {type(measure).__name__}")
