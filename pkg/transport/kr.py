"""
Отображения Кнёте-Розенблатта: сеточные таблицы, дискретные планы и гауссовы замкнутые формы
"""
import math
from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np
from scipy import linalg, sparse
from scipy.interpolate import RegularGridInterpolator

from config import DENSITY_FLOOR_MASS
from transport.cost import WeightedCost, rescale_matrix
from transport.errors import MeasureError, SolverError
from transport.measures import (
    CdfTable,
    DiscreteMeasure,
    GaussianMeasure,
    GridDensity,
    GridSpec,
    cdf_1d,
    prefix_marginal,
    quantile_1d,
    slice_prefix,
    trapezoid_weights,
)
from transport.ot_exact import Coupling, MapTable
from utils.logger import logger


@dataclass(frozen=True, eq=False)
class TriangularMap:
    """
    Треугольное отображение на сетке источника

    components[i] - образы T_i в узлах осей 0..i, форма grid.shape[:i + 1].
    """
    grid: GridSpec
    components: Tuple[np.ndarray, ...]

    def __post_init__(self):
        components = tuple(np.asarray(c, dtype=float) for c in self.components)
        if len(components) != self.grid.dimension:
            raise MeasureError("dimension mismatch")
        for i, table in enumerate(components):
            if table.shape != self.grid.shape[: i + 1]:
                raise MeasureError(f"component {i} table has shape {table.shape}")
        object.__setattr__(self, "components", components)

    @property
    def dimension(self) -> int:
        return self.grid.dimension

    def __call__(self, points: np.ndarray) -> np.ndarray:
        """Мультилинейная интерполяция; компонента i читает только x_0..x_i"""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if points.shape[1] != self.dimension:
            raise MeasureError("dimension mismatch")
        lows = np.array([a[0] for a in self.grid.axes])
        highs = np.array([a[-1] for a in self.grid.axes])
        clamped = np.clip(points, lows, highs)
        out = np.empty_like(points)
        for i, table in enumerate(self.components):
            interpolator = RegularGridInterpolator(self.grid.axes[: i + 1], table)
            out[:, i] = interpolator(clamped[:, : i + 1])
        return out

    def images(self) -> MapTable:
        """Образы во всех узлах сетки (построчный порядок узлов)"""
        d = self.dimension
        columns = []
        for i, table in enumerate(self.components):
            full = np.broadcast_to(table.reshape(table.shape + (1,) * (d - i - 1)), self.grid.shape)
            columns.append(full.ravel())
        return MapTable(self.grid.nodes(), np.column_stack(columns))

    def is_monotone(self) -> bool:
        return all(np.all(np.diff(table, axis=i) >= 0) for i, table in enumerate(self.components))


@dataclass(frozen=True, eq=False)
class AffineMap:
    """T(x) = A x + b"""
    matrix: np.ndarray
    offset: np.ndarray

    def __post_init__(self):
        matrix = np.atleast_2d(np.asarray(self.matrix, dtype=float))
        offset = np.atleast_1d(np.asarray(self.offset, dtype=float))
        if matrix.shape != (offset.size, offset.size):
            raise MeasureError("shape mismatch")
        object.__setattr__(self, "matrix", matrix)
        object.__setattr__(self, "offset", offset)

    @property
    def dimension(self) -> int:
        return self.offset.size

    def __call__(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        return points @ self.matrix.T + self.offset

    def table(self, points: np.ndarray) -> MapTable:
        return MapTable(points, self(points))

    def upper_defect(self) -> float:
        """Норма строго верхнетреугольной части матрицы"""
        return float(np.linalg.norm(np.triu(self.matrix, 1)))


def monotone_rearrangement_1d(f: GridDensity, g: GridDensity) -> MapTable:
    """T = G⁻¹ ∘ F в узлах сетки f"""
    if f.dimension != 1 or g.dimension != 1:
        raise MeasureError("dimension mismatch")
    levels = cdf_1d(f).values
    return MapTable(f.grid.axes[0], quantile_1d(cdf_1d(g), levels))


def _node_slice(prefix: GridDensity, index: Tuple[int, ...]) -> GridDensity:
    """Условная плотность последней оси prefix в узле предшественников"""
    nodes = prefix.grid.axes[-1]
    values = prefix.values[index]
    mass = float(values @ trapezoid_weights(nodes))
    if mass < DENSITY_FLOOR_MASS:
        raise MeasureError("conditioning on null set")
    return GridDensity(GridSpec((nodes,)), values / mass)


def _conditional_cdfs(density: GridDensity) -> List[np.ndarray]:
    """F(x_i | x_0..x_{i-1}) во всех узлах, по таблице на компоненту"""
    tables = []
    for i in range(density.dimension):
        prefix = prefix_marginal(density, i)
        table = np.empty(density.grid.shape[: i + 1])
        for index in np.ndindex(*density.grid.shape[:i]):
            table[index] = cdf_1d(_node_slice(prefix, index)).values
        tables.append(table)
    return tables


def kr_map_grid(source: GridDensity, target: GridDensity) -> TriangularMap:
    """
    Отображение Кнёте-Розенблатта между сеточными плотностями

    T_0 = G_0⁻¹ ∘ F_0; для i ≥ 1 в каждом узле предшественников x_{<i}
    T_i = G_{i|<i}⁻¹(·, T_{<i}(x_{<i})) ∘ F_{i|<i}(·, x_{<i}).

    Args:
        source: Плотность источника
        target: Плотность цели той же размерности

    Returns:
        TriangularMap на сетке источника
    """
    if source.dimension != target.dimension:
        raise MeasureError("dimension mismatch")
    levels = _conditional_cdfs(source)
    components: List[np.ndarray] = []
    cdf_cache: Dict[Tuple[float, ...], CdfTable] = {}
    for i in range(source.dimension):
        target_prefix = prefix_marginal(target, i)
        table = np.empty(source.grid.shape[: i + 1])
        for index in np.ndindex(*source.grid.shape[:i]):
            images = tuple(float(components[k][index[: k + 1]]) for k in range(i))
            key = (i,) + images
            if key not in cdf_cache:
                cdf_cache[key] = cdf_1d(slice_prefix(target_prefix, images))
            table[index] = quantile_1d(cdf_cache[key], levels[i][index])
        components.append(table)
        logger.debug(f"KR: компонента {i} построена ({int(np.prod(source.grid.shape[:i]))} срезов)")
    return TriangularMap(source.grid, tuple(components))


def north_west_corner(a: np.ndarray, b: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Правило северо-западного угла: монотонная склейка упорядоченных масс

    Returns:
        Кортеж (строки, столбцы, потоки) ступенчатого плана
    """
    n, m = a.size, b.size
    ra, rb = a.astype(float).copy(), b.astype(float).copy()
    rows, cols, flows = [], [], []
    i = j = 0
    while True:
        f = min(ra[i], rb[j])
        rows.append(i)
        cols.append(j)
        flows.append(f)
        ra[i] -= f
        rb[j] -= f
        if i == n - 1 and j == m - 1:
            break
        if j == m - 1 or (i < n - 1 and ra[i] <= rb[j]):
            i += 1
        else:
            j += 1
    return np.array(rows), np.array(cols), np.maximum(np.array(flows), 0.0)


def _couple_groups(
    support_x: np.ndarray, idx_x: np.ndarray, mass_x: np.ndarray,
    support_y: np.ndarray, idx_y: np.ndarray, mass_y: np.ndarray,
    axis: int, out: List[Tuple[int, int, float]],
) -> None:
    """Монотонная склейка по оси axis и рекурсия внутри согласованных ячеек"""
    values_x, groups_x = np.unique(support_x[idx_x, axis], return_inverse=True)
    values_y, groups_y = np.unique(support_y[idx_y, axis], return_inverse=True)
    a = np.bincount(groups_x, weights=mass_x, minlength=values_x.size)
    b = np.bincount(groups_y, weights=mass_y, minlength=values_y.size)
    rows, cols, flows = north_west_corner(a, b)
    last = axis == support_x.shape[1] - 1
    for gx, gy, flow in zip(rows, cols, flows):
        if flow <= 0:
            continue
        in_x = groups_x == gx
        in_y = groups_y == gy
        if last:
            # носители различны, поэтому на последней оси в группе один атом
            out.append((int(idx_x[in_x][0]), int(idx_y[in_y][0]), float(flow)))
            continue
        _couple_groups(
            support_x, idx_x[in_x], mass_x[in_x] * (flow / a[gx]),
            support_y, idx_y[in_y], mass_y[in_y] * (flow / b[gy]),
            axis + 1, out,
        )


def kr_plan_discrete(source: DiscreteMeasure, target: DiscreteMeasure) -> Coupling:
    """
    Дискретный план Кнёте-Розенблатта

    Маргиналы первой координаты склеиваются правилом северо-западного угла,
    затем внутри каждой пары ячеек рекурсивно склеиваются условные меры
    оставшихся координат.
    """
    if source.dimension != target.dimension:
        raise MeasureError("dimension mismatch")
    triplets: List[Tuple[int, int, float]] = []
    keep_x = source.weights > 0
    keep_y = target.weights > 0
    _couple_groups(
        source.support, np.flatnonzero(keep_x), source.weights[keep_x],
        target.support, np.flatnonzero(keep_y), target.weights[keep_y],
        0, triplets,
    )
    rows, cols, flows = zip(*triplets)
    mass = sparse.coo_matrix((flows, (rows, cols)), shape=(source.size, target.size)).tocsr()
    return Coupling(source, target.support, mass)


def _lower_cholesky(covariance: np.ndarray) -> np.ndarray:
    try:
        return linalg.cholesky(covariance, lower=True)
    except linalg.LinAlgError as e:
        raise MeasureError("covariance not positive definite") from e


def kr_map_gaussian(source: GaussianMeasure, target: GaussianMeasure) -> AffineMap:
    """T(x) = m₁ + L₁L₀⁻¹(x - m₀), L - нижние множители Холецкого"""
    if source.dimension != target.dimension:
        raise MeasureError("dimension mismatch")
    l0 = _lower_cholesky(source.covariance)
    l1 = _lower_cholesky(target.covariance)
    l0_inv = linalg.solve_triangular(l0, np.eye(source.dimension), lower=True)
    matrix = np.tril(l1 @ l0_inv)
    return AffineMap(matrix, target.mean - matrix @ source.mean)


def _sym_sqrt(matrix: np.ndarray, inverse: bool = False) -> np.ndarray:
    eigenvalues, vectors = np.linalg.eigh((matrix + matrix.T) / 2)
    if eigenvalues.min() <= 0:
        raise MeasureError("covariance not positive definite")
    powers = eigenvalues ** (-0.5 if inverse else 0.5)
    return (vectors * powers) @ vectors.T


def brenier_gaussian_weighted(source: GaussianMeasure, target: GaussianMeasure, cost: WeightedCost) -> AffineMap:
    """
    Оптимальное отображение для c_ε между гауссианами

    T(x) = A⁻¹ T̃(A x), где T̃ - отображение Бренье между N(Am₀, AΣ₀A) и N(Am₁, AΣ₁A).
    """
    if source.dimension != target.dimension or cost.dimension != source.dimension:
        raise MeasureError("dimension mismatch")
    A = rescale_matrix(cost)
    s0 = A @ source.covariance @ A
    s1 = A @ target.covariance @ A
    root = _sym_sqrt(s0)
    root_inv = _sym_sqrt(s0, inverse=True)
    middle = _sym_sqrt(root @ s1 @ root)
    conjugate = root_inv @ middle @ root_inv
    scale = np.sqrt(cost.weights)
    matrix = (conjugate * scale[None, :]) / scale[:, None]
    return AffineMap(matrix, target.mean - matrix @ source.mean)


def soft_gaussian_weighted(
    source: GaussianMeasure,
    target: GaussianMeasure,
    cost: WeightedCost,
    lam: float,
    max_iterations: int = 500,
    tolerance: float = 1e-12,
) -> Tuple[AffineMap, GaussianMeasure]:
    """
    Полурелаксированная задача c_ε между гауссианами

    Оптимальный второй маргинал P гауссов: условие стационарности
    ψ + λ log(dP/dν) = const при квадратичных ψ и log(dP/dν) сводится к
    2W(m_P - m₀) = -λΣ₁⁻¹(m_P - m₁) для среднего и
    Σ_P⁻¹ = Σ₁⁻¹ + (2/λ) W (I - M⁻¹) для ковариации, где M - матрица
    отображения brenier_gaussian_weighted(μ, P). Ковариация ищется итерацией с демпфированием 1/2.

    Returns:
        Отображение T_{ε,λ} и возмущённая цель P
    """
    if lam <= 0:
        raise SolverError("lambda must be positive")
    if source.dimension != target.dimension or cost.dimension != source.dimension:
        raise MeasureError("dimension mismatch")
    d = source.dimension
    W = np.diag(cost.weights)
    target_precision = np.linalg.inv(target.covariance)
    mean = np.linalg.solve(2.0 * W + lam * target_precision, 2.0 * W @ source.mean + lam * target_precision @ target.mean)

    def perturbed_measure(precision: np.ndarray) -> GaussianMeasure:
        covariance = np.linalg.inv(precision)
        return GaussianMeasure(mean, (covariance + covariance.T) / 2)

    precision = target_precision
    for iteration in range(1, max_iterations + 1):
        matrix = brenier_gaussian_weighted(source, perturbed_measure(precision), cost).matrix
        update = target_precision + (2.0 / lam) * W @ (np.eye(d) - np.linalg.inv(matrix))
        step = (update + update.T) / 4 - precision / 2
        change = float(np.max(np.abs(step)))
        precision = precision + step
        if change <= tolerance * max(1.0, float(np.max(np.abs(precision)))):
            break
    else:
        raise SolverError(f"gaussian soft fixed point did not converge in {max_iterations} iterations")
    perturbed = perturbed_measure(precision)
    logger.debug(f"Гауссово мягкое решение λ={lam:g}: {iteration} итераций")
    return brenier_gaussian_weighted(source, perturbed, cost), perturbed


def gaussian_map_distance(first: AffineMap, second: AffineMap, gaussian: GaussianMeasure) -> float:
    """‖T₁ - T₂‖ в L²(μ) для аффинных отображений и гауссовой μ"""
    if first.dimension != second.dimension or first.dimension != gaussian.dimension:
        raise MeasureError("dimension mismatch")
    D = first.matrix - second.matrix
    shift = D @ gaussian.mean + first.offset - second.offset
    squared = float(np.trace(D @ gaussian.covariance @ D.T) + shift @ shift)
    return math.sqrt(max(squared, 0.0))


def kr_jacobian_identity_check(
    kr_map: TriangularMap,
    source: GridDensity,
    target: GridDensity,
    mass_floor: float = 1e-2,
) -> float:
    """
    Максимальное относительное нарушение g(T_i | T_{<i})·∂T_i/∂x_i = f(x_i | x_{<i})

    Производная берётся центральной разностью во внутренних узлах оси i.
    Узлы, где условная CDF источника по любой оси 0..i вне [mass_floor, 1 - mass_floor],
    пропускаются: там таблицы квантилей упираются в края сетки.
    """
    if kr_map.grid.shape != source.grid.shape:
        raise MeasureError("shape mismatch")
    levels = _conditional_cdfs(source)
    worst = 0.0
    for i, table in enumerate(kr_map.components):
        x = source.grid.axes[i]
        source_prefix = prefix_marginal(source, i)
        target_prefix = prefix_marginal(target, i)
        inside = np.ones(table.shape, dtype=bool)
        for k in range(i + 1):
            level = levels[k].reshape(levels[k].shape + (1,) * (i - k))
            inside &= (level >= mass_floor) & (level <= 1 - mass_floor)
        for index in np.ndindex(*table.shape[:i]):
            row = table[index]
            nodes = np.flatnonzero(inside[index][1:-1]) + 1
            if nodes.size == 0:
                continue
            f = _node_slice(source_prefix, index).values[nodes]
            images = tuple(float(kr_map.components[k][index[: k + 1]]) for k in range(i))
            g_slice = slice_prefix(target_prefix, images)
            g = np.interp(row[nodes], g_slice.grid.axes[0], g_slice.values)
            derivative = (row[nodes + 1] - row[nodes - 1]) / (x[nodes + 1] - x[nodes - 1])
            violation = np.abs(g * derivative - f) / f
            worst = max(worst, float(violation.max()))
    return worst


def kr_reference_map(source: DiscreteMeasure, target: DiscreteMeasure) -> MapTable:
    """Барицентрическое отображение дискретного плана Кнёте-Розенблатта"""
    plan = kr_plan_discrete(source, target)
    rows = np.maximum(source.weights, np.finfo(float).tiny)
    images = np.asarray(plan.mass @ plan.target_support) / rows[:, None]
    return MapTable(source.support, images)

