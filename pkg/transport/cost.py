"""
Взвешенная квадратичная стоимость c_ε(x, y) = Σ ε^i (x_i - y_i)²
"""
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from transport.errors import CostError


@dataclass(frozen=True)
class WeightedCost:
    """Стоимость с геометрически убывающими весами координат"""
    epsilon: float
    dimension: int

    def __post_init__(self):
        if not 0 < self.epsilon <= 1:
            raise CostError("epsilon must lie in (0, 1]")
        if self.dimension < 1:
            raise CostError("dimension must be positive")

    @property
    def weights(self) -> np.ndarray:
        return self.epsilon ** np.arange(self.dimension, dtype=float)

    def norm_squared(self, z: np.ndarray) -> np.ndarray:
        """‖z‖²_ε по последней оси"""
        z = np.asarray(z, dtype=float)
        if z.shape[-1] != self.dimension:
            raise CostError("dimension mismatch")
        return (z ** 2) @ self.weights


def cost_eval(cost: WeightedCost, x: np.ndarray, y: np.ndarray) -> float:
    """c_ε(x, y)"""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if x.shape != (cost.dimension,) or y.shape != (cost.dimension,):
        raise CostError("dimension mismatch")
    return float(cost.norm_squared(x - y))


def cost_matrix(cost: WeightedCost, source_support: np.ndarray, target_support: np.ndarray) -> np.ndarray:
    """Матрица C[i, j] = c_ε(x_i, y_j)"""
    xs = np.asarray(source_support, dtype=float)
    ys = np.asarray(target_support, dtype=float)
    if xs.ndim == 1:
        xs = xs[:, None]
    if ys.ndim == 1:
        ys = ys[:, None]
    if xs.shape[0] == 0 or ys.shape[0] == 0:
        raise CostError("empty support")
    if xs.shape[1] != cost.dimension or ys.shape[1] != cost.dimension:
        raise CostError("dimension mismatch")
    # ε^i (x_i - y_i)² = (√ε^i x_i - √ε^i y_i)², поэтому хватает евклидова cdist
    scale = np.sqrt(cost.weights)
    return cdist(xs * scale, ys * scale, "sqeuclidean")


def rescale_matrix(cost: WeightedCost) -> np.ndarray:
    """A_ε = diag(ε^{i/2}), ‖A_ε(x - y)‖² = c_ε(x, y)"""
    return np.diag(np.sqrt(cost.weights))
