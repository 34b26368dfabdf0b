"""
Тесты взвешенной стоимости
"""
import numpy as np
import pytest
from numpy.testing import assert_allclose

from transport.cost import WeightedCost, cost_eval, cost_matrix, rescale_matrix
from transport.errors import CostError


def test_cost_eval_weights_coordinates():
    cost = WeightedCost(0.1, 3)
    assert cost_eval(cost, [0.0, 0.0, 0.0], [1.0, 2.0, 3.0]) == pytest.approx(1.0 + 0.1 * 4 + 0.01 * 9)


def test_cost_matrix_matches_pointwise_evaluation():
    rng = np.random.default_rng(0)
    cost = WeightedCost(0.25, 2)
    xs, ys = rng.normal(size=(5, 2)), rng.normal(size=(4, 2))
    C = cost_matrix(cost, xs, ys)
    expected = np.array([[cost_eval(cost, x, y) for y in ys] for x in xs])
    assert_allclose(C, expected, rtol=1e-12)


def test_rescale_matrix_reproduces_cost():
    rng = np.random.default_rng(1)
    cost = WeightedCost(0.01, 3)
    A = rescale_matrix(cost)
    x, y = rng.normal(size=3), rng.normal(size=3)
    assert np.sum((A @ (x - y)) ** 2) == pytest.approx(cost_eval(cost, x, y), rel=1e-12)


def test_epsilon_one_is_squared_euclidean():
    xs = np.array([[0.0, 0.0], [1.0, 1.0]])
    C = cost_matrix(WeightedCost(1.0, 2), xs, xs)
    assert_allclose(C, [[0.0, 2.0], [2.0, 0.0]])


@pytest.mark.parametrize("epsilon", [0.0, -0.5, 1.5])
def test_epsilon_out_of_range(epsilon):
    with pytest.raises(CostError):
        WeightedCost(epsilon, 2)


def test_dimension_mismatch():
    with pytest.raises(CostError, match="dimension mismatch"):
        cost_matrix(WeightedCost(0.5, 2), np.zeros((3, 3)), np.zeros((2, 2)))


def test_cost_is_nondecreasing_in_epsilon():
    rng = np.random.default_rng(2)
    x, y = rng.normal(size=4), rng.normal(size=4)
    values = [cost_eval(WeightedCost(epsilon, 4), x, y) for epsilon in np.geomspace(1e-6, 1.0, 25)]
    assert all(b > a for a, b in zip(values, values[1:]))
    same_tail = y.copy()
    same_tail[0] += 1.0
    flat = [cost_eval(WeightedCost(epsilon, 4), same_tail, y) for epsilon in (1e-3, 0.5, 1.0)]
    assert flat == pytest.approx([1.0, 1.0, 1.0])


def test_tiny_epsilon_keeps_only_first_coordinate():
    rng = np.random.default_rng(3)
    cost = WeightedCost(1e-8, 3)
    for _ in range(20):
        x, y = rng.normal(size=3), rng.normal(size=3)
        gap = abs(cost_eval(cost, x, y) - (x[0] - y[0]) ** 2)
        assert gap <= 1e-6 * np.sum((x - y) ** 2)
