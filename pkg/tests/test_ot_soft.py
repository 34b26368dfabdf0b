"""
Тесты мягкой задачи: оракул, полурелаксированный Синкхорн, диагностики
"""
import math

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.optimize import minimize
from scipy.special import softmax

from transport.cost import WeightedCost, cost_matrix
from transport.errors import SinkhornStalled, SolverError
from transport.measures import DiscreteMeasure
from transport.ot_exact import solve_exact
from transport.ot_soft import (
    annealed_semi_relaxed_sinkhorn,
    el_residual,
    eta_schedule,
    exact_soft_oracle,
    kl_divergence,
    perturbed_target_formula,
    resolve_consistency,
    semi_relaxed_sinkhorn,
    sinkhorn,
)

LAMBDAS = (1e-2, 1.0, 1e2, 1e6)


def random_instance(rng):
    n, m = (int(k) for k in rng.integers(1, 6, size=2))
    d = int(rng.integers(1, 3))
    source = DiscreteMeasure.normalized(rng.normal(size=(n, d)), rng.uniform(0.2, 1.0, n))
    target = DiscreteMeasure.normalized(rng.normal(size=(m, d)), rng.uniform(0.2, 1.0, m))
    C = cost_matrix(WeightedCost(float(rng.choice([1.0, 0.1])), d), source.support, target.support)
    return source, target, C


@pytest.fixture(scope="module")
def oracle_solutions():
    """50 случайных инстансов на каждом λ вместе с жёстким оптимумом"""
    rng = np.random.default_rng(20)
    cases = []
    for _ in range(50):
        source, target, C = random_instance(rng)
        _, hard = solve_exact(source, target, C)
        for lam in LAMBDAS:
            cases.append((source, target, C, lam, hard, exact_soft_oracle(source, target, C, lam)))
    return cases


@pytest.fixture(scope="module")
def two_atoms():
    source = DiscreteMeasure(np.array([[0.0], [1.0]]), np.array([0.5, 0.5]))
    target = DiscreteMeasure(np.array([[2.0], [3.0]]), np.array([0.5, 0.5]))
    return source, target, cost_matrix(WeightedCost(1.0, 1), source.support, target.support)


def test_kl_divergence():
    assert kl_divergence(np.array([0.5, 0.5]), np.array([0.5, 0.5])) == 0.0
    assert kl_divergence(np.array([1.0, 0.0]), np.array([0.5, 0.5])) == pytest.approx(math.log(2))
    assert math.isinf(kl_divergence(np.array([0.5, 0.5]), np.array([1.0, 0.0])))


def test_single_source_atom_gives_gibbs_marginal():
    rng = np.random.default_rng(1)
    source = DiscreteMeasure(np.zeros((1, 2)), np.ones(1))
    target = DiscreteMeasure.normalized(rng.normal(size=(5, 2)), rng.uniform(0.2, 1.0, 5))
    C = cost_matrix(WeightedCost(0.5, 2), source.support, target.support)
    for lam in (0.1, 1.0, 10.0):
        solution = exact_soft_oracle(source, target, C, lam)
        expected = softmax(np.log(target.weights) - C[0] / lam)
        assert_allclose(solution.perturbed_target, expected, atol=1e-10)
        formula = perturbed_target_formula(solution, target, C)
        literal = target.weights * np.exp(-C[0] / lam) / solution.source_normalizer[0]
        assert_allclose(formula.predicted, literal, atol=1e-10)
        assert formula.normalizer_gap <= 1e-9


def test_oracle_matches_generic_convex_solver():
    rng = np.random.default_rng(33)
    n, m, lam = 3, 4, 0.7
    source = DiscreteMeasure.normalized(rng.normal(size=(n, 1)), rng.uniform(0.2, 1.0, n))
    target = DiscreteMeasure.normalized(rng.normal(size=(m, 1)), rng.uniform(0.2, 1.0, m))
    C = cost_matrix(WeightedCost(1.0, 1), source.support, target.support)
    mu, nu = source.weights, target.weights

    def objective(x):
        gamma = x.reshape(n, m)
        q = gamma.sum(axis=0)
        return float(np.sum(C * gamma) + lam * np.sum(q * np.log(np.maximum(q, 1e-300) / nu)))

    result = minimize(
        objective,
        np.outer(mu, nu).ravel(),
        method="SLSQP",
        bounds=[(0.0, None)] * (n * m),
        constraints={"type": "eq", "fun": lambda x: x.reshape(n, m).sum(axis=1) - mu},
        options={"ftol": 1e-13, "maxiter": 2000},
    )
    oracle = exact_soft_oracle(source, target, C, lam)
    assert oracle.residual <= 1e-8
    assert oracle.objective <= result.fun + 1e-7
    assert oracle.objective == pytest.approx(result.fun, abs=1e-5)


def test_kl_nonincreasing_in_lambda():
    rng = np.random.default_rng(31)
    source = DiscreteMeasure.normalized(rng.normal(size=(6, 2)), rng.uniform(0.2, 1.0, 6))
    target = DiscreteMeasure.normalized(rng.normal(size=(6, 2)) + 1.0, rng.uniform(0.2, 1.0, 6))
    C = cost_matrix(WeightedCost(0.3, 2), source.support, target.support)
    kls = [exact_soft_oracle(source, target, C, lam).kl_term for lam in np.geomspace(1e-2, 1e4, 13)]
    assert all(a >= b - 1e-12 for a, b in zip(kls, kls[1:]))
    assert kls[-1] < 1e-3 * kls[0]



def test_soft_objective_below_hard_value(oracle_solutions):
    for _, _, _, lam, hard, solution in oracle_solutions:
        assert solution.objective <= hard + 1e-8
        if lam == 1e6:
            assert hard - solution.objective <= 1e-3 * max(hard, 1e-12) + 1e-10


def test_objective_decomposition(oracle_solutions):
    for _, _, _, lam, _, solution in oracle_solutions:
        assert abs(solution.objective - (lam * solution.kl_term + solution.transport_term)) <= 1e-9 * max(1.0, solution.objective)


def test_resolve_consistency(oracle_solutions):
    for _, _, C, _, _, solution in oracle_solutions:
        assert resolve_consistency(solution, C) <= 1e-6


def test_euler_lagrange_and_density_formula(oracle_solutions):
    for _, target, C, _, _, solution in oracle_solutions:
        assert el_residual(solution, target, C) <= 1e-6
        formula = perturbed_target_formula(solution, target, C)
        assert formula.disagreement <= 1e-6


def test_oracle_row_marginal_is_exact(oracle_solutions):
    for source, _, _, _, _, solution in oracle_solutions:
        rows = np.asarray(solution.plan.mass.sum(axis=1)).ravel()
        assert_allclose(rows, source.weights, atol=1e-12)


def test_tiny_lambda_collapses_to_nearest_target(two_atoms):
    source, target, C = two_atoms
    solution = exact_soft_oracle(source, target, C, 1e-9)
    assert_allclose(solution.perturbed_target, [1.0, 0.0], atol=1e-12)
    assert solution.kl_term == pytest.approx(math.log(2), abs=1e-9)


def test_large_lambda_recovers_monotone_plan(two_atoms):
    source, target, C = two_atoms
    solution = exact_soft_oracle(source, target, C, 1e9)
    assert_allclose(solution.plan.dense(), [[0.5, 0.0], [0.0, 0.5]], atol=1e-6)


def test_semi_relaxed_matches_oracle(two_atoms):
    source, target, C = two_atoms
    oracle = exact_soft_oracle(source, target, C, 1.0)
    annealed = annealed_semi_relaxed_sinkhorn(source, target, C, 1.0, 5000, 1e-10)
    assert annealed.solver == "semi-relaxed"
    assert len(annealed.eta_trace) == 8
    assert_allclose(annealed.perturbed_target, oracle.perturbed_target, atol=1e-3)
    assert annealed.objective == pytest.approx(oracle.objective, abs=5e-3)


@pytest.mark.parametrize("size", [8, 16])
def test_annealed_semi_relaxed_matches_oracle(size):
    rng = np.random.default_rng(size)
    source = DiscreteMeasure.normalized(rng.normal(size=(size, 2)), rng.uniform(0.2, 1.0, size))
    target = DiscreteMeasure.normalized(rng.normal(size=(size, 2)), rng.uniform(0.2, 1.0, size))
    C = cost_matrix(WeightedCost(0.5, 2), source.support, target.support)
    oracle = exact_soft_oracle(source, target, C, 1.0)
    annealed = annealed_semi_relaxed_sinkhorn(source, target, C, 1.0, 200000, 1e-7)
    assert annealed.eta_trace[-1] == pytest.approx(1e-4 * np.median(C))
    assert annealed.objective >= oracle.objective - 1e-6
    assert abs(annealed.objective - oracle.objective) <= 1e-3 * abs(oracle.objective)



def test_semi_relaxed_rows_are_exact():
    rng = np.random.default_rng(2)
    source = DiscreteMeasure.normalized(rng.normal(size=(20, 2)))
    target = DiscreteMeasure.normalized(rng.normal(size=(15, 2)))
    C = cost_matrix(WeightedCost(0.5, 2), source.support, target.support)
    solution = semi_relaxed_sinkhorn(source, target, C, 10.0, 0.05, 10000, 1e-9)
    rows = np.asarray(solution.plan.mass.sum(axis=1)).ravel()
    assert_allclose(rows, source.weights, atol=1e-12)
    assert solution.eta_trace == [0.05]


def test_balanced_sinkhorn_matches_target():
    rng = np.random.default_rng(3)
    source = DiscreteMeasure.normalized(rng.normal(size=(10, 1)))
    target = DiscreteMeasure.normalized(rng.normal(size=(12, 1)))
    C = cost_matrix(WeightedCost(1.0, 1), source.support, target.support)
    solution = sinkhorn(source, target, C, 0.05, 20000, 1e-10)
    assert solution.solver == "sinkhorn"
    assert math.isinf(solution.lam)
    assert_allclose(solution.perturbed_target, target.weights, atol=1e-8)


def test_log_domain_agrees_with_scaling():
    rng = np.random.default_rng(4)
    source = DiscreteMeasure.normalized(rng.normal(size=(8, 2)))
    target = DiscreteMeasure.normalized(rng.normal(size=(6, 2)))
    C = cost_matrix(WeightedCost(1.0, 2), source.support, target.support)
    scaled = semi_relaxed_sinkhorn(source, target, C, 1.0, 0.1, 5000, 1e-12, log_domain=False)
    logged = semi_relaxed_sinkhorn(source, target, C, 1.0, 0.1, 5000, 1e-12, log_domain=True)
    assert_allclose(scaled.plan.dense(), logged.plan.dense(), atol=1e-10)


def test_scaling_underflow_asks_for_log_domain(two_atoms):
    source, target, C = two_atoms
    with pytest.raises(SolverError, match="use log-domain"):
        semi_relaxed_sinkhorn(source, target, C, 1.0, 1e-3, 100, 1e-9, log_domain=False)


def test_sinkhorn_stalls_without_iterations():
    rng = np.random.default_rng(5)
    source = DiscreteMeasure.normalized(rng.normal(size=(6, 1)))
    target = DiscreteMeasure.normalized(rng.normal(size=(6, 1)))
    C = cost_matrix(WeightedCost(1.0, 1), source.support, target.support)
    with pytest.raises(SinkhornStalled) as error:
        semi_relaxed_sinkhorn(source, target, C, 1.0, 0.01, 1, 1e-14)
    assert error.value.iterations == 1
    assert "sinkhorn stalled" in str(error.value)


def test_eta_schedule_is_geometric():
    C = np.array([[0.0, 10.0], [10.0, 0.0]])
    etas = eta_schedule(C, stages=5)
    assert etas[0] == pytest.approx(0.5)
    assert etas[-1] == pytest.approx(5e-4)
    assert_allclose(etas[1:] / etas[:-1], (etas[1] / etas[0]) * np.ones(4))


def test_oracle_rejects_nonpositive_lambda(two_atoms):
    source, target, C = two_atoms
    with pytest.raises(SolverError):
        exact_soft_oracle(source, target, C, 0.0)
