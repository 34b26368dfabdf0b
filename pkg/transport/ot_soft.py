"""
Мягкая (semi-relaxed) задача Канторовича

    min  λ·KL(γᵀ1 ‖ ν) + <C, γ>   при γ ≥ 0, γ1 = μ

Энтропийный путь - полурелаксированный Синкхорн, точный путь - оракул
на лесах жёстких дуг (выпуклый сетевой симплекс).
"""
import math
from dataclasses import dataclass, field
from typing import List, NamedTuple, Optional, Tuple, Union

import numpy as np
from scipy import sparse
from scipy.special import expit, logsumexp, rel_entr

from config import ORACLE_MAX_ATOMS
from transport.errors import MeasureError, OracleUnconverged, SinkhornStalled, SolverError
from transport.measures import DiscreteMeasure
from transport.ot_exact import Coupling, exact_transport, plan_cost
from utils.logger import logger

# Доля η·median(C), ниже которой включается логарифмическая область
LOG_DOMAIN_THRESHOLD = 1e-3


@dataclass(frozen=True, eq=False)
class SoftSolution:
    """
    Решение мягкой задачи с двойственными и диагностическими полями

    potential - φ(x_i), нормированный так, что λ·log g_j + C_ij + φ_i = 0 на носителе;
    density_ratio - g_j = dν_{ε,λ}/dν в атомах цели;
    source_normalizer - D(x_i) = Σ_j exp(-C_ij/λ) ν_j;
    normalizer - Z, μ-среднее от Σ_j ν_j exp(-(C_ij + φ_i)/λ).
    """
    plan: Coupling
    target: DiscreteMeasure
    lam: float
    epsilon: Optional[float]
    potential: np.ndarray
    density_ratio: np.ndarray
    normalizer: float
    source_normalizer: np.ndarray
    objective: float
    kl_term: float
    transport_term: float
    solver: str
    iterations: int
    residual: float
    support_tol: float
    eta_trace: List[float] = field(default_factory=list)
    dual_potentials: Optional[Tuple[np.ndarray, np.ndarray]] = None

    def __post_init__(self):
        if self.target.size != self.plan.shape[1]:
            raise MeasureError("shape mismatch")
        columns = self.plan.column_sums()
        if np.max(np.abs(columns - self.density_ratio * self.target.weights)) > 1e-9:
            raise MeasureError("perturbed target differs from plan column sums")

    @property
    def perturbed_target(self) -> np.ndarray:
        """Массы ν_{ε,λ} в атомах цели"""
        return self.plan.column_sums()


class PerturbedTarget(NamedTuple):
    """Предсказание g_{ε,λ} по замкнутой формуле и его согласованность"""
    predicted: np.ndarray
    disagreement: float
    marginal_gap: float
    normalizer_gap: float


def kl_divergence(q: Union[DiscreteMeasure, np.ndarray], reference: Union[DiscreteMeasure, np.ndarray]) -> float:
    """
    KL(q ‖ ν) = Σ q_i log(q_i/ν_i), 0·log 0 = 0

    Returns:
        Неотрицательное число или +inf при нарушении абсолютной непрерывности
    """
    q = q.weights if isinstance(q, DiscreteMeasure) else np.asarray(q, dtype=float)
    nu = reference.weights if isinstance(reference, DiscreteMeasure) else np.asarray(reference, dtype=float)
    if q.shape != nu.shape:
        raise MeasureError("shape mismatch")
    terms = rel_entr(q, nu)
    if np.any(np.isinf(terms)):
        return math.inf
    return max(math.fsum(terms), 0.0)


def _check_instance(source: DiscreteMeasure, target: DiscreteMeasure, C: np.ndarray, lam: float) -> np.ndarray:
    C = np.asarray(C, dtype=float)
    if C.shape != (source.size, target.size):
        raise MeasureError("shape mismatch")
    if not np.all(np.isfinite(C)):
        raise MeasureError("cost matrix must be finite")
    if not lam > 0:
        raise SolverError("lambda must be positive")
    if np.any(target.weights <= 0):
        raise MeasureError("target atoms outside the reference support are not allowed")
    return C


def _soft_solution(
    source: DiscreteMeasure,
    target: DiscreteMeasure,
    C: np.ndarray,
    lam: float,
    gamma: np.ndarray,
    *,
    solver: str,
    epsilon: Optional[float],
    iterations: int,
    residual: float,
    support_tol: float,
    eta_trace: Optional[List[float]] = None,
    dual_potentials: Optional[Tuple[np.ndarray, np.ndarray]] = None,
) -> SoftSolution:
    """Собрать SoftSolution по плотной матрице плана"""
    nu = target.weights
    mass = sparse.csr_matrix(gamma)
    mass.eliminate_zeros()
    plan = Coupling(source, target.support, mass)
    q = plan.column_sums()
    ratio = q / nu
    transport = plan_cost(plan, C)
    kl = kl_divergence(q, nu)

    if math.isinf(lam):
        objective = transport
        potential = dual_potentials[0] if dual_potentials is not None else np.zeros(source.size)
        source_normalizer = np.ones(source.size)
        normalizer = 1.0
    else:
        objective = transport + lam * kl
        with np.errstate(divide="ignore"):
            r = lam * np.log(ratio)[None, :] + C
        weights = np.where(gamma > 0, gamma, 0.0)
        row_mass = weights.sum(axis=1)
        safe = np.where(weights > 0, r, 0.0)
        potential = -np.divide((weights * safe).sum(axis=1), row_mass, out=np.zeros(source.size), where=row_mass > 0)
        log_d = logsumexp(-C / lam + np.log(nu)[None, :], axis=1)
        source_normalizer = np.exp(log_d)
        row_z = np.exp(np.minimum(log_d - potential / lam, 700.0))
        normalizer = float(source.weights @ row_z)

    return SoftSolution(
        plan=plan,
        target=target,
        lam=float(lam),
        epsilon=epsilon,
        potential=potential,
        density_ratio=ratio,
        normalizer=normalizer,
        source_normalizer=source_normalizer,
        objective=objective,
        kl_term=kl,
        transport_term=transport,
        solver=solver,
        iterations=iterations,
        residual=residual,
        support_tol=support_tol,
        eta_trace=list(eta_trace or []),
        dual_potentials=dual_potentials,
    )


def _use_log_domain(C: np.ndarray, eta: float) -> bool:
    median = float(np.median(C))
    scale = median if median > 0 else max(float(np.mean(C)), 1.0)
    return eta < LOG_DOMAIN_THRESHOLD * scale


def _scaling_iterations(mu, nu, C, expo, eta, max_iterations, tolerance, init):
    """Итерации в исходной (масштабной) области; возвращает потенциалы f, g"""
    K = np.exp(-C / eta)
    if init is None:
        v = np.ones(nu.size)
    else:
        v = np.exp(init[1] / eta)
    violation = math.inf
    iteration = 0
    for iteration in range(1, max_iterations + 1):
        Kv = K @ v
        if not np.all(Kv > 0) or not np.all(np.isfinite(Kv)):
            raise SolverError("use log-domain")
        u = mu / Kv
        Ktu = K.T @ u
        if not np.all(Ktu > 0) or not np.all(np.isfinite(Ktu)):
            raise SolverError("use log-domain")
        v = (nu / Ktu) ** expo
        violation = float(np.abs(u * (K @ v) - mu).sum())
        if violation < tolerance:
            break
    with np.errstate(divide="ignore"):
        g = eta * np.log(v)
    return g, iteration, violation


def _log_iterations(mu, nu, C, expo, eta, max_iterations, tolerance, init):
    """Те же обновления в терминах потенциалов через logsumexp"""
    with np.errstate(divide="ignore"):
        log_mu = np.log(mu)
    log_nu = np.log(nu)
    g = np.zeros(nu.size) if init is None else init[1].copy()
    violation = math.inf
    iteration = 0
    for iteration in range(1, max_iterations + 1):
        f = eta * log_mu - eta * logsumexp((g[None, :] - C) / eta, axis=1)
        g = expo * (eta * log_nu - eta * logsumexp((f[:, None] - C) / eta, axis=0))
        log_rows = f / eta + logsumexp((g[None, :] - C) / eta, axis=1)
        violation = float(np.abs(np.exp(log_rows) - mu).sum())
        if violation < tolerance:
            break
    return g, iteration, violation


def _sinkhorn_stage(mu, nu, C, lam, eta, max_iterations, tolerance, log_domain, init):
    """
    Один прогон итераций при фиксированном η

    Returns:
        Кортеж (f, g, число итераций, нарушение строк до проекции)
    """
    expo = 1.0 if math.isinf(lam) else lam / (lam + eta)
    automatic = log_domain is None
    if automatic:
        log_domain = _use_log_domain(C, eta)
        if log_domain:
            logger.debug(f"η={eta:.3g}: включена логарифмическая область")
    iterate = _log_iterations if log_domain else _scaling_iterations
    try:
        g, iterations, violation = iterate(mu, nu, C, expo, eta, max_iterations, tolerance, init)
    except SolverError:
        if not automatic:
            raise
        logger.debug(f"η={eta:.3g}: переполнение масштабов, переход в логарифмическую область")
        g, iterations, violation = _log_iterations(mu, nu, C, expo, eta, max_iterations, tolerance, init)
    # финальная проекция строк: маргинал источника точный
    with np.errstate(divide="ignore"):
        f = eta * np.log(mu) - eta * logsumexp((g[None, :] - C) / eta, axis=1)
    return f, g, iterations, violation


def _entropic_plan(f: np.ndarray, g: np.ndarray, C: np.ndarray, eta: float) -> np.ndarray:
    return np.exp((f[:, None] + g[None, :] - C) / eta)


def semi_relaxed_sinkhorn(
    source: DiscreteMeasure,
    target: DiscreteMeasure,
    C: np.ndarray,
    lam: float,
    eta: float,
    max_iterations: int,
    tolerance: float,
    *,
    log_domain: Optional[bool] = None,
    init: Optional[Tuple[np.ndarray, np.ndarray]] = None,
    epsilon: Optional[float] = None,
) -> SoftSolution:
    """
    Полурелаксированный Синкхорн

    u = μ / (Kv), v = (ν / Kᵀu)^{λ/(λ+η)}, K = exp(-C/η); λ = inf даёт сбалансированный случай.

    Args:
        source: Мера источника (жёсткий маргинал)
        target: Опорная мера цели
        C: Матрица стоимости
        lam: Вес KL-штрафа
        eta: Энтропийная регуляризация
        max_iterations: Предел итераций
        tolerance: Допуск по нарушению маргинала строк
        log_domain: Принудительный выбор области (None - автоматически)
        init: Потенциалы (f, g) для тёплого старта
        epsilon: ε стоимости, только для отчёта

    Returns:
        SoftSolution с точными суммами строк
    """
    C = _check_instance(source, target, C, lam)
    if not eta > 0:
        raise SolverError("eta must be positive")
    if not tolerance > 0:
        raise SolverError("tolerance must be positive")
    f, g, iterations, violation = _sinkhorn_stage(
        source.weights, target.weights, C, lam, eta, max_iterations, tolerance, log_domain, init
    )
    if violation >= tolerance:
        raise SinkhornStalled(violation, iterations)
    logger.debug(f"Синкхорн λ={lam:.3g} η={eta:.3g}: {iterations} итераций, нарушение {violation:.2e}")
    return _soft_solution(
        source, target, C, lam, _entropic_plan(f, g, C, eta),
        solver="sinkhorn" if math.isinf(lam) else "semi-relaxed",
        epsilon=epsilon,
        iterations=iterations,
        residual=violation,
        support_tol=1e-4,
        eta_trace=[eta],
        dual_potentials=(f, g),
    )


def sinkhorn(
    source: DiscreteMeasure,
    target: DiscreteMeasure,
    C: np.ndarray,
    eta: float,
    max_iterations: int,
    tolerance: float,
    **kwargs,
) -> SoftSolution:
    """Сбалансированный энтропийный транспорт (λ = inf)"""
    return semi_relaxed_sinkhorn(source, target, C, math.inf, eta, max_iterations, tolerance, **kwargs)


def eta_schedule(C: np.ndarray, stages: int = 8, eta_start: Optional[float] = None, eta_final: Optional[float] = None) -> np.ndarray:
    """Геометрическое расписание η от median(C)/10 до 1e-4·median(C)"""
    median = float(np.median(C))
    scale = median if median > 0 else max(float(np.mean(C)), 1.0)
    start = scale / 10 if eta_start is None else eta_start
    final = 1e-4 * scale if eta_final is None else eta_final
    if final > start:
        return np.array([final])
    return np.geomspace(start, final, max(int(stages), 1))


def annealed_semi_relaxed_sinkhorn(
    source: DiscreteMeasure,
    target: DiscreteMeasure,
    C: np.ndarray,
    lam: float,
    max_iterations: int,
    tolerance: float,
    *,
    stages: int = 8,
    eta_start: Optional[float] = None,
    eta_final: Optional[float] = None,
    epsilon: Optional[float] = None,
) -> SoftSolution:
    """Синкхорн с отжигом η и тёплым стартом потенциалов между стадиями"""
    C = _check_instance(source, target, C, lam)
    etas = eta_schedule(C, stages, eta_start, eta_final)
    init = None
    total = 0
    violation = math.inf
    for k, eta in enumerate(etas):
        f, g, iterations, violation = _sinkhorn_stage(
            source.weights, target.weights, C, lam, float(eta), max_iterations, tolerance, None, init
        )
        total += iterations
        if violation >= tolerance and k < len(etas) - 1:
            logger.debug(f"Стадия η={eta:.3g} не сошлась ({violation:.2e}), продолжаем отжиг")
        init = (f, g)
    if violation >= tolerance:
        raise SinkhornStalled(violation, total)
    eta = float(etas[-1])
    logger.debug(f"Отжиг λ={lam:.3g}: {len(etas)} стадий, {total} итераций")
    return _soft_solution(
        source, target, C, lam, _entropic_plan(f, g, C, eta),
        solver="semi-relaxed",
        epsilon=epsilon,
        iterations=total,
        residual=violation,
        support_tol=1e-4,
        eta_trace=[float(e) for e in etas],
        dual_potentials=(f, g),
    )


class _SoftForest:
    """
    Лес жёстких дуг (i, j) точного оракула

    Внутри компоненты потенциалы связаны φ_i + ψ_j = C_ij, а общий сдвиг
    компоненты выбирается из баланса: Σ q_j = Σ μ_i, q_j = ν_j exp(-Ψ_j/λ).
    """

    def __init__(self, mu: np.ndarray, nu: np.ndarray, C: np.ndarray, lam: float):
        self.mu, self.nu, self.C, self.lam = mu, nu, C, lam
        self.n, self.m = C.shape
        self.log_nu = np.log(nu)
        self.neighbors: List[set] = [set() for _ in range(self.n + self.m)]
        self._initial_stars()

    def link(self, i: int, j: int) -> None:
        self.neighbors[i].add(self.n + j)
        self.neighbors[self.n + j].add(i)

    def unlink(self, i: int, j: int) -> None:
        self.neighbors[i].discard(self.n + j)
        self.neighbors[self.n + j].discard(i)

    def _initial_stars(self) -> None:
        """Звёзды: у каждого узла меньшей доли ровно одна дуга, у большей хотя бы одна"""
        C, n, m = self.C, self.n, self.m
        if m >= n:
            owner = list(np.argmin(C, axis=0))
            for i in range(n):
                if i in owner:
                    continue
                donors = [j for j in range(m) if owner.count(owner[j]) > 1]
                j = min(donors, key=lambda col: (C[i, col], col))
                owner[j] = i
            for j, i in enumerate(owner):
                self.link(int(i), j)
        else:
            owner = list(np.argmin(C, axis=1))
            for j in range(m):
                if j in owner:
                    continue
                donors = [i for i in range(n) if owner.count(owner[i]) > 1]
                i = min(donors, key=lambda row: (C[row, j], row))
                owner[i] = j
            for i, j in enumerate(owner):
                self.link(i, int(j))

    def components(self):
        """Метки компонент, порядок обхода, относительные потенциалы и родители"""
        n, C = self.n, self.C
        total = n + self.m
        labels = np.full(total, -1)
        parent = np.full(total, -1)
        rel = np.zeros(total)
        comps: List[List[int]] = []
        for start in range(total):
            if labels[start] >= 0:
                continue
            k = len(comps)
            labels[start] = k
            order = [start]
            for node in order:
                for neighbor in self.neighbors[node]:
                    if labels[neighbor] >= 0:
                        continue
                    labels[neighbor] = k
                    parent[neighbor] = node
                    if node < n:
                        rel[neighbor] = C[node, neighbor - n] - rel[node]
                    else:
                        rel[neighbor] = C[neighbor, node - n] - rel[node]
                    order.append(neighbor)
            comps.append(order)
        return labels, comps, rel, parent

    def state(self, pending: Optional[Tuple[int, int, float]] = None) -> dict:
        """Абсолютные потенциалы и массы q при заданном отложенном потоке по (i, j)"""
        n = self.n
        labels, comps, rel, parent = self.components()
        count = len(comps)
        rows_supply = np.zeros(count)
        np.add.at(rows_supply, labels[:n], self.mu)
        supply = rows_supply.copy()
        if pending is not None:
            i, j, theta = pending
            supply[labels[i]] -= theta
            supply[labels[n + j]] += theta
        col_labels = labels[n:]
        log_w = self.log_nu - rel[n:] / self.lam
        log_sum = np.full(count, -np.inf)
        np.logaddexp.at(log_sum, col_labels, log_w)
        with np.errstate(divide="ignore", invalid="ignore"):
            # пустой столбец: масса ниже представимой не считается нарушением KKT
            shift = self.lam * (np.log(np.maximum(supply, np.finfo(float).tiny)) - log_sum)
            w = np.exp(log_w - log_sum[col_labels])
        q = w * supply[col_labels]
        return {
            "labels": labels, "comps": comps, "rel": rel, "parent": parent,
            "rows_supply": rows_supply, "supply": supply, "log_sum": log_sum,
            "shift": shift, "w": w, "q": q,
        }

    def reduced_costs(self, st: dict) -> np.ndarray:
        """C_ij - Φ_i - Ψ_j; сдвиги компонент вычитаются разностью, внутри компоненты точно ноль"""
        n, rel, shift, labels = self.n, st["rel"], st["shift"], st["labels"]
        gap = shift[labels[:n]][:, None] - shift[labels[n:]][None, :]
        with np.errstate(invalid="ignore"):
            gap = np.where(labels[:n][:, None] == labels[n:][None, :], 0.0, gap)
        return self.C - rel[:n][:, None] - rel[n:][None, :] - gap

    def flows(self, st: dict, comp_ids, pending: Optional[Tuple[int, int, float]] = None) -> dict:
        """Потоки по дугам деревьев как аффинные функции θ: {(i, j): (f0, f1)}"""
        n = self.n
        labels, comps, parent = st["labels"], st["comps"], st["parent"]
        col_labels = labels[n:]
        balance0 = np.concatenate([self.mu, -st["q"]])
        balance1 = np.zeros(n + self.m)
        if pending is not None:
            i, j, theta = pending
            balance0[i] -= theta
            balance0[n + j] += theta
            balance1[i] -= 1.0
            balance1[n + j] += 1.0
            d_supply = np.zeros(len(comps))
            d_supply[labels[i]] -= 1.0
            d_supply[labels[n + j]] += 1.0
            balance1[n:] -= st["w"] * d_supply[col_labels]
        result = {}
        for k in comp_ids:
            for node in reversed(comps[k][1:]):
                up = parent[node]
                if node < n:
                    result[(node, up - n)] = (balance0[node], balance1[node])
                else:
                    result[(up, node - n)] = (-balance0[node], -balance1[node])
                balance0[up] += balance0[node]
                balance1[up] += balance1[node]
        return result

    def pivot(self, i: int, j: int) -> None:
        """Ввести дугу (i, j): толкать поток θ до касания или до блокировки дуг"""
        n, C, lam = self.n, self.C, self.lam
        theta = 0.0
        for _ in range(2 * (n + self.m) + 2):
            pending = (i, j, theta)
            st = self.state(pending)
            labels = st["labels"]
            ki, kj = labels[i], labels[n + j]
            if not any(node >= n for node in st["comps"][ki]):
                # строка i отдала всю массу по (i, j)
                self.link(i, j)
                return
            arcs = self.flows(st, {ki, kj}, pending)
            block_step, block_arc = math.inf, None
            for arc in sorted(arcs):
                f0, f1 = arcs[arc]
                if f1 < -1e-14:
                    step = max(f0, 0.0) / -f1
                    if step < block_step:
                        block_step, block_arc = step, arc
            if ki == kj:
                if block_arc is None:
                    raise SolverError("unbounded cycle in soft oracle")
                merge_step = math.inf
            else:
                rel = st["rel"]
                kappa = C[i, j] - rel[i] - rel[n + j] + lam * (st["log_sum"][ki] - st["log_sum"][kj])
                log_rho = -kappa / lam
                s1, s2 = st["rows_supply"][ki], st["rows_supply"][kj]
                theta_star = s1 * expit(log_rho) - s2 * expit(-log_rho)
                merge_step = max(theta_star - theta, 0.0)
            if merge_step <= block_step:
                self.link(i, j)
                return
            theta += block_step
            self.unlink(*block_arc)
        raise SolverError("soft oracle pivot did not terminate")

    def plan(self) -> np.ndarray:
        st = self.state()
        gamma = np.zeros((self.n, self.m))
        for (i, j), (f0, _) in self.flows(st, range(len(st["comps"]))).items():
            gamma[i, j] = max(f0, 0.0)
        return gamma


def exact_soft_oracle(
    source: DiscreteMeasure,
    target: DiscreteMeasure,
    C: np.ndarray,
    lam: float,
    *,
    max_pivots: Optional[int] = None,
    epsilon: Optional[float] = None,
) -> SoftSolution:
    """
    Точное решение мягкой задачи для малых инстансов

    Активные множества - леса жёстких дуг. На каждом шаге вводится дуга
    с наиболее отрицательной приведённой стоимостью C_ij - Φ_i - Ψ_j, поток
    по ней растёт, пока дуга не станет жёсткой; обнулившиеся дуги удаляются.
    Останов при KKT-невязке ниже 1e-8.
    """
    C = _check_instance(source, target, C, lam)
    n, m = C.shape
    if max(n, m) > ORACLE_MAX_ATOMS:
        raise SolverError(f"oracle instance {n}x{m} exceeds {ORACLE_MAX_ATOMS} atoms")
    if math.isinf(lam):
        raise SolverError("lambda must be finite for the soft oracle")

    forest = _SoftForest(source.weights, target.weights, C, lam)
    # сдвиги компонент порядка λ, их разности точны лишь до λ·eps
    tol = max(1e-12 * max(1.0, float(np.max(np.abs(C)))), 4e-15 * lam)
    if max_pivots is None:
        max_pivots = 100 * n * m + 100
    residual = math.inf
    pivots = 0
    for pivots in range(max_pivots + 1):
        st = forest.state()
        reduced = forest.reduced_costs(st)
        flat = int(np.argmin(reduced))
        residual = max(0.0, -float(reduced.flat[flat]))
        if residual <= tol:
            break
        forest.pivot(*divmod(flat, m))
    if residual > max(1e-8, tol):
        raise OracleUnconverged(residual)

    gamma = forest.plan()
    logger.debug(f"Оракул λ={lam:.3g} {n}x{m}: {pivots} итераций, KKT {residual:.2e}")
    return _soft_solution(
        source, target, C, lam, gamma,
        solver="soft-oracle",
        epsilon=epsilon,
        iterations=pivots,
        residual=residual,
        support_tol=1e-12,
    )


def _supported(solution: SoftSolution, support_tol: Optional[float]) -> np.ndarray:
    gamma = solution.plan.dense()
    tol = solution.support_tol if support_tol is None else support_tol
    row_max = gamma.max(axis=1, keepdims=True)
    return (gamma > 0) & (gamma >= tol * row_max)


def el_residual(
    solution: SoftSolution,
    target: DiscreteMeasure,
    C: np.ndarray,
    support_tol: Optional[float] = None,
) -> float:
    """
    Разброс r_ij = λ·log g_j + C_ij по носителю каждой строки

    Носитель строки - элементы не меньше support_tol от максимума строки
    (по умолчанию - допуск, с которым решение было получено).
    """
    C = np.asarray(C, dtype=float)
    if C.shape != solution.plan.shape or target.size != C.shape[1]:
        raise MeasureError("shape mismatch")
    support = _supported(solution, support_tol)
    ratio = solution.plan.column_sums() / target.weights
    if np.any(ratio[np.any(support, axis=0)] <= 0):
        raise MeasureError("support inconsistency")
    lam = solution.lam if math.isfinite(solution.lam) else 0.0
    with np.errstate(divide="ignore"):
        r = lam * np.log(ratio)[None, :] + C
    spread = 0.0
    for i in range(C.shape[0]):
        values = r[i, support[i]]
        if values.size > 1:
            spread = max(spread, float(values.max() - values.min()))
    return spread


def perturbed_target_formula(
    solution: SoftSolution,
    target: DiscreteMeasure,
    C: np.ndarray,
    support_tol: Optional[float] = None,
) -> PerturbedTarget:
    """
    Предсказание ν_{ε,λ}(y_j) = exp(-C_ij/λ)·ν_j / D(x_i) по каждой опорной паре

    D(x_i) берётся в виде Z·exp(φ_i/λ) с Z = 1 при нормировке φ из решения;
    на строках с полным носителем это совпадает с Σ_j exp(-C_ij/λ) ν_j.

    Returns:
        PerturbedTarget: предсказание по столбцам, максимальное относительное
        расхождение между строками, отклонение от сумм столбцов плана и
        расхождение интегрального и двойственного нормировщиков
    """
    C = np.asarray(C, dtype=float)
    if C.shape != solution.plan.shape:
        raise MeasureError("shape mismatch")
    if not math.isfinite(solution.lam):
        q = target.weights.copy()
        return PerturbedTarget(q, 0.0, float(np.max(np.abs(q - solution.perturbed_target))), 0.0)
    lam = solution.lam
    support = _supported(solution, support_tol)
    gamma = solution.plan.dense()
    log_pred = np.log(target.weights)[None, :] - (C + solution.potential[:, None]) / lam
    pred = np.exp(np.minimum(log_pred, 700.0))

    predicted = np.zeros(C.shape[1])
    disagreement = 0.0
    for j in range(C.shape[1]):
        rows = np.flatnonzero(support[:, j])
        if rows.size == 0:
            continue
        values = pred[rows, j]
        predicted[j] = float(values @ gamma[rows, j] / gamma[rows, j].sum())
        top = values.max()
        if rows.size > 1 and top > 0:
            disagreement = max(disagreement, float((top - values.min()) / top))

    columns = solution.perturbed_target
    marginal_gap = float(np.max(np.abs(predicted - columns)))
    log_z = np.log(np.maximum(solution.source_normalizer, np.finfo(float).tiny)) - solution.potential / lam
    normalizer_gap = float(np.max(np.abs(1.0 - np.exp(np.minimum(log_z, 700.0)))))
    return PerturbedTarget(predicted, disagreement, marginal_gap, normalizer_gap)


def resolve_consistency(solution: SoftSolution, C: np.ndarray) -> float:
    """|OT_ε(μ, ν_{ε,λ}) - <C, γ_{ε,λ}>|: план должен быть оптимален для своего маргинала"""
    C = np.asarray(C, dtype=float)
    result = exact_transport(solution.plan.source.weights, solution.perturbed_target, C)
    return abs(result.value - plan_cost(solution.plan, C))
