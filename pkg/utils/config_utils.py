"""
Утилиты для работы с файлами конфигурации запуска (JSON / YAML)
"""
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import yaml

from config import DEFAULT_EPSILONS, DEFAULT_LAMBDAS, OUTPUT_DIR
from transport.errors import ConfigError
from utils.logger import logger

EXPERIMENTS = ("solve", "kr", "sweep-hard", "sweep-soft", "diagram", "kl-decay", "dynamic", "stability", "diagonal")
SWEEP_EXPERIMENTS = ("sweep-hard", "sweep-soft", "diagram", "kl-decay", "stability", "diagonal")
SOLVER_KINDS = ("exact", "sinkhorn", "soft-oracle", "semi-relaxed")
FIXTURE_KINDS = ("gaussian", "grid_density", "atoms")

TOP_LEVEL_KEYS = {"experiment", "fixture", "cost", "solver", "dynamic", "stability", "diagonal", "ordering", "output", "seed"}
GAUSSIAN_KEYS = {"source", "target", "grid", "samples", "closed_form"}
SOLVER_KEYS = {"kind", "lambda", "lambdas", "eta", "eta_final", "stages", "tolerance", "max_iterations"}

DEFAULT_TIMES = (0.0, 0.25, 0.5, 0.75, 1.0)
DEFAULT_BANDWIDTHS = (0.5, 0.2, 0.05)
DEFAULT_STABILITY_EPSILONS = (1e-1, 1e-2, 1e-3)


@dataclass
class FixtureSpec:
    """Источник фикстуры: ровно один вид"""
    kind: str
    source: Any
    target: Any
    nodes: int = 16
    radius: float = 5.0
    samples: Optional[int] = None
    closed_form: bool = True


@dataclass
class SolverSpec:
    """Параметры решателя"""
    kind: str = "exact"
    lam: Optional[float] = None
    lambdas: List[float] = field(default_factory=lambda: list(DEFAULT_LAMBDAS))
    eta: Optional[float] = None
    eta_final: Optional[float] = None
    stages: int = 8
    tolerance: Optional[float] = None
    max_iterations: Optional[int] = None


@dataclass
class RunConfig:
    """Проверенная конфигурация запуска"""
    experiment: str
    fixture: FixtureSpec
    epsilons: List[float]
    solver: SolverSpec
    times: List[float] = field(default_factory=lambda: list(DEFAULT_TIMES))
    t: float = 0.5
    bandwidths: List[float] = field(default_factory=lambda: list(DEFAULT_BANDWIDTHS))
    schedule: List[Tuple[float, float]] = field(default_factory=list)
    ordering: Optional[List[int]] = None
    output_dir: str = OUTPUT_DIR
    seed: int = 0
    raw: Dict[str, Any] = field(default_factory=dict)

    @property
    def epsilon(self) -> float:
        return self.epsilons[0]


def _number(value: Any) -> Optional[float]:
    """Число или None; строки вида '1e-3' принимаются (YAML 1.1 читает их как строки)"""
    if isinstance(value, bool):
        return None
    if isinstance(value, (int, float)):
        return float(value)
    if isinstance(value, str):
        try:
            return float(value)
        except ValueError:
            return None
    return None


def _number_list(value: Any) -> Optional[List[float]]:
    if not isinstance(value, list) or not value:
        return None
    numbers = [_number(v) for v in value]
    return None if any(n is None for n in numbers) else numbers


def _unknown_keys(data: Dict[str, Any], allowed: set, path: str, errors: List[str]) -> None:
    for key in sorted(set(data) - allowed):
        errors.append(f"{path}{key}: неизвестный ключ")


def _check_gaussian_side(side: Any, path: str, errors: List[str]) -> None:
    if not isinstance(side, dict):
        errors.append(f"{path}: ожидается объект с 'mean' и 'covariance'")
        return
    _unknown_keys(side, {"mean", "covariance"}, f"{path}.", errors)
    mean = _number_list(side.get("mean"))
    if mean is None:
        errors.append(f"{path}.mean: ожидается непустой список чисел")
    covariance = side.get("covariance")
    rows = [_number_list(row) for row in covariance] if isinstance(covariance, list) else None
    if not rows or any(row is None for row in rows):
        errors.append(f"{path}.covariance: ожидается матрица чисел")
    elif mean is not None and (len(rows) != len(mean) or any(len(row) != len(mean) for row in rows)):
        errors.append(f"{path}.covariance: размер не совпадает с mean")


def _check_fixture(fixture: Any, errors: List[str]) -> None:
    if not isinstance(fixture, dict):
        errors.append("fixture: отсутствует обязательный раздел")
        return
    _unknown_keys(fixture, set(FIXTURE_KINDS), "fixture.", errors)
    present = [kind for kind in FIXTURE_KINDS if kind in fixture]
    if not present:
        errors.append("fixture: нужен один из ключей 'gaussian', 'grid_density', 'atoms'")
        return
    if len(present) > 1:
        errors.append("fixture: конфликтующие ключи " + " и ".join(f"'{kind}'" for kind in present))
        return
    kind = present[0]
    body = fixture[kind]
    if not isinstance(body, dict):
        errors.append(f"fixture.{kind}: ожидается объект")
        return
    if kind == "gaussian":
        _unknown_keys(body, GAUSSIAN_KEYS, "fixture.gaussian.", errors)
        for side in ("source", "target"):
            _check_gaussian_side(body.get(side), f"fixture.gaussian.{side}", errors)
        grid = body.get("grid", {})
        if not isinstance(grid, dict):
            errors.append("fixture.gaussian.grid: ожидается объект")
        else:
            _unknown_keys(grid, {"nodes", "radius"}, "fixture.gaussian.grid.", errors)
            nodes = grid.get("nodes", 16)
            if not isinstance(nodes, int) or isinstance(nodes, bool) or nodes < 2:
                errors.append("fixture.gaussian.grid.nodes: ожидается целое ≥ 2")
            radius = _number(grid.get("radius", 5.0))
            if radius is None or radius <= 0:
                errors.append("fixture.gaussian.grid.radius: ожидается положительное число")
        samples = body.get("samples")
        if samples is not None and (not isinstance(samples, int) or isinstance(samples, bool) or samples < 1):
            errors.append("fixture.gaussian.samples: ожидается положительное целое")
        if not isinstance(body.get("closed_form", True), bool):
            errors.append("fixture.gaussian.closed_form: ожидается true/false")
    else:
        _unknown_keys(body, {"source", "target"}, f"fixture.{kind}.", errors)
        for side in ("source", "target"):
            if not isinstance(body.get(side), str):
                errors.append(f"fixture.{kind}.{side}: ожидается путь к файлу")


def _check_cost(cost: Any, errors: List[str]) -> None:
    if not isinstance(cost, dict):
        errors.append("cost: ожидается объект")
        return
    _unknown_keys(cost, {"epsilon", "epsilons"}, "cost.", errors)
    if "epsilon" in cost and "epsilons" in cost:
        errors.append("cost: конфликтующие ключи 'epsilon' и 'epsilons'")
        return
    if "epsilon" in cost:
        values = [_number(cost["epsilon"])]
        if values[0] is None:
            errors.append("cost.epsilon: ожидается число")
            return
    elif "epsilons" in cost:
        values = _number_list(cost["epsilons"])
        if values is None:
            errors.append("cost.epsilons: ожидается непустой список чисел")
            return
    else:
        errors.append("cost: нужен 'epsilon' или 'epsilons'")
        return
    if any(not 0 < v <= 1 for v in values):
        errors.append("cost: ε должны лежать в (0, 1]")


def _check_solver(solver: Any, errors: List[str]) -> None:
    if not isinstance(solver, dict):
        errors.append("solver: ожидается объект")
        return
    _unknown_keys(solver, SOLVER_KEYS, "solver.", errors)
    kind = solver.get("kind", "exact")
    if kind not in SOLVER_KINDS:
        errors.append(f"solver.kind: неизвестный решатель '{kind}'")
    if "lambda" in solver and "lambdas" in solver:
        errors.append("solver: конфликтующие ключи 'lambda' и 'lambdas'")
    if "lambda" in solver:
        lam = _number(solver["lambda"])
        if lam is None or lam <= 0:
            errors.append("solver.lambda: ожидается положительное число")
    if "lambdas" in solver:
        lams = _number_list(solver["lambdas"])
        if lams is None or any(v <= 0 for v in lams):
            errors.append("solver.lambdas: ожидается список положительных чисел")
    for key in ("eta", "eta_final", "tolerance"):
        if key in solver:
            value = _number(solver[key])
            if value is None or value <= 0:
                errors.append(f"solver.{key}: ожидается положительное число")
    for key in ("max_iterations", "stages"):
        if key in solver:
            value = solver[key]
            if not isinstance(value, int) or isinstance(value, bool) or value < 1:
                errors.append(f"solver.{key}: ожидается положительное целое")
    if kind in ("sinkhorn", "semi-relaxed"):
        for key in ("tolerance", "max_iterations"):
            if key not in solver:
                errors.append(f"solver.{key}: обязателен для решателя '{kind}'")
        if "eta" not in solver and "eta_final" not in solver:
            errors.append(f"solver.eta: обязателен для решателя '{kind}'")


def validate_config(data: Any, experiment: Optional[str] = None) -> Tuple[bool, List[str]]:
    """
    Валидация конфигурации запуска (строгая: неизвестные ключи отклоняются)

    Args:
        data: Данные конфигурации
        experiment: Подкоманда, если известна

    Returns:
        Кортеж (валидна ли конфигурация, список ошибок с путями ключей)
    """
    errors: List[str] = []
    if not isinstance(data, dict):
        return False, ["<root>: ожидается объект"]
    _unknown_keys(data, TOP_LEVEL_KEYS, "", errors)

    selected = data.get("experiment", experiment)
    if selected is None:
        errors.append("experiment: не задан эксперимент")
    elif selected not in EXPERIMENTS:
        errors.append(f"experiment: неизвестный эксперимент '{selected}'")
    elif experiment is not None and "experiment" in data and data["experiment"] != experiment:
        errors.append(f"experiment: конфликт '{data['experiment']}' и подкоманды '{experiment}'")

    _check_fixture(data.get("fixture"), errors)
    if "cost" in data:
        _check_cost(data["cost"], errors)
    if "solver" in data:
        _check_solver(data["solver"], errors)

    solver = data.get("solver") if isinstance(data.get("solver"), dict) else {}
    cost = data.get("cost") if isinstance(data.get("cost"), dict) else {}
    if selected in EXPERIMENTS and selected not in SWEEP_EXPERIMENTS:
        if "lambdas" in solver:
            errors.append("solver.lambdas: λ list requires a sweep experiment")
        if "epsilons" in cost:
            errors.append("cost.epsilons: ε list requires a sweep experiment")

    dynamic = data.get("dynamic")
    if dynamic is not None:
        if not isinstance(dynamic, dict):
            errors.append("dynamic: ожидается объект")
        else:
            _unknown_keys(dynamic, {"times", "t"}, "dynamic.", errors)
            times = _number_list(dynamic.get("times", list(DEFAULT_TIMES)))
            if times is None or any(not 0 <= v <= 1 for v in times):
                errors.append("dynamic.times: time outside [0, 1]")
            elif any(b <= a for a, b in zip(times, times[1:])):
                errors.append("dynamic.times: моменты должны строго возрастать")
            t = _number(dynamic.get("t", 0.5))
            if t is None or not 0 < t < 1:
                errors.append("dynamic.t: ожидается число из (0, 1)")

    stability = data.get("stability")
    if stability is not None:
        bandwidths = _number_list(stability.get("bandwidths")) if isinstance(stability, dict) else None
        if bandwidths is None or any(v < 0 for v in bandwidths):
            errors.append("stability.bandwidths: ожидается список неотрицательных чисел")
        elif isinstance(stability, dict):
            _unknown_keys(stability, {"bandwidths"}, "stability.", errors)

    diagonal = data.get("diagonal")
    if diagonal is not None:
        schedule = diagonal.get("schedule") if isinstance(diagonal, dict) else None
        pairs = [_number_list(p) for p in schedule] if isinstance(schedule, list) and schedule else None
        if not pairs or any(p is None or len(p) != 2 or not 0 < p[0] <= 1 or p[1] <= 0 for p in pairs):
            errors.append("diagonal.schedule: ожидается список пар [ε, λ]")

    ordering = data.get("ordering")
    if ordering is not None:
        if not isinstance(ordering, list) or sorted(ordering) != list(range(len(ordering))):
            errors.append("ordering: ожидается перестановка 0..d-1")

    output = data.get("output")
    if output is not None:
        if not isinstance(output, dict) or not isinstance(output.get("directory", ""), str):
            errors.append("output.directory: ожидается строка")
        else:
            _unknown_keys(output, {"directory"}, "output.", errors)

    seed = data.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        errors.append("seed: ожидается целое число")

    return len(errors) == 0, errors


def load_config_data(path: str) -> Dict[str, Any]:
    """Прочитать JSON или YAML по расширению файла"""
    file_path = Path(path)
    if not file_path.exists():
        raise ConfigError([f"{path}: файл не найден"])
    text = file_path.read_text(encoding="utf-8")
    try:
        if file_path.suffix in (".yaml", ".yml"):
            data = yaml.safe_load(text)
        else:
            data = json.loads(text)
    except (yaml.YAMLError, json.JSONDecodeError) as e:
        raise ConfigError([f"{path}: ошибка разбора: {e}"]) from e
    if data is None:
        raise ConfigError([f"{path}: файл пуст"])
    return data


def build_config(data: Dict[str, Any], experiment: Optional[str] = None) -> RunConfig:
    """
    Собрать RunConfig из словаря

    Raises:
        ConfigError: со списком всех найденных проблем
    """
    is_valid, issues = validate_config(data, experiment)
    if not is_valid:
        raise ConfigError(issues)
    selected = data.get("experiment", experiment)

    kind = next(k for k in FIXTURE_KINDS if k in data["fixture"])
    body = data["fixture"][kind]
    if kind == "gaussian":
        grid = body.get("grid", {})
        fixture = FixtureSpec(
            kind=kind,
            source={k: body["source"][k] for k in ("mean", "covariance")},
            target={k: body["target"][k] for k in ("mean", "covariance")},
            nodes=grid.get("nodes", 16),
            radius=_number(grid.get("radius", 5.0)),
            samples=body.get("samples"),
            closed_form=body.get("closed_form", True),
        )
    else:
        fixture = FixtureSpec(kind=kind, source=body["source"], target=body["target"])

    cost = data.get("cost", {})
    if "epsilon" in cost:
        epsilons = [_number(cost["epsilon"])]
    elif "epsilons" in cost:
        epsilons = _number_list(cost["epsilons"])
    elif selected == "stability":
        epsilons = list(DEFAULT_STABILITY_EPSILONS)
    else:
        epsilons = list(DEFAULT_EPSILONS) if selected in SWEEP_EXPERIMENTS else [1.0]

    raw_solver = data.get("solver", {})
    solver = SolverSpec(kind=raw_solver.get("kind", "exact"))
    if "lambda" in raw_solver:
        solver.lam = _number(raw_solver["lambda"])
        solver.lambdas = [solver.lam]
    elif "lambdas" in raw_solver:
        solver.lambdas = _number_list(raw_solver["lambdas"])
    for key in ("eta", "eta_final", "tolerance"):
        if key in raw_solver:
            setattr(solver, key, _number(raw_solver[key]))
    for key in ("max_iterations", "stages"):
        if key in raw_solver:
            setattr(solver, key, raw_solver[key])

    config = RunConfig(experiment=selected, fixture=fixture, epsilons=epsilons, solver=solver, raw=data)
    dynamic = data.get("dynamic", {})
    config.times = _number_list(dynamic.get("times", list(DEFAULT_TIMES)))
    config.t = _number(dynamic.get("t", 0.5))
    if "stability" in data:
        config.bandwidths = _number_list(data["stability"]["bandwidths"])
    if "diagonal" in data:
        config.schedule = [tuple(_number_list(pair)) for pair in data["diagonal"]["schedule"]]
    config.ordering = data.get("ordering")
    config.output_dir = data.get("output", {}).get("directory", OUTPUT_DIR)
    config.seed = data.get("seed", 0)
    return config


def parse_config(path: str, experiment: Optional[str] = None) -> RunConfig:
    """Прочитать и проверить файл конфигурации"""
    config = build_config(load_config_data(path), experiment)
    logger.info(f"Конфигурация загружена: {path} ({config.experiment}, фикстура {config.fixture.kind})")
    return config


def config_echo(config: RunConfig) -> Dict[str, Any]:
    """Параметры запуска с подставленными умолчаниями, для отчёта"""
    solver = config.solver
    return {
        "experiment": config.experiment,
        "fixture": config.fixture.kind,
        "epsilons": config.epsilons,
        "solver": {
            "kind": solver.kind,
            "lambdas": solver.lambdas,
            "eta": solver.eta,
            "eta_final": solver.eta_final,
            "stages": solver.stages,
            "tolerance": solver.tolerance,
            "max_iterations": solver.max_iterations,
        },
        "times": config.times,
        "t": config.t,
        "bandwidths": config.bandwidths,
        "schedule": [list(pair) for pair in config.schedule],
        "ordering": config.ordering,
        "seed": config.seed,
    }
