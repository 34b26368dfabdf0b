"""
Тесты проверки и сборки конфигурации запуска
"""
import json

import pytest

from config import DEFAULT_EPSILONS, DEFAULT_LAMBDAS
from transport.errors import ConfigError
from utils.config_utils import (
    DEFAULT_STABILITY_EPSILONS,
    build_config,
    config_echo,
    parse_config,
    validate_config,
)

GAUSSIAN = {
    "gaussian": {
        "source": {"mean": [0.0, 0.0], "covariance": [[1.0, 0.0], [0.0, 1.0]]},
        "target": {"mean": [0.0, 0.0], "covariance": [[2.0, 1.0], [1.0, 2.0]]},
        "grid": {"nodes": 8},
    }
}


def make(experiment="solve", **extra):
    data = {"experiment": experiment, "fixture": json.loads(json.dumps(GAUSSIAN))}
    data.update(extra)
    return data


def test_minimal_config_is_valid():
    is_valid, issues = validate_config(make())
    assert is_valid
    assert issues == []


@pytest.mark.parametrize(
    "experiment, expected",
    [
        ("solve", [1.0]),
        ("sweep-hard", list(DEFAULT_EPSILONS)),
        ("stability", list(DEFAULT_STABILITY_EPSILONS)),
    ],
)
def test_default_epsilons(experiment, expected):
    assert build_config(make(experiment)).epsilons == expected


def test_defaults_filled_in():
    config = build_config(make())
    assert config.fixture.kind == "gaussian"
    assert config.fixture.nodes == 8
    assert config.fixture.closed_form is True
    assert config.solver.kind == "exact"
    assert config.solver.lam is None
    assert config.solver.lambdas == list(DEFAULT_LAMBDAS)
    assert config.seed == 0


def test_conflicting_fixture_kinds():
    data = make()
    data["fixture"]["atoms"] = {"source": "a.csv", "target": "b.csv"}
    is_valid, issues = validate_config(data)
    assert not is_valid
    assert any("конфликтующие ключи 'gaussian' и 'atoms'" in issue for issue in issues)


def test_lambda_list_needs_sweep():
    is_valid, issues = validate_config(make(solver={"lambdas": [1, 10]}))
    assert not is_valid
    assert "solver.lambdas: λ list requires a sweep experiment" in issues
    assert validate_config(make("sweep-soft", solver={"lambdas": [1, 10]}))[0]


def test_all_problems_are_reported():
    data = make(cost={"epsilon": 2.0}, solver={"kind": "sinkhorn"}, colour="red")
    with pytest.raises(ConfigError) as error:
        build_config(data)
    issues = error.value.issues
    assert "colour: неизвестный ключ" in issues
    assert "cost: ε должны лежать в (0, 1]" in issues
    assert "solver.tolerance: обязателен для решателя 'sinkhorn'" in issues
    assert "solver.max_iterations: обязателен для решателя 'sinkhorn'" in issues


def test_subcommand_conflict():
    is_valid, issues = validate_config(make("kr"), experiment="solve")
    assert not is_valid
    assert issues == ["experiment: конфликт 'kr' и подкоманды 'solve'"]


def test_subcommand_selects_experiment():
    data = make()
    del data["experiment"]
    assert build_config(data, "kr").experiment == "kr"


def test_dynamic_times_outside_unit_interval():
    is_valid, issues = validate_config(make("dynamic", dynamic={"times": [0.0, 1.5]}))
    assert not is_valid
    assert "dynamic.times: time outside [0, 1]" in issues


def test_yaml_numbers_written_as_strings(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text(
        "experiment: sweep-soft\n"
        "fixture:\n"
        "  gaussian:\n"
        "    source: {mean: [0, 0], covariance: [[1, 0], [0, 1]]}\n"
        "    target: {mean: [0, 0], covariance: [[2, 1], [1, 2]]}\n"
        "cost:\n"
        "  epsilons: [1, 1e-3]\n"
        "solver:\n"
        "  kind: semi-relaxed\n"
        "  lambdas: [1e2, 1e6]\n"
        "  eta: 1e-2\n"
        "  tolerance: 1e-9\n"
        "  max_iterations: 500\n",
        encoding="utf-8",
    )
    config = parse_config(str(path))
    assert config.epsilons == [1.0, 1e-3]
    assert config.solver.lambdas == [1e2, 1e6]
    assert config.solver.eta == 1e-2
    assert config.solver.tolerance == 1e-9


def test_missing_and_broken_files(tmp_path):
    with pytest.raises(ConfigError, match="файл не найден"):
        parse_config(str(tmp_path / "absent.json"))
    broken = tmp_path / "broken.json"
    broken.write_text("{", encoding="utf-8")
    with pytest.raises(ConfigError, match="ошибка разбора"):
        parse_config(str(broken))


def test_diagonal_schedule_and_echo():
    config = build_config(make("diagonal", diagonal={"schedule": [[1.0, 1.0], [0.1, 100.0]]}, seed=3))
    assert config.schedule == [(1.0, 1.0), (0.1, 100.0)]
    echo = config_echo(config)
    assert echo["schedule"] == [[1.0, 1.0], [0.1, 100.0]]
    assert echo["seed"] == 3
    assert echo["solver"]["kind"] == "exact"
