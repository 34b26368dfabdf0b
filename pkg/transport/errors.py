"""
Исключения численного ядра
"""
from typing import List, Optional


class TransportError(Exception):
    """Базовая ошибка пакета"""


class MeasureError(TransportError, ValueError):
    """Некорректная мера или операция над мерой"""


class CostError(TransportError, ValueError):
    """Некорректная функция стоимости или матрица стоимости"""


class SolverError(TransportError, RuntimeError):
    """Сбой решателя; cell хранит координаты ячейки свипа, если известны"""

    def __init__(self, message: str, cell: Optional[dict] = None):
        super().__init__(message)
        self.cell = cell


class SinkhornStalled(SolverError):
    """Итерация Синкхорна не сошлась за отведённое число шагов"""

    def __init__(self, violation: float, iterations: int):
        super().__init__(f"sinkhorn stalled: row violation {violation:.3e} after {iterations} iterations")
        self.violation = violation
        self.iterations = iterations


class OracleUnconverged(SolverError):
    """Точный мягкий оракул не достиг требуемой KKT-невязки"""

    def __init__(self, residual: float):
        super().__init__(f"oracle unconverged: KKT residual {residual:.3e}")
        self.residual = residual


class DynamicsError(TransportError, ValueError):
    """Ошибка динамической (Бенаму-Бренье) части"""


class ConfigError(TransportError, ValueError):
    """Невалидная конфигурация запуска; issues содержит сообщения с путями ключей"""

    def __init__(self, issues: List[str]):
        super().__init__("; ".join(issues))
        self.issues = list(issues)
