"""
Конфигурация krlimits
"""
import os
from typing import Tuple

# Режим отладки
DEBUG: bool = os.getenv("KRLIMITS_DEBUG", "False").lower() == "true"

# Директория для отчётов по умолчанию
OUTPUT_DIR: str = os.getenv("KRLIMITS_OUTPUT_DIR", "results")

# Размер пула для ячеек свипа (1 - воспроизводимые тайминги)
THREADS: int = int(os.getenv("KRLIMITS_THREADS", "1"))

# Предел размера задачи для точного решателя
EXACT_MAX_ATOMS: int = int(os.getenv("KRLIMITS_EXACT_MAX_ATOMS", "4096"))

# Записывать ли время выполнения ячеек (иначе null - отчёты побитово воспроизводимы)
RECORD_TIMINGS: bool = os.getenv("KRLIMITS_RECORD_TIMINGS", "False").lower() == "true"

# Предел размера задачи для точного мягкого оракула
ORACLE_MAX_ATOMS: int = 64

# Сетки параметров по умолчанию
DEFAULT_EPSILONS: Tuple[float, ...] = (1.0, 1e-1, 1e-2, 1e-3, 1e-4)
DEFAULT_LAMBDAS: Tuple[float, ...] = (1.0, 10.0, 1e2, 1e3, 1e6)

# Порог KL, выше которого ячейка помечается как far-from-target
FAR_FROM_TARGET_KL: float = 0.1

# Минимальная масса среза при условном распределении
DENSITY_FLOOR_MASS: float = 1e-13

# Версия схемы отчётов
REPORT_SCHEMA_VERSION: str = "1.0"
