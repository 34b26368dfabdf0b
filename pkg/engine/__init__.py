"""
Модуль экспериментов
"""
from engine.experiment_engine import ExperimentEngine

# Глобальный экземпляр движка (размер пула берётся из KRLIMITS_THREADS)
experiment_engine = ExperimentEngine()
