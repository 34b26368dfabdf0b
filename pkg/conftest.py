"""
Корень репозитория в sys.path: пакеты плоские, как у точки входа
"""
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))
