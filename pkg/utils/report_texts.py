"""
Тексты сводок для вывода в консоль
"""
from typing import List, Optional

from storage.models import SweepCell, SweepReport

# Статусы
STATUS_MARKS = {
    "ok": "✅",
    "error": "❌",
}

CONFIG_ERROR_HEADER = "❌ Ошибка конфигурации:"
RUN_ERROR_HEADER = "❌ Эксперимент завершился ошибкой:"


def _number(value: Optional[float]) -> str:
    return "-" if value is None else f"{value:.6g}"


def format_cell(cell: SweepCell) -> str:
    """Одна строка на ячейку: координаты, стоимость и главное расстояние"""
    mark = STATUS_MARKS.get(cell.status, "⚪")
    parts = [f"{mark} ε={cell.epsilon:g}"]
    if cell.lam is not None:
        parts.append(f"λ={cell.lam:g}")
    if cell.bandwidth is not None:
        parts.append(f"h={cell.bandwidth:g}")
    if cell.status != "ok":
        parts.append(f"ошибка: {cell.error}")
        return " ".join(parts)
    parts.append(f"cost={_number(cell.objective)}")
    if cell.kl_term is not None:
        parts.append(f"kl={_number(cell.kl_term)}")
    if cell.map_distance is not None:
        parts.append(f"dist={_number(cell.map_distance)}")
    if cell.flags:
        parts.append(f"[{', '.join(cell.flags)}]")
    return " ".join(parts)


def format_report(report: SweepReport) -> List[str]:
    """Сводка отчёта построчно; при ошибке без ячеек - строка с ошибкой"""
    lines = [format_cell(cell) for cell in report.cells]
    if report.status != "ok" and not report.cells:
        lines.append(f"{RUN_ERROR_HEADER} {report.error}")
    return lines


def format_config_errors(issues: List[str]) -> str:
    return "\n".join([CONFIG_ERROR_HEADER] + [f"  • {issue}" for issue in issues])
