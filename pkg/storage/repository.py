"""
Репозитории файловых артефактов: меры и отчёты
"""
import csv
import json
from pathlib import Path
from typing import Any, Dict, List, Union

import numpy as np

from storage.models import SweepReport
from storage.serializers import cell_rows, measure_from_dict, measure_to_dict, report_to_dict
from transport.errors import MeasureError
from transport.measures import DiscreteMeasure, GridDensity
from utils.logger import logger


class MeasureRepository:
    """Загрузка и сохранение мер (JSON или CSV атомов)"""

    @staticmethod
    def load(path: str) -> Union[DiscreteMeasure, GridDensity]:
        """
        Загрузить меру

        CSV: по строке на атом, столбцы - координаты и последний столбец - вес.
        """
        file_path = Path(path)
        if not file_path.exists():
            raise MeasureError(f"measure file not found: {path}")
        if file_path.suffix == ".csv":
            with open(file_path, "r", encoding="utf-8", newline="") as f:
                rows = [row for row in csv.reader(f) if row]
            try:
                [float(v) for v in rows[0]]
            except ValueError:
                # заголовок
                rows = rows[1:]
            except IndexError:
                raise MeasureError(f"{path}: empty file")
            try:
                table = np.array([[float(v) for v in row] for row in rows])
            except ValueError as e:
                raise MeasureError(f"{path}: {e}") from e
            if table.ndim != 2 or table.shape[1] < 2:
                raise MeasureError(f"{path}: expected coordinates and a weight column")
            return DiscreteMeasure.normalized(table[:, :-1], table[:, -1])
        with open(file_path, "r", encoding="utf-8") as f:
            return measure_from_dict(json.load(f))

    @staticmethod
    def save(measure: Union[DiscreteMeasure, GridDensity], path: str) -> None:
        file_path = Path(path)
        file_path.parent.mkdir(parents=True, exist_ok=True)
        if file_path.suffix == ".csv":
            if not isinstance(measure, DiscreteMeasure):
                raise MeasureError("only discrete measures are stored as CSV")
            with open(file_path, "w", encoding="utf-8", newline="") as f:
                writer = csv.writer(f)
                writer.writerow([f"x{k}" for k in range(measure.dimension)] + ["weight"])
                for point, weight in zip(measure.support, measure.weights):
                    writer.writerow([repr(float(v)) for v in point] + [repr(float(weight))])
            return
        with open(file_path, "w", encoding="utf-8") as f:
            json.dump(measure_to_dict(measure), f, indent=2)


class ReportRepository:
    """Запись отчётов эксперимента в выходную директорию"""

    def __init__(self, out_dir: str):
        self.out_dir = Path(out_dir)

    def _path(self, name: str) -> Path:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        return self.out_dir / name

    def write_json(self, name: str, data: Dict[str, Any]) -> Path:
        path = self._path(name)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(data, f, indent=2, ensure_ascii=False)
        return path

    def write_table(self, name: str, rows: List[Dict[str, Any]]) -> Path:
        """CSV с заголовком по ключам первой строки"""
        path = self._path(name)
        columns: List[str] = []
        for row in rows:
            columns.extend(k for k in row if k not in columns)
        with open(path, "w", encoding="utf-8", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=columns)
            writer.writeheader()
            for row in rows:
                writer.writerow({k: "" if v is None else v for k, v in row.items()})
        return path

    def write_report(self, report: SweepReport) -> List[Path]:
        """report.json, cells.csv и таблицы эксперимента"""
        paths = [self.write_json("report.json", report_to_dict(report)), self.write_table("cells.csv", cell_rows(report))]
        for name, rows in report.tables.items():
            paths.append(self.write_table(f"{name}.csv", rows))
        for name, data in report.artifacts.items():
            paths.append(self.write_json(f"{name}.json", data))
        logger.info(f"Отчёт записан: {self.out_dir} ({len(paths)} файлов)")
        return paths
