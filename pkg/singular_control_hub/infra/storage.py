"""Слой хранения результатов: CSV поверхностей, масок и траекторий, текстовые отчёты."""

from __future__ import annotations

import csv
import os
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .settings import SettingsLoader


class ArtifactStorage:
    """
    Запись и чтение артефактов запуска в каталоге результатов.

    Все файлы пишутся во временный файл и атомарно заменяются через
    os.replace. Числа записываются с csv_digits значащими цифрами
    (по умолчанию 17), поэтому чтение восстанавливает значения бит в бит.
    """

    def __init__(self, output_dir: str | Path | None = None, digits: Optional[int] = None) -> None:
        settings = SettingsLoader()
        self.output_dir = Path(output_dir) if output_dir is not None else settings.output_dir()
        self.digits = int(digits if digits is not None else settings.get("csv_digits", 17))

    def path(self, name: str) -> Path:
        return self.output_dir / name

    def _format(self, value: Any) -> str:
        if isinstance(value, (float, np.floating)):
            return format(float(value), f".{self.digits}g")
        if isinstance(value, (bool, np.bool_)):
            return str(int(value))
        return str(value)

    def _atomic_write(self, name: str, write) -> Path:
        target = self.path(name)
        target.parent.mkdir(parents=True, exist_ok=True)
        temp_file = f"{target}.tmp"
        with open(temp_file, "w", encoding="utf-8", newline="") as file:
            write(file)
        os.replace(temp_file, target)
        return target

    def write_rows(self, name: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
        """Произвольная таблица CSV с заголовком."""

        def write(file) -> None:
            writer = csv.writer(file, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([self._format(value) for value in row])

        return self._atomic_write(name, write)

    @staticmethod
    def _space_header(ndim: int) -> List[str]:
        return [f"x_{axis + 1}" for axis in range(ndim)]

    def _grid_rows(self, values: np.ndarray, nodes: np.ndarray, points: np.ndarray) -> Iterable[List[Any]]:
        flat_points = points.reshape(-1, points.shape[-1])
        for index, t in enumerate(nodes):
            layer = values[index].reshape(-1)
            for point, value in zip(flat_points, layer):
                yield [float(t), *(float(x) for x in point), value]

    def write_surface(self, surface, name: str = "surface.csv") -> Path:
        """Поверхность u: заголовок t,x_1[,x_2],u."""
        header = ["t", *self._space_header(surface.sgrid.ndim), "u"]
        rows = self._grid_rows(surface.u, surface.tgrid.nodes, surface.sgrid.points)
        return self.write_rows(name, header, ((*row[:-1], float(row[-1])) for row in rows))

    def write_inaction(self, mask, surface, name: str = "inaction.csv") -> Path:
        """Маска бездействия: заголовок t,x_1[,x_2],inaction (0/1)."""
        header = ["t", *self._space_header(surface.sgrid.ndim), "inaction"]
        rows = self._grid_rows(mask.mask, surface.tgrid.nodes, surface.sgrid.points)
        return self.write_rows(name, header, ((*row[:-1], int(bool(row[-1]))) for row in rows))

    def write_paths(self, bundle, name: str = "paths.csv") -> Path:
        """Траектории: заголовок path,step,t,x_1..x_n."""
        header = ["path", "step", "t", *self._space_header(bundle.X.shape[-1])]
        nodes = bundle.tgrid.nodes

        def rows():
            for path in range(bundle.M):
                for step, t in enumerate(nodes):
                    yield [path, step, float(t), *(float(x) for x in bundle.X[path, step])]

        return self.write_rows(name, header, rows())

    def write_report(self, data: Mapping[str, Any], name: str = "report.txt") -> Path:
        """Отчёт в формате "key: value", по строке на ключ."""

        def write(file) -> None:
            for key, value in data.items():
                file.write(f"{key}: {self._format(value)}\n")

        return self._atomic_write(name, write)

    def read_table(self, name: str) -> Tuple[List[str], np.ndarray]:
        """Заголовок и числовые значения CSV-файла."""
        with open(self.path(name), "r", encoding="utf-8", newline="") as file:
            reader = csv.reader(file)
            header = next(reader)
            values = [[float(cell) for cell in row] for row in reader]
        return header, np.array(values, dtype=float).reshape(-1, len(header))

    def read_report(self, name: str = "report.txt") -> Dict[str, str]:
        report: Dict[str, str] = {}
        with open(self.path(name), "r", encoding="utf-8") as file:
            for line in file:
                key, _, value = line.rstrip("\n").partition(": ")
                if key:
                    report[key] = value
        return report
