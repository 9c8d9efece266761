"""
Утилиты и вспомогательные функции: валидация чисел, оценки Монте-Карло,
форматирование чисел для CSV.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any

import numpy as np

from .exceptions import EvaluationError, StructuralError


@dataclass(frozen=True)
class Estimate:
    """Оценка Монте-Карло: значение и стандартная ошибка."""

    value: float
    stderr: float

    def within(self, target: float, n_se: float = 3.0, extra: float = 0.0) -> bool:
        """Проверка |value - target| <= n_se * stderr + extra."""
        return abs(self.value - target) <= n_se * self.stderr + extra

    @classmethod
    def from_samples(cls, samples: np.ndarray) -> "Estimate":
        """Среднее и стандартная ошибка по выборке."""
        samples = np.asarray(samples, dtype=float).ravel()
        if samples.size == 0:
            raise StructuralError("samples", "пустая выборка")
        if samples.size == 1:
            return cls(float(samples[0]), 0.0)
        return cls(float(samples.mean()), float(samples.std(ddof=1) / math.sqrt(samples.size)))


def validate_positive(value: Any, name: str) -> float:
    """
    Валидирует строго положительное число.

    Args:
        value: Значение
        name: Имя параметра для сообщения об ошибке

    Returns:
        Значение как float

    Raises:
        StructuralError: Если значение не число или не положительно
    """
    try:
        value = float(value)
    except (TypeError, ValueError):
        raise StructuralError(name, "должно быть числом")
    if not math.isfinite(value) or value <= 0:
        raise StructuralError(name, f"должно быть положительным числом, получено {value}")
    return value


def validate_positive_int(value: Any, name: str, minimum: int = 1) -> int:
    """Валидирует целое число не меньше minimum."""
    try:
        ivalue = int(value)
    except (TypeError, ValueError):
        raise StructuralError(name, "должно быть целым числом")
    if ivalue != value and not (isinstance(value, float) and value.is_integer()):
        raise StructuralError(name, "должно быть целым числом")
    if ivalue < minimum:
        raise StructuralError(name, f"должно быть не меньше {minimum}, получено {ivalue}")
    return ivalue


def ensure_finite(values: np.ndarray, function: str, points: Any = None) -> np.ndarray:
    """
    Проверяет, что все значения конечны.

    Args:
        values: Массив значений функции
        function: Имя функции (для сообщения)
        points: Массив точек той же ведущей формы (для поиска плохой точки)

    Raises:
        EvaluationError: Если найдено inf/nan; в ошибке указывается первая плохая точка
    """
    values = np.asarray(values, dtype=float)
    bad = ~np.isfinite(values)
    if bad.any():
        index = np.unravel_index(int(np.argmax(bad)), bad.shape)
        point: Any = index
        if points is not None:
            try:
                point = np.asarray(points)[index[: np.asarray(points).ndim - 1]].tolist()
            except (IndexError, TypeError):
                point = index
        raise EvaluationError(function, point)
    return values


def format_float(value: float, digits: int = 17) -> str:
    """Форматирование числа с заданным числом значащих цифр (17 - точный round-trip)."""
    return f"{float(value):.{digits}g}"
