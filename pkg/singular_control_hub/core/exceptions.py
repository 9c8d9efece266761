"""
Пользовательские исключения приложения:
- StructuralError: нарушена размерность или структура данных задачи.
- EvaluationError: пользовательская функция вернула нечисловое значение.
- SimulationError: при моделировании траектории получено нечисловое состояние.
- ContractError: нарушено предусловие операции.
- ConfigurationError: некорректная конфигурация запуска или схемы.
- NumericError: нечисловое значение в решателе.
- ProblemNotFoundError: запрошена неизвестная встроенная задача.
"""

from typing import Any, Optional


class SingularHubError(Exception):
    """Общий предок всех ошибок пакета (CLI превращает их в код выхода 1)."""


class StructuralError(SingularHubError):
    """
    Выбрасывается, когда данные задачи структурно некорректны.

    Attributes:
        field: Имя поля, в котором найдена ошибка
        reason: Описание несоответствия
    """

    def __init__(self, field: str, reason: str):
        self.field = field
        self.reason = reason
        super().__init__(f"Структурная ошибка в поле '{field}': {reason}")


class EvaluationError(SingularHubError):
    """
    Выбрасывается, когда функция задачи вернула inf/nan.

    Attributes:
        function: Имя функции (b, sigma, f, Phi, ...)
        point: Точка, в которой произошла ошибка
        reason: Описание
    """

    def __init__(self, function: str, point: Any, reason: str = "нечисловое значение"):
        self.function = function
        self.point = point
        self.reason = reason
        super().__init__(f"Ошибка вычисления '{function}' в точке {point}: {reason}")


class SimulationError(SingularHubError):
    """
    Выбрасывается, когда траектория прямого уравнения стала нечисловой.

    Attributes:
        path: Индекс траектории
        step: Индекс шага по времени
    """

    def __init__(self, path: int, step: int, reason: str = "нечисловое состояние"):
        self.path = path
        self.step = step
        self.reason = reason
        super().__init__(f"Ошибка моделирования: траектория {path}, шаг {step}: {reason}")


class ContractError(SingularHubError):
    """
    Выбрасывается при нарушении предусловия операции.

    Attributes:
        reason: Описание нарушения
        sample: Пример (индекс или значение), на котором условие нарушено
    """

    def __init__(self, reason: str, sample: Optional[Any] = None):
        self.reason = reason
        self.sample = sample
        msg = f"Нарушено предусловие: {reason}"
        if sample is not None:
            msg += f" (пример: {sample})"
        super().__init__(msg)


class ConfigurationError(SingularHubError):
    """
    Выбрасывается при некорректной конфигурации.

    Attributes:
        key: Имя параметра конфигурации
        reason: Описание ошибки
    """

    def __init__(self, key: str, reason: str):
        self.key = key
        self.reason = reason
        super().__init__(f"Ошибка конфигурации '{key}': {reason}")


class NumericError(SingularHubError):
    """
    Выбрасывается, когда решатель получил inf/nan.

    Attributes:
        location: Место (шаг по времени, индекс узла)
    """

    def __init__(self, location: Any, reason: str = "нечисловое значение"):
        self.location = location
        self.reason = reason
        super().__init__(f"Численная ошибка в {location}: {reason}")


class ProblemNotFoundError(SingularHubError):
    """
    Выбрасывается, когда запрошена неизвестная встроенная задача.

    Attributes:
        problem_id: Идентификатор задачи
    """

    def __init__(self, problem_id: str):
        self.problem_id = problem_id
        super().__init__(f"Неизвестная задача '{problem_id}'")
