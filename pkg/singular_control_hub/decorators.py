"""
Пользовательские декораторы проекта:
- Логирует запуски решателей и конвейеров (SOLVE/SIMULATE/CHECK/...).
- Фиксирует исключения, но не скрывает их.
- Достает параметры из сигнатуры функции.

Используется в сервисах и длительных численных операциях.
"""

import functools
import time
from inspect import signature
from typing import Any, Callable, Dict, Optional, TypeVar

from .logging_config import log_action as log_action_func

F = TypeVar("F", bound=Callable[..., Any])

_SCALAR_TYPES = (int, float, str, bool)


def _problem_name(params: Dict[str, Any]) -> Optional[str]:
    for key in ("spec", "config"):
        value = params.get(key)
        if value is None:
            continue
        name = getattr(value, "name", None) or getattr(value, "problem", None)
        if isinstance(name, str):
            return name
    return None


def _grid_params(params: Dict[str, Any]) -> Dict[str, Any]:
    """Скалярные параметры вызова и размеры сеток."""
    picked: Dict[str, Any] = {}
    for key, value in params.items():
        if isinstance(value, _SCALAR_TYPES) and not isinstance(value, bool):
            picked[key] = value
        elif hasattr(value, "N") and hasattr(value, "T"):
            picked[f"{key}.N"] = value.N
        elif hasattr(value, "counts"):
            picked[f"{key}.counts"] = "x".join(str(c) for c in value.counts)
    return picked


def _result_metrics(result: Any) -> Dict[str, Any]:
    metadata = getattr(result, "metadata", None)
    if isinstance(metadata, dict):
        return {k: metadata[k] for k in ("substeps", "dt_used") if k in metadata}
    passed = getattr(result, "passed", None)
    if isinstance(passed, bool):
        return {"passed": passed}
    if isinstance(result, tuple) and result and isinstance(result[0], int):
        return {"exit_code": result[0]}
    return {}


def log_action(action_type: Optional[str] = None) -> Callable[[F], F]:
    """
    Логирование операций и ошибок.

    Args:
        action_type: Явный тип действия; иначе берется имя функции.
    """

    def decorator(func: F) -> F:
        @functools.wraps(func)
        def wrapper(*args: Any, **kwargs: Any) -> Any:
            action_name = action_type or func.__name__.upper()

            params: Dict[str, Any] = {}
            try:
                bound_args = signature(func).bind(*args, **kwargs)
                bound_args.apply_defaults()
                params = dict(bound_args.arguments)
            except TypeError:
                pass  # Если не удалось связать аргументы, вызов всё равно упадёт ниже

            problem = _problem_name(params)
            call_params = _grid_params(params)
            started = time.perf_counter()

            try:
                result = func(*args, **kwargs)
            except Exception as e:
                log_action_func(
                    action=action_name,
                    problem=problem,
                    params=call_params,
                    result="ERROR",
                    elapsed_ms=(time.perf_counter() - started) * 1000.0,
                    error_type=type(e).__name__,
                    error_message=str(e),
                )
                raise

            log_action_func(
                action=action_name,
                problem=problem,
                params=call_params,
                result="OK",
                elapsed_ms=(time.perf_counter() - started) * 1000.0,
                metrics=_result_metrics(result),
            )
            return result

        return wrapper

    # Если декоратор используется без параметров (@log_action)
    if callable(action_type):
        func = action_type
        action_type = None
        return decorator(func)

    return decorator
