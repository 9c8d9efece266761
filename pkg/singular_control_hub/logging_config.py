"""
Конфигурация логирования для приложения.

Главное:
- Форматтеры JSON и человекочитаемый.
- Настройка логгера с ротацией файлов.
- Структурированные логи действий (SOLVE/SIMULATE/CHECK/EXAMPLE/ORACLE).
"""

import json
import logging
import re
from datetime import datetime, timezone
from logging.handlers import RotatingFileHandler, TimedRotatingFileHandler
from pathlib import Path
from typing import Any, Dict, Optional

from .infra.settings import SettingsLoader


def _timestamp() -> str:
    return datetime.now(timezone.utc).replace(tzinfo=None).isoformat() + "Z"


class JSONFormatter(logging.Formatter):
    """Форматирует логи в JSON формате для удобного парсирования."""

    def format(self, record: logging.LogRecord) -> str:
        log_data = {
            "timestamp": _timestamp(),
            "level": record.levelname,
            "logger": record.name,
            "message": record.getMessage(),
        }

        if hasattr(record, "action_data"):
            log_data.update(record.action_data)

        return json.dumps(log_data, ensure_ascii=False, default=str)


class HumanReadableFormatter(logging.Formatter):
    """Форматирует логи в удобном для чтения формате."""

    def format(self, record: logging.LogRecord) -> str:
        timestamp = _timestamp()
        level = record.levelname

        if hasattr(record, "action_data"):
            data = record.action_data
            parts = [f"{timestamp} {level}", f"action={data['action']}"]

            if "problem" in data:
                parts.append(f"problem='{data['problem']}'")
            if data.get("params"):
                rendered = ",".join(f"{k}={v}" for k, v in data["params"].items())
                parts.append(f"params={rendered}")
            parts.append(f"result={data['result']}")
            if "elapsed_ms" in data:
                parts.append(f"elapsed_ms={data['elapsed_ms']:.1f}")
            if data.get("metrics"):
                rendered = ",".join(f"{k}={v}" for k, v in data["metrics"].items())
                parts.append(f"metrics={rendered}")
            if "error_type" in data:
                parts.append(f"error_type={data['error_type']}")
            if "error_message" in data:
                parts.append(f"error_message='{data['error_message']}'")

            return " ".join(parts)

        return f"{timestamp} {level} {record.name}: {record.getMessage()}"


def setup_logging(
    log_format: str = "human",
    log_level: str = "INFO",
    log_file: Optional[str] = None,
    rotation_type: str = "time",
) -> logging.Logger:
    """
    Настраивает логгер и формат вывода.

    Args:
        log_format: Формат логирования ("human" или "json")
        log_level: Уровень логирования ("DEBUG", "INFO", "WARNING", "ERROR")
        log_file: Путь к файлу логов (если None, логируется только в консоль)
        rotation_type: Тип ротации ("time" - ежедневно, "size" - по размеру)

    Returns:
        Настроенный logger
    """
    logger = logging.getLogger("singular_control_hub")
    logger.setLevel(getattr(logging, log_level.upper(), logging.INFO))

    # Удаляем существующие обработчики, чтобы избежать дублирования
    logger.handlers.clear()

    formatter = JSONFormatter() if log_format.lower() == "json" else HumanReadableFormatter()

    console_handler = logging.StreamHandler()
    console_handler.setFormatter(formatter)
    logger.addHandler(console_handler)

    if log_file:
        log_path = Path(log_file)
        log_path.parent.mkdir(parents=True, exist_ok=True)

        if rotation_type.lower() == "time":
            file_handler = TimedRotatingFileHandler(
                filename=str(log_path),
                when="midnight",
                interval=1,
                backupCount=30,
                encoding="utf-8",
            )
            # actions.log.2026-10-17
            file_handler.suffix = "%Y-%m-%d"
            file_handler.extMatch = re.compile(r"^\d{4}-\d{2}-\d{2}$")
        else:
            file_handler = RotatingFileHandler(
                filename=str(log_path),
                maxBytes=10 * 1024 * 1024,
                backupCount=10,
                encoding="utf-8",
            )

        file_handler.setFormatter(formatter)
        logger.addHandler(file_handler)

    return logger


def _init_action_logger() -> logging.Logger:
    """Инициализирует глобальный logger с конфигурацией из SettingsLoader."""
    settings = SettingsLoader()
    return setup_logging(
        log_format=settings.get("log_format", "human"),
        log_level=settings.get("log_level", "INFO"),
        log_file=settings.get("log_file"),
        rotation_type="time",
    )


action_logger = _init_action_logger()


def log_action(
    action: str,
    problem: Optional[str] = None,
    params: Optional[Dict[str, Any]] = None,
    result: str = "OK",
    elapsed_ms: Optional[float] = None,
    metrics: Optional[Dict[str, Any]] = None,
    error_type: Optional[str] = None,
    error_message: Optional[str] = None,
) -> None:
    """
    Логирует действие со структурированными данными.

    Args:
        action: Тип действия (SOLVE, SIMULATE, CHECK, EXAMPLE, ORACLE, SOLVE_HJB, ...)
        problem: Идентификатор задачи
        params: Существенные параметры вызова (шаги сетки, число траекторий)
        result: Результат операции (OK или ERROR)
        elapsed_ms: Время выполнения
        metrics: Числовые итоги (число подшагов, статус проверок)
        error_type: Тип ошибки
        error_message: Сообщение об ошибке
    """
    action_data: Dict[str, Any] = {
        "action": action,
        "result": result,
    }

    if problem:
        action_data["problem"] = problem
    if params:
        action_data["params"] = params
    if elapsed_ms is not None:
        action_data["elapsed_ms"] = elapsed_ms
    if metrics:
        action_data["metrics"] = metrics
    if error_type:
        action_data["error_type"] = error_type
    if error_message:
        action_data["error_message"] = error_message

    level = logging.INFO if result == "OK" else logging.ERROR
    record = action_logger.makeRecord(
        name=action_logger.name,
        level=level,
        fn="",
        lno=0,
        msg=action,
        args=(),
        exc_info=None,
    )
    record.action_data = action_data

    action_logger.handle(record)
