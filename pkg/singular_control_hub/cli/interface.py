"""
Интерфейс командной строки Singular Control Hub.

Подкоманды:
- solve    - решение вариационного неравенства HJB
- simulate - моделирование траекторий и рекурсивной стоимости
- check    - решение и выбранные проверки (--check NAME, --all)
- example  - значение решения в точке рядом с явной формулой
- oracle   - оракул динамического программирования на цепи Маркова

Конфигурация: файл "key = value" (--config) и флаги; флаги перекрывают
файл. Коды завершения: 0 - успех, 2 - проверка не пройдена, 1 - ошибка
конфигурации или вычислений.
"""

from __future__ import annotations

import argparse
from dataclasses import dataclass, field, fields
from typing import Dict, List, Optional, Sequence, Tuple

from prettytable import PrettyTable

from ..core.exceptions import ConfigurationError, ProblemNotFoundError, SingularHubError
from ..core.problems import get_problem, list_problems
from ..core.usecases import CHECK_NAMES, EXIT_ERROR, SERVICES
from ..core.utils import format_float
from ..infra.settings import SettingsLoader

SUBCOMMANDS = tuple(SERVICES)
REQUIRED_KEYS = ("subcommand",)
PARAM_PREFIX = "problem."

_INT_BOUNDS = {
    "steps": (1, 100_000),
    "paths": (1, 10_000_000),
    "seed": (0, 2**63 - 1),
    "degree": (0, 8),
    "mc_steps": (1, 100_000),
    "control": (1, 10_000),
    "threads": (1, 256),
}
_POSITIVE_FLOATS = ("dx", "horizon")


def _settings_default(key: str, fallback):
    return lambda: type(fallback)(SettingsLoader().get(key, fallback))


@dataclass(frozen=True)
class RunConfig:
    """
    Конфигурация одного запуска.

    Attributes:
        subcommand: solve | simulate | check | example | oracle
        problem: Идентификатор встроенной задачи
        params: Числовые параметры задачи (ключи problem.NAME)
        dx: Шаг сетки по пространству
        dt: Шаг сетки хранения по времени (None - auto, через steps)
        x_min, x_max: Границы области (None - область задачи)
        horizon: Горизонт T (None - параметр задачи)
        steps: Число шагов сетки хранения по времени
        paths, seed, degree, mc_steps: Параметры Монте-Карло
        control: Число узлов сетки управлений на единицу длины
        point: Точка (t, x_1, ...) для example/simulate/проверок
        checks: Выбранные проверки
        all: Все проверки
        output_dir: Каталог результатов (None - из настроек)
        threads: Предел числа потоков
    """

    subcommand: str
    problem: str = "section4"
    params: Dict[str, float] = field(default_factory=dict)
    dx: float = 0.02
    dt: Optional[float] = None
    x_min: Optional[float] = None
    x_max: Optional[float] = None
    horizon: Optional[float] = None
    steps: int = 100
    paths: int = field(default_factory=_settings_default("mc_paths", 10000))
    seed: int = field(default_factory=_settings_default("mc_seed", 0))
    degree: int = field(default_factory=_settings_default("basis_degree", 3))
    mc_steps: int = field(default_factory=_settings_default("mc_steps", 50))
    control: int = field(default_factory=_settings_default("control_points_per_unit", 41))
    point: Optional[Tuple[float, ...]] = None
    checks: Tuple[str, ...] = ()
    all: bool = False
    output_dir: Optional[str] = None
    threads: int = 1


KNOWN_KEYS = tuple(f.name for f in fields(RunConfig) if f.name != "params")


def _parse_float(key: str, raw: str) -> float:
    try:
        value = float(raw)
    except ValueError:
        raise ConfigurationError(key, f"ожидается число, получено '{raw}'") from None
    if value != value or value in (float("inf"), float("-inf")):
        raise ConfigurationError(key, f"ожидается конечное число, получено '{raw}'")
    return value


def _parse_int(key: str, raw: str) -> int:
    try:
        value = int(raw)
    except ValueError:
        raise ConfigurationError(key, f"ожидается целое число, получено '{raw}'") from None
    low, high = _INT_BOUNDS[key]
    if not low <= value <= high:
        raise ConfigurationError(key, f"допустимо {low} <= {key} <= {high}, получено {value}")
    return value


def _parse_bool(key: str, raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("true", "1", "yes"):
        return True
    if lowered in ("false", "0", "no"):
        return False
    raise ConfigurationError(key, f"ожидается true/false, получено '{raw}'")


def _optional(raw: str) -> bool:
    return raw.strip().lower() in ("", "none", "auto")


def _split_lines(text: str) -> Dict[str, str]:
    raw: Dict[str, str] = {}
    for number, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        key, sep, value = stripped.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigurationError(f"line {number}", f"ожидается 'key = value', получено '{stripped}'")
        if key in raw:
            raise ConfigurationError(key, "ключ указан повторно")
        raw[key] = value.strip()
    return raw


def build_config(raw: Dict[str, str]) -> RunConfig:
    """
    Строгая сборка RunConfig из строковых значений.

    Raises:
        ConfigurationError: Неизвестный или отсутствующий ключ, значение вне границ
    """
    missing = [key for key in REQUIRED_KEYS if key not in raw]
    if missing:
        raise ConfigurationError(missing[0], f"обязательные ключи: {', '.join(REQUIRED_KEYS)}")

    values: Dict[str, object] = {}
    params: Dict[str, float] = {}
    for key, text in raw.items():
        if key.startswith(PARAM_PREFIX):
            params[key[len(PARAM_PREFIX):]] = _parse_float(key, text)
            continue
        if key not in KNOWN_KEYS:
            raise ConfigurationError(key, f"неизвестный ключ; допустимые: {', '.join(KNOWN_KEYS)}, problem.NAME")
        if key == "subcommand":
            if text not in SUBCOMMANDS:
                raise ConfigurationError(key, f"допустимые значения: {', '.join(SUBCOMMANDS)}")
            values[key] = text
        elif key == "problem":
            try:
                values[key] = get_problem(text).name
            except ProblemNotFoundError:
                raise ConfigurationError(key, f"неизвестная задача '{text}'; доступны: {', '.join(list_problems())}")
        elif key in _INT_BOUNDS:
            values[key] = _parse_int(key, text)
        elif key in _POSITIVE_FLOATS or key == "dt":
            if key != "dx" and _optional(text):
                values[key] = None
                continue
            value = _parse_float(key, text)
            if not value > 0:
                raise ConfigurationError(key, f"должно быть > 0, получено {value}")
            if key == "dx" and value > 1.0:
                raise ConfigurationError(key, f"допустимо 0 < dx <= 1, получено {value}")
            values[key] = value
        elif key in ("x_min", "x_max"):
            values[key] = None if _optional(text) else _parse_float(key, text)
        elif key == "point":
            if _optional(text):
                values[key] = None
                continue
            point = tuple(_parse_float(key, part) for part in text.split(","))
            if len(point) < 2:
                raise ConfigurationError(key, "ожидается 't,x_1[,x_2]'")
            values[key] = point
        elif key == "checks":
            names = tuple(name.strip() for name in text.split(",") if name.strip())
            unknown = [name for name in names if name not in CHECK_NAMES]
            if unknown:
                raise ConfigurationError(key, f"неизвестная проверка '{unknown[0]}'; доступны: {', '.join(CHECK_NAMES)}")
            values[key] = tuple(name for name in CHECK_NAMES if name in names)
        elif key == "all":
            values[key] = _parse_bool(key, text)
        elif key == "output_dir":
            values[key] = None if _optional(text) else text

    config = RunConfig(params=params, **values)
    if config.x_min is not None and config.x_max is not None and not config.x_min < config.x_max:
        raise ConfigurationError("x_min", f"требуется x_min < x_max, получено [{config.x_min}, {config.x_max}]")
    get_problem(config.problem).resolve_params(params)
    return config


def parse_config(text: str, overrides: Optional[Dict[str, str]] = None) -> RunConfig:
    """Разбор текста "key = value" (повторы запрещены); overrides перекрывают файл."""
    raw = _split_lines(text)
    raw.update(overrides or {})
    return build_config(raw)


def render_config(config: RunConfig) -> str:
    """Каноническое представление: parse_config(render_config(c)) == c."""

    def render(value) -> str:
        if value is None:
            return "none"
        if isinstance(value, bool):
            return "true" if value else "false"
        if isinstance(value, float):
            return format_float(value)
        if isinstance(value, tuple):
            return ",".join(format_float(v) if isinstance(v, float) else str(v) for v in value)
        return str(value)

    lines = [f"{key} = {render(getattr(config, key))}" for key in KNOWN_KEYS]
    lines.extend(f"{PARAM_PREFIX}{name} = {format_float(value)}" for name, value in sorted(config.params.items()))
    return "\n".join(lines) + "\n"


class _SilentArgumentParser(argparse.ArgumentParser):
    def error(self, message: str) -> None:
        raise ValueError(message)

    def exit(self, status: int = 0, message: Optional[str] = None) -> None:
        raise ValueError(message or "")


def _build_parser() -> _SilentArgumentParser:
    parser = _SilentArgumentParser(prog="project", add_help=False)
    parser.add_argument("subcommand", nargs="?", choices=SUBCOMMANDS)
    parser.add_argument("--config")
    parser.add_argument("--problem")
    parser.add_argument("--param", action="append", default=[])
    parser.add_argument("--dx")
    parser.add_argument("--dt")
    parser.add_argument("--x-min", dest="x_min")
    parser.add_argument("--x-max", dest="x_max")
    parser.add_argument("--horizon")
    parser.add_argument("--steps")
    parser.add_argument("--paths")
    parser.add_argument("--seed")
    parser.add_argument("--degree")
    parser.add_argument("--mc-steps", dest="mc_steps")
    parser.add_argument("--control")
    parser.add_argument("--point")
    parser.add_argument("--check", action="append", default=[])
    parser.add_argument("--all", action="store_true")
    parser.add_argument("--output-dir", dest="output_dir")
    parser.add_argument("--threads")
    return parser


def _flag_overrides(parsed: argparse.Namespace) -> Dict[str, str]:
    overrides: Dict[str, str] = {}
    for key in ("subcommand", "problem", "dx", "dt", "x_min", "x_max", "horizon", "steps", "paths", "seed",
                "degree", "mc_steps", "control", "point", "output_dir", "threads"):
        value = getattr(parsed, key)
        if value is not None:
            overrides[key] = str(value)
    for item in parsed.param:
        name, sep, value = item.partition("=")
        if not sep:
            raise ConfigurationError("param", f"ожидается NAME=VALUE, получено '{item}'")
        overrides[f"{PARAM_PREFIX}{name.strip()}"] = value.strip()
    if parsed.check:
        overrides["checks"] = ",".join(parsed.check)
    if parsed.all:
        overrides["all"] = "true"
    return overrides


class CLIInterface:
    """
    Основной CLI интерфейс приложения.

    Разбирает аргументы, собирает RunConfig и делегирует выполнение
    сервисам из core.usecases; сводку печатает таблицей PrettyTable.
    """

    def __init__(self, printer=print) -> None:
        self.printer = printer

    def load_config(self, argv: Sequence[str]) -> RunConfig:
        parsed = _build_parser().parse_args(list(argv))
        text = ""
        if parsed.config:
            try:
                with open(parsed.config, "r", encoding="utf-8") as file:
                    text = file.read()
            except OSError as e:
                raise ConfigurationError("config", f"не удалось прочитать файл: {e}") from None
        return parse_config(text, _flag_overrides(parsed))

    def run(self, argv: Sequence[str]) -> int:
        """
        Выполняет подкоманду и возвращает код завершения.

        Args:
            argv: Аргументы командной строки без имени программы
        """
        try:
            config = self.load_config(argv)
            status, summary = SERVICES[config.subcommand].run(config)
        except ValueError as e:
            self.printer(f"Ошибка аргументов: {e}")
            self.printer(self._help())
            return EXIT_ERROR
        except SingularHubError as e:
            self.printer(f"Ошибка: {e}")
            return EXIT_ERROR
        self.printer(self._render(config, summary))
        return status

    @staticmethod
    def _render(config: RunConfig, summary: Dict[str, object]) -> str:
        table = PrettyTable()
        table.field_names = ["Key", "Value"]
        table.align["Key"] = "l"
        table.align["Value"] = "r"
        for key, value in summary.items():
            if key == "files":
                continue
            table.add_row([key, format_float(value, 5) if isinstance(value, float) else value])
        lines: List[str] = [f"{config.subcommand} [{config.problem}]", table.get_string()]
        if "files" in summary:
            lines.append(f"Файлы: {summary['files']}")
        return "\n".join(lines)

    @staticmethod
    def _help() -> str:
        return (
            "Использование: project {solve,simulate,check,example,oracle} [--config FILE] [--problem ID]\n"
            "  [--param NAME=VALUE] [--dx H] [--dt DT|auto] [--x-min A] [--x-max B] [--horizon T]\n"
            "  [--steps N] [--paths M] [--seed S] [--degree D] [--mc-steps N] [--control P]\n"
            f"  [--point t,x] [--check {{{','.join(CHECK_NAMES)}}}] [--all] [--output-dir DIR] [--threads K]\n"
            f"Задачи: {', '.join(list_problems())}\n"
        )
