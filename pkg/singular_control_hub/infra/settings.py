"""
Singleton-класс для централизованной загрузки, объединения и кеширования
настроек приложения из config.json и секции [tool.singular_control_hub]
в pyproject.toml.

Файлы ищутся в текущем каталоге, затем в корне репозитория рядом с пакетом.
Если ни одного файла нет, используются встроенные значения по умолчанию,
поэтому пакет можно импортировать и вне репозитория.
"""

import json
import os
from pathlib import Path
from typing import Any, Optional

import tomllib

OUTPUT_DIR_ENV = "SINGULAR_HUB_OUTPUT_DIR"
REPO_ROOT = Path(__file__).resolve().parents[2]

DEFAULTS: dict[str, Any] = {
    "output_dir": "output",
    "csv_digits": 17,
    "cfl_factor": 0.9,
    "max_substeps": 1_000_000,
    "margin_fraction": 0.1,
    "control_points_per_unit": 41,
    "mc_paths": 10000,
    "mc_steps": 50,
    "mc_seed": 0,
    "basis_degree": 3,
    "ridge": 1e-8,
    "logs_dir": "logs",
    "log_file": "logs/actions.log",
    "log_level": "INFO",
    "log_format": "human",
}


class SettingsLoader:
    """
    Singleton класс для загрузки и кеширования конфигурации.
    """

    _instance: Optional["SettingsLoader"] = None
    _config_cache: dict[str, Any] = {}

    def __new__(cls) -> "SettingsLoader":
        """Создает единственный экземпляр и загружает конфигурацию при первом вызове."""
        if cls._instance is None:
            cls._instance = super().__new__(cls)
            cls._instance._load_configuration()
        return cls._instance

    @classmethod
    def reload(cls) -> "SettingsLoader":
        """Сбрасывает кеш и перечитывает файлы (используется в тестах)."""
        cls._instance = None
        cls._config_cache = {}
        return cls()

    @staticmethod
    def _locate(name: str) -> Optional[Path]:
        for candidate in (Path(name), REPO_ROOT / name):
            if candidate.exists():
                return candidate
        return None

    def _load_configuration(self) -> None:
        """Загружает конфигурацию из файлов в кеш."""
        self._config_cache = dict(DEFAULTS)
        config_path = self._locate("config.json")
        if config_path is not None:
            self._load_from_config_json(config_path)

        pyproject_config = self._load_from_pyproject_dict()

        # Если в pyproject указан путь к config файлу, он перекрывает config.json
        if "config_file" in pyproject_config:
            override = self._locate(str(pyproject_config.pop("config_file")))
            if override is not None and override != config_path:
                self._load_from_config_json(override)

        self._config_cache.update(pyproject_config)

    def _load_from_pyproject_dict(self) -> dict[str, Any]:
        """Читает конфигурацию из [tool.singular_control_hub] в pyproject.toml."""
        pyproject_path = self._locate("pyproject.toml")
        if pyproject_path is None:
            return {}

        try:
            with open(pyproject_path, "rb") as f:
                data = tomllib.load(f)
        except (OSError, tomllib.TOMLDecodeError) as e:
            print(f"Ошибка при чтении pyproject.toml: {e}")
            return {}

        tool_config = data.get("tool", {}).get("singular_control_hub", {})
        return dict(tool_config) if tool_config else {}

    def _load_from_config_json(self, path: Path) -> None:
        """Загружает конфигурацию из JSON файла."""
        try:
            with open(path, "r", encoding="utf-8") as f:
                config_data = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            print(f"Ошибка при чтении {path}: {e}")
            return
        self._config_cache.update(config_data)

    def get(self, key: str, default: Any = None) -> Any:
        """Возвращает значение по ключу или default."""
        return self._config_cache.get(key, default)

    def get_path(self, key: str) -> Path:
        """Возвращает значение ключа как Path, иначе KeyError."""
        value = self.get(key)
        if value is None:
            raise KeyError(f"Ключ конфигурации '{key}' не найден")
        return Path(value)

    def output_dir(self) -> Path:
        """Каталог результатов: переменная окружения SINGULAR_HUB_OUTPUT_DIR или output_dir."""
        env_value = os.getenv(OUTPUT_DIR_ENV)
        return Path(env_value) if env_value else self.get_path("output_dir")
