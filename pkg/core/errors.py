"""
Errors — Иерархия исключений лаборатории NETT.

Библиотечный код только бросает исключения; коды выхода назначает
точка входа (nett_cli.main):
    0 — успех, 2 — ошибка конфигурации, 3 — нет артефакта, 4 — расходимость.
"""

from __future__ import annotations

from typing import Any


class NettError(Exception):
    """Базовое исключение."""
    exit_code: int = 1
    code: str = "error"

    def __init__(self, message: str, *, code: str | None = None):
        super().__init__(message)
        if code is not None:
            self.code = code


class ShapeError(NettError, ValueError):
    """Несовпадение размерностей."""
    code = "shape"


class ConfigError(NettError):
    """Неизвестный ключ или недопустимое значение конфигурации."""
    exit_code = 2
    code = "config"


class ArtifactExistsError(NettError):
    """Каталог уже существует, а --force не указан."""
    exit_code = 2
    code = "exists"


class MissingArtifactError(NettError):
    """Нет чекпоинта, датасета или входного файла."""
    exit_code = 3
    code = "missing"


class CheckpointError(MissingArtifactError):
    """Чекпоинт не читается: bad_magic | version_mismatch | corrupt | shape_mismatch."""
    code = "corrupt"


class DepthFormatError(NettError, ValueError):
    """Файл глубины не читается: malformed_header | channel_count | non_finite."""
    exit_code = 3
    code = "malformed_header"


class DivergenceError(NettError):
    """Численная расходимость обучения или оптимизации."""
    exit_code = 4
    code = "divergence"

    def __init__(self, message: str, *, trace: Any = None):
        super().__init__(message)
        self.trace = trace  # частичный MetricTrace, если есть
