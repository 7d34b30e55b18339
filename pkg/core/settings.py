"""
Settings — Переменные окружения процесса.

Значения читаются из окружения (и из .env, если он есть):
    NETT_THREADS    — максимум рабочих потоков/процессов (по умолчанию — физические ядра)
    NETT_LOG_LEVEL  — уровень логирования (INFO)
"""

from __future__ import annotations

import logging
import os

import psutil
from dotenv import load_dotenv

load_dotenv()

LOG_FORMAT = "%(asctime)s [%(name)s] %(message)s"
LOG_DATEFMT = "%H:%M:%S"


def worker_count() -> int:
    """Сколько воркеров разрешено (NETT_THREADS, минимум 1)."""
    default = psutil.cpu_count(logical=False) or psutil.cpu_count() or 1
    raw = os.getenv("NETT_THREADS", str(default))
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def setup_logging() -> None:
    """Настроить корневой логгер (вызывается только точками входа)."""
    level = os.getenv("NETT_LOG_LEVEL", "INFO").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format=LOG_FORMAT,
        datefmt=LOG_DATEFMT,
    )
