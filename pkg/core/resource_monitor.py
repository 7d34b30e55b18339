"""
Resource Monitor — Снимки ресурсов процесса во время обучения и прогонов.

Данные идут в лог и в TrainReport (время, пиковая память);
в детерминированные CSV не попадают.
"""

from __future__ import annotations

import logging
import os
import time
from dataclasses import dataclass

import psutil

logger = logging.getLogger("nett.resource_monitor")


@dataclass
class ResourceSnapshot:
    """Снимок состояния процесса."""
    timestamp: float
    cpu_count: int              # Физические ядра
    process_rss_mb: float       # Резидентная память процесса
    ram_total_mb: float
    ram_available_mb: float
    ram_percent: float

    @property
    def is_memory_tight(self) -> bool:
        """Свободной памяти меньше 10%."""
        return self.ram_percent > 90

    def to_dict(self) -> dict:
        return {
            "timestamp": self.timestamp,
            "cpu_count": self.cpu_count,
            "process_rss_mb": round(self.process_rss_mb, 1),
            "ram_total_mb": round(self.ram_total_mb, 1),
            "ram_available_mb": round(self.ram_available_mb, 1),
            "ram_percent": self.ram_percent,
        }


def take_snapshot() -> ResourceSnapshot:
    """Сделать снимок ресурсов текущего процесса."""
    ram = psutil.virtual_memory()
    rss = psutil.Process(os.getpid()).memory_info().rss
    return ResourceSnapshot(
        timestamp=time.time(),
        cpu_count=psutil.cpu_count(logical=False) or psutil.cpu_count() or 1,
        process_rss_mb=rss / (1024 ** 2),
        ram_total_mb=ram.total / (1024 ** 2),
        ram_available_mb=ram.available / (1024 ** 2),
        ram_percent=ram.percent,
    )


class WallClock:
    """Секундомер с учётом пиковой памяти между отметками."""

    def __init__(self):
        self._start = time.perf_counter()
        self.peak_rss_mb = take_snapshot().process_rss_mb

    def mark(self) -> float:
        """Обновить пик памяти и вернуть прошедшее время в секундах."""
        snap = take_snapshot()
        self.peak_rss_mb = max(self.peak_rss_mb, snap.process_rss_mb)
        if snap.is_memory_tight:
            logger.warning(f"⚠️ Мало памяти: {snap.ram_percent}% RAM занято")
        return self.elapsed

    @property
    def elapsed(self) -> float:
        return time.perf_counter() - self._start
