"""Training progress records and run-time performance monitoring"""

import json
import statistics
import time
from dataclasses import asdict, dataclass
from functools import wraps
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

import psutil

from src.utils.logger_setup import setup_logger

logger = setup_logger(__name__)


@dataclass(frozen=True)
class TrainingRecord:
    """One line of the training log"""
    phase: str
    step: int
    l_source: float
    l_epc: Optional[float] = None
    l_stu: Optional[float] = None
    val_epe: Optional[float] = None

    def as_dict(self) -> Dict[str, Any]:
        return {k: v for k, v in asdict(self).items() if v is not None}


class TrainingMonitor:
    """Writes line-delimited JSON training records and keeps running statistics.

    Records carry no wall-clock fields so that identical runs produce identical
    logs; timings go to the regular logger only.
    """

    def __init__(self, log_path: Optional[str] = None):
        self.log_path = Path(log_path) if log_path else None
        self.records: List[TrainingRecord] = []
        self.metrics: Dict[str, List[float]] = {}
        self.start_time = time.time()
        if self.log_path is not None:
            self.log_path.parent.mkdir(parents=True, exist_ok=True)
            self.log_path.write_text("")

    def record(self, record: TrainingRecord):
        self.records.append(record)
        for name in ("l_source", "l_epc", "l_stu", "val_epe"):
            value = getattr(record, name)
            if value is not None:
                self.record_metric(f"{record.phase}.{name}", value)
        if self.log_path is not None:
            with self.log_path.open("a") as f:
                f.write(json.dumps(record.as_dict(), sort_keys=True) + "\n")

    def record_metric(self, name: str, value: float):
        """Record a general metric"""
        self.metrics.setdefault(name, []).append(float(value))

    def get_metric_statistics(self, metric_name: str) -> Dict[str, float]:
        """Get statistics for a specific metric"""
        values = self.metrics.get(metric_name)
        if not values:
            return {"count": 0, "min": 0.0, "max": 0.0, "mean": 0.0, "last": 0.0}
        return {
            "count": len(values),
            "min": min(values),
            "max": max(values),
            "mean": statistics.mean(values),
            "last": values[-1],
        }

    def validation_history(self, phase: str) -> List[float]:
        return [r.val_epe for r in self.records if r.phase == phase and r.val_epe is not None]

    def log_summary(self):
        """Log a progress summary with process resource usage"""
        logger.info("=== Training Summary ===")
        for name in sorted(self.metrics):
            stats = self.get_metric_statistics(name)
            logger.info(f"{name}: last {stats['last']:.5f}, mean {stats['mean']:.5f} over {stats['count']}")
        memory_mb = psutil.Process().memory_info().rss / 1024 / 1024
        logger.info(f"Elapsed {time.time() - self.start_time:.1f}s, memory {memory_mb:.0f} MB")


def monitor_performance(func: Callable) -> Callable:
    """Decorator logging the duration of a function call"""
    @wraps(func)
    def wrapper(*args, **kwargs):
        start_time = time.time()
        try:
            return func(*args, **kwargs)
        finally:
            logger.debug(f"{func.__name__} took {time.time() - start_time:.3f}s")
    return wrapper
