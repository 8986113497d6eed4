"""Tabular experiment reports"""

from pathlib import Path
from typing import Any, Dict, List, Optional

import pandas as pd

from src.evaluation.metrics import FlowMetrics
from src.utils.logger_setup import setup_logger

logger = setup_logger(__name__)

METRIC_COLUMNS = ["epe3d", "acc_strict", "acc_relax", "outliers", "point_count"]


class ExperimentReporter:
    """Collects one row per experiment variant and writes CSV/text tables"""

    def __init__(self, title: str, averaging: str = "per_pair"):
        self.title = title
        self.averaging = averaging
        self.rows: List[Dict[str, Any]] = []

    def add(self, sweep: str, variant: str, metrics: FlowMetrics, **extra: Any):
        row = {"sweep": sweep, "variant": variant}
        row.update(metrics.as_dict())
        row.update(extra)
        self.rows.append(row)
        logger.info(f"[{sweep}] {variant}: EPE3D {metrics.epe3d:.4f}, AS {metrics.acc_strict:.1f}%, "
                    f"AR {metrics.acc_relax:.1f}%, Out {metrics.outliers:.1f}%")

    def table(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.rows)
        if frame.empty:
            return pd.DataFrame(columns=["sweep", "variant"] + METRIC_COLUMNS)
        return frame

    def render(self) -> str:
        frame = self.table()
        header = f"{self.title} (averaging: {self.averaging})"
        if frame.empty:
            return header + "\n(no results)"
        return header + "\n" + frame.to_string(index=False, float_format=lambda v: f"{v:.4f}")

    def write(self, out_dir: str, name: str = "results") -> Optional[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        csv_path = out / f"{name}.csv"
        self.table().to_csv(csv_path, index=False, float_format="%.6f")
        (out / f"{name}.txt").write_text(self.render() + "\n")
        logger.info(f"Results table written to {csv_path}")
        return csv_path
