"""Scene-flow evaluation: EPE3D, strict/relaxed accuracy and outlier ratio"""

from dataclasses import asdict, dataclass
from typing import Dict, List, Literal, Sequence, Tuple

import numpy as np

from src.geometry.core import FlowField
from src.utils.error_handler import ConfigurationError, EmptyInput, LengthMismatch

STRICT_ABS, STRICT_REL = 0.05, 0.05
RELAX_ABS, RELAX_REL = 0.1, 0.1
OUTLIER_ABS, OUTLIER_REL = 0.3, 0.1
# Guard for relative error on zero ground-truth flow (meters)
RELATIVE_EPS = 1e-9


@dataclass(frozen=True)
class FlowMetrics:
    epe3d: float
    acc_strict: float
    acc_relax: float
    outliers: float
    point_count: int

    def as_dict(self) -> Dict[str, float]:
        return asdict(self)


def point_errors(pred: np.ndarray, gt: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Per-point end-point error and relative error"""
    errors = np.linalg.norm(pred - gt, axis=1)
    relative = errors / np.maximum(np.linalg.norm(gt, axis=1), RELATIVE_EPS)
    return errors, relative


def _check(pred: FlowField, gt: FlowField):
    if len(pred) != len(gt):
        raise LengthMismatch(f"Prediction has {len(pred)} vectors, ground truth {len(gt)}")
    if len(gt) == 0:
        raise EmptyInput("Cannot evaluate an empty flow field")


def _from_errors(errors: np.ndarray, relative: np.ndarray) -> FlowMetrics:
    strict = np.logical_or(errors < STRICT_ABS, relative < STRICT_REL)
    relax = np.logical_or(errors < RELAX_ABS, relative < RELAX_REL)
    outlier = np.logical_or(errors > OUTLIER_ABS, relative > OUTLIER_REL)
    return FlowMetrics(
        epe3d=float(errors.mean()),
        acc_strict=float(strict.mean() * 100.0),
        acc_relax=float(relax.mean() * 100.0),
        outliers=float(outlier.mean() * 100.0),
        point_count=int(errors.shape[0]),
    )


def evaluate(pred: FlowField, gt: FlowField) -> FlowMetrics:
    """Metrics of one predicted flow against ground truth"""
    _check(pred, gt)
    return _from_errors(*point_errors(pred.vectors, gt.vectors))


def aggregate(pairs: Sequence[Tuple[FlowField, FlowField]],
              mode: Literal["per_pair", "pooled"] = "per_pair") -> FlowMetrics:
    """Dataset-level metrics: mean of per-pair metrics, or one evaluation over all points"""
    if not pairs:
        raise EmptyInput("No pairs to aggregate")
    if mode == "pooled":
        for pred, gt in pairs:
            _check(pred, gt)
        errors, relative = zip(*(point_errors(p.vectors, g.vectors) for p, g in pairs))
        return _from_errors(np.concatenate(errors), np.concatenate(relative))
    if mode != "per_pair":
        raise ConfigurationError(f"Unknown averaging mode: {mode}")

    per_pair = [evaluate(pred, gt) for pred, gt in pairs]
    return mean_metrics(per_pair)


def mean_metrics(per_pair: List[FlowMetrics]) -> FlowMetrics:
    if not per_pair:
        raise EmptyInput("No metrics to average")
    return FlowMetrics(
        epe3d=float(np.mean([m.epe3d for m in per_pair])),
        acc_strict=float(np.mean([m.acc_strict for m in per_pair])),
        acc_relax=float(np.mean([m.acc_relax for m in per_pair])),
        outliers=float(np.mean([m.outliers for m in per_pair])),
        point_count=int(sum(m.point_count for m in per_pair)),
    )
