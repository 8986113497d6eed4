"""Mean-teacher adaptation: EMA teacher, asymmetric input transform and end-point consistency"""

from dataclasses import dataclass, field, replace
from typing import Dict, Tuple

import numpy as np

from src.geometry.clustering import dbscan
from src.geometry.core import FlowField, PointCloud, RigidMotion
from src.labeling.pseudo_label import PseudoLabels, WarpedCloud, generate_pseudo_labels
from src.models.estimator import (EstimatorParams, Gradients, loss_and_gradients, predict_flow,
                                  sgd_step)
from src.synth.annotate import AnnotatedPair
from src.utils.config import CrConfig, EmaConfig, RunConfig, TransformConfig
from src.utils.error_handler import NonFiniteLoss
from src.utils.logger_setup import setup_logger

logger = setup_logger(__name__)


@dataclass(frozen=True)
class AsymTransform:
    """Global transform of the student's first frame: yaw `angle` about z, then `offset`"""
    kind: str = "rotation"
    angle: float = 0.0
    offset: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    @property
    def is_identity(self) -> bool:
        return self.angle == 0.0 and not any(self.offset)

    def motion(self) -> RigidMotion:
        return RigidMotion.from_yaw(self.angle, self.offset)

    def apply(self, points: np.ndarray) -> np.ndarray:
        if self.is_identity:
            return np.array(points, dtype=np.float64)
        return self.motion().apply(points)

    def inverse(self) -> "AsymTransform":
        back = self.motion().inverse()
        return AsymTransform(self.kind, -self.angle, tuple(float(v) for v in back.translation))

    @classmethod
    def draw(cls, rng: np.random.Generator, cfg: TransformConfig = None) -> "AsymTransform":
        cfg = cfg or TransformConfig()
        angle, offset = 0.0, (0.0, 0.0, 0.0)
        if "rotation" in cfg.kind:
            limit = np.radians(cfg.rotation_range_deg)
            angle = float(rng.uniform(-limit, limit)) if limit > 0 else 0.0
        if "translation" in cfg.kind:
            r = cfg.translation_range
            xy = rng.uniform(-r, r, size=2) if r > 0 else np.zeros(2)
            offset = (float(xy[0]), float(xy[1]), 0.0)
        return cls(cfg.kind, angle, offset)


@dataclass(frozen=True)
class TrainState:
    """Student/teacher parameters, step counter and loss tallies"""
    student: EstimatorParams
    teacher: EstimatorParams
    step: int = 0
    seed: int = 0
    l_source: float = 0.0
    l_epc: float = 0.0
    l_source_total: float = 0.0
    l_epc_total: float = 0.0
    diagnostics: Dict[str, int] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        self.student.check_compatible(self.teacher)

    @property
    def l_stu(self) -> float:
        return self.l_source + self.l_epc

    @classmethod
    def initial(cls, params: EstimatorParams, seed: int = 0) -> "TrainState":
        """Teacher starts as a copy of the student"""
        return cls(params, params, 0, seed)


def ema_update(teacher: EstimatorParams, student: EstimatorParams, cfg: EmaConfig = None) -> EstimatorParams:
    """theta' = alpha * theta_teacher + (1 - alpha) * theta_student, entrywise"""
    cfg = cfg or EmaConfig()
    teacher.check_compatible(student)
    alpha = cfg.alpha
    return teacher.from_vector(alpha * teacher.as_vector() + (1.0 - alpha) * student.as_vector())


def asymmetric_transform(pair: Tuple[PointCloud, PointCloud], t: AsymTransform) -> Tuple[PointCloud, PointCloud]:
    """Transform the first frame only; the second frame is returned as the same object"""
    first, second = pair
    if t.is_identity:
        return first, second
    return first.with_points(t.apply(first.points)), second


def symmetric_transform(pair: Tuple[PointCloud, PointCloud], t: AsymTransform) -> Tuple[PointCloud, PointCloud]:
    first, second = pair
    if t.is_identity:
        return first, second
    return first.with_points(t.apply(first.points)), second.with_points(t.apply(second.points))


def epc_loss_targets(first: PointCloud, teacher_flow: FlowField, clusters, second: PointCloud,
                     cr_cfg: CrConfig = None, use_dr: bool = True, use_cr: bool = True) -> PseudoLabels:
    """Refined pseudo-labels from the teacher's warp: P_warp -> DR -> CR"""
    warp = WarpedCloud.from_flow(first, teacher_flow)
    return generate_pseudo_labels(first, warp, clusters, second, cr_cfg, use_dr, use_cr)


def teacher_pseudo_labels(teacher: EstimatorParams, target: Tuple[PointCloud, PointCloud],
                          cfg: RunConfig) -> PseudoLabels:
    first, second = target
    teacher_flow = predict_flow(teacher, first, second)
    clusters = dbscan(first, cfg.dbscan)
    return epc_loss_targets(first, teacher_flow, clusters, second, cfg.refine,
                            cfg.pipeline.use_dr, cfg.pipeline.use_cr)


def _source_terms(params: EstimatorParams, source: AnnotatedPair) -> Tuple[float, Gradients]:
    return loss_and_gradients(params, source.first, source.second, source.warped)


def _epc_terms(params: EstimatorParams, target: Tuple[PointCloud, PointCloud], labels: PseudoLabels,
               transform: AsymTransform, cfg: TransformConfig) -> Tuple[float, Gradients]:
    """Student loss on the transformed target pair against (optionally transformed) pseudo-labels"""
    if cfg.symmetric:
        first_hat, second_hat = symmetric_transform(target, transform)
    else:
        first_hat, second_hat = asymmetric_transform(target, transform)
    reconcile = cfg.reconcile or cfg.symmetric
    targets = transform.apply(labels.points) if reconcile else labels.points
    return loss_and_gradients(params, first_hat, second_hat, targets)


def pretrain_step(state: TrainState, source: AnnotatedPair, cfg: RunConfig) -> TrainState:
    """One supervised step on a source pair; the teacher mirrors the student"""
    try:
        l_source, grads = _source_terms(state.student, source)
    except NonFiniteLoss as e:
        e.diagnostics.update({"step": state.step, "phase": "pretrain"})
        logger.error(f"Non-finite loss at pretrain step {state.step}: {e.diagnostics}")
        raise
    student = sgd_step(state.student, grads, cfg.optimizer)
    return replace(
        state,
        student=student,
        teacher=student,
        step=state.step + 1,
        l_source=l_source,
        l_epc=0.0,
        l_source_total=state.l_source_total + l_source,
    )


def adapt_step(state: TrainState, source: AnnotatedPair, target: Tuple[PointCloud, PointCloud],
               cfg: RunConfig) -> TrainState:
    """Joint step: L_stu = L_source + L_EPC, SGD on the student, EMA on the teacher.

    All randomness comes from a stream seeded by (seed, step).
    """
    rng = np.random.default_rng([state.seed, state.step])
    transform = AsymTransform.draw(rng, cfg.transform)
    try:
        l_source, g_source = _source_terms(state.student, source)
        labels = teacher_pseudo_labels(state.teacher, target, cfg)
        l_epc, g_epc = _epc_terms(state.student, target, labels, transform, cfg.transform)
    except NonFiniteLoss as e:
        e.diagnostics.update({"step": state.step, "phase": "adapt", "angle": transform.angle})
        logger.error(f"Non-finite loss at adapt step {state.step}: {e.diagnostics}")
        raise

    student = sgd_step(state.student, g_source + g_epc, cfg.optimizer)
    teacher = ema_update(state.teacher, student, cfg.ema)

    diagnostics = dict(state.diagnostics)
    for kind, count in labels.diagnostics.as_dict().items():
        diagnostics[kind] = diagnostics.get(kind, 0) + count

    return TrainState(
        student=student,
        teacher=teacher,
        step=state.step + 1,
        seed=state.seed,
        l_source=l_source,
        l_epc=l_epc,
        l_source_total=state.l_source_total + l_source,
        l_epc_total=state.l_epc_total + l_epc,
        diagnostics=diagnostics,
    )
