"""Pretraining and adaptation loops over dataset pairs"""

from typing import Callable, List, Optional, Sequence, Tuple

from src.evaluation.metrics import FlowMetrics, aggregate
from src.geometry.core import FlowField, PointCloud
from src.models.estimator import EstimatorParams, nn_baseline_flow, predict_flow
from src.synth.annotate import AnnotatedPair
from src.training.mean_teacher import TrainState, adapt_step, pretrain_step
from src.utils.config import RunConfig
from src.utils.error_handler import EmptyInput
from src.utils.logger_setup import setup_logger
from src.utils.monitoring import TrainingMonitor, TrainingRecord, monitor_performance

logger = setup_logger(__name__)

Predictor = Callable[[PointCloud, PointCloud], FlowField]


def params_predictor(params: EstimatorParams) -> Predictor:
    return lambda first, second: predict_flow(params, first, second)


def nn_predictor() -> Predictor:
    return nn_baseline_flow


def evaluate_predictor(predict: Predictor, pairs: Sequence[AnnotatedPair],
                       mode: str = "per_pair") -> FlowMetrics:
    results = [(predict(p.first, p.second), p.flow) for p in pairs]
    return aggregate(results, mode)


class Trainer:
    """Drives the step functions and writes the training log"""

    def __init__(self, cfg: RunConfig, monitor: Optional[TrainingMonitor] = None):
        self.cfg = cfg
        self.monitor = monitor or TrainingMonitor()

    def _validate(self, params: EstimatorParams, val_pairs: Sequence[AnnotatedPair]) -> Optional[float]:
        if not val_pairs:
            return None
        return evaluate_predictor(params_predictor(params), val_pairs, self.cfg.metrics.averaging).epe3d

    def _is_eval_step(self, done: int, total: int) -> bool:
        return done % self.cfg.schedule.eval_interval == 0 or done == total

    def _log_best(self, phase: str):
        history = self.monitor.validation_history(phase)
        if history:
            logger.info(f"{phase}: best val EPE {min(history):.5f} over {len(history)} evaluations")

    @monitor_performance
    def pretrain(self, source_pairs: Sequence[AnnotatedPair], params: Optional[EstimatorParams] = None,
                 steps: Optional[int] = None, val_pairs: Sequence[AnnotatedPair] = ()) -> TrainState:
        """Source-only supervised training; pairs are visited round-robin"""
        if not source_pairs:
            raise EmptyInput("Pretraining needs at least one source pair")
        steps = self.cfg.schedule.pretrain_steps if steps is None else steps
        state = TrainState.initial(params or EstimatorParams.initial(self.cfg.estimator), self.cfg.seed)
        logger.info(f"Pretraining for {steps} steps on {len(source_pairs)} source pairs")

        for _ in range(steps):
            state = pretrain_step(state, source_pairs[state.step % len(source_pairs)], self.cfg)
            val = self._validate(state.student, val_pairs) if self._is_eval_step(state.step, steps) else None
            self.monitor.record(TrainingRecord("pretrain", state.step, state.l_source, val_epe=val))
            if val is not None:
                logger.info(f"pretrain step {state.step}: L_source {state.l_source:.5f}, val EPE {val:.5f}")
        self._log_best("pretrain")
        return state

    @monitor_performance
    def adapt(self, state: TrainState, source_pairs: Sequence[AnnotatedPair],
              target_pairs: Sequence[AnnotatedPair], steps: Optional[int] = None,
              val_pairs: Sequence[AnnotatedPair] = ()) -> TrainState:
        """Mean-teacher adaptation; target flow labels are never read"""
        if not source_pairs or not target_pairs:
            raise EmptyInput("Adaptation needs source and target pairs")
        steps = self.cfg.schedule.adapt_steps if steps is None else steps
        state = TrainState(state.student, state.student, 0, self.cfg.seed)
        targets: List[Tuple[PointCloud, PointCloud]] = [(p.first, p.second) for p in target_pairs]
        logger.info(
            f"Adapting for {steps} steps: {len(source_pairs)} source, {len(targets)} target pairs, "
            f"alpha={self.cfg.ema.alpha}, transform={self.cfg.transform.kind}"
            f"{' (symmetric)' if self.cfg.transform.symmetric else ''}"
        )

        for _ in range(steps):
            state = adapt_step(state, source_pairs[state.step % len(source_pairs)],
                               targets[state.step % len(targets)], self.cfg)
            val = self._validate(state.student, val_pairs) if self._is_eval_step(state.step, steps) else None
            self.monitor.record(TrainingRecord("adapt", state.step, state.l_source, state.l_epc, state.l_stu, val))
            if val is not None:
                logger.info(
                    f"adapt step {state.step}: L_source {state.l_source:.5f}, L_EPC {state.l_epc:.5f}, "
                    f"val EPE {val:.5f}"
                )
        if state.diagnostics:
            logger.info(f"Pseudo-label diagnostics: {state.diagnostics}")
        self._log_best("adapt")
        return state
