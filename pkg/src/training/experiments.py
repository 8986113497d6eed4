"""Desk-scale benchmark and ablation sweeps"""

from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

from src.evaluation.metrics import FlowMetrics, aggregate
from src.evaluation.reporter import ExperimentReporter
from src.geometry.clustering import dbscan
from src.labeling.pseudo_label import refine_flow
from src.models.estimator import EstimatorParams, nn_baseline_flow
from src.synth.annotate import AnnotatedPair
from src.synth.generator import derive_seed, generate_pairs, scene_pairs
from src.synth.preprocess import preprocess
from src.synth.scene import SceneScript, build_scene
from src.training.mean_teacher import TrainState
from src.training.trainer import Trainer, evaluate_predictor, nn_predictor, params_predictor
from src.utils.config import RunConfig
from src.utils.dataset_store import DatasetStore
from src.utils.error_handler import ConfigurationError
from src.utils.logger_setup import setup_logger
from src.utils.monitoring import TrainingMonitor

logger = setup_logger(__name__)

SWEEPS = ("alpha", "k", "gpr", "transform", "components")

TRANSFORM_VARIANTS = {
    "asymmetric": {"kind": "rotation", "symmetric": False},
    "symmetric": {"kind": "rotation", "symmetric": True},
    "translation": {"kind": "translation", "symmetric": False},
    "rotation+translation": {"kind": "rotation+translation", "symmetric": False},
}

COMPONENT_VARIANTS = {
    "EPC": {"pipeline": {"use_dr": False, "use_cr": False}},
    "EPC+DR": {"pipeline": {"use_dr": True, "use_cr": False}},
    "EPC+DR+CR": {"pipeline": {"use_dr": True, "use_cr": True}},
    "no mean teacher": {"ema": {"alpha": 0.0}},
}


@dataclass
class DomainData:
    source: List[AnnotatedPair]
    target: List[AnnotatedPair]
    val: List[AnnotatedPair]


def _load_or_generate(directory: Optional[str], preset: str, cfg: RunConfig, stream: int,
                      workers: int) -> List[AnnotatedPair]:
    if directory:
        return DatasetStore(directory).load_all()
    script = SceneScript.preset(preset)
    return [g.pair for g in generate_pairs(script, cfg.data.num_pairs, derive_seed(cfg.seed, stream),
                                           cfg.preprocess, workers)]


def build_domains(cfg: RunConfig, workers: int = 1) -> DomainData:
    """Source training pairs, unlabeled target pairs and held-out target pairs"""
    data = DomainData(
        source=_load_or_generate(cfg.data.source_dir, "source", cfg, 1, workers),
        target=_load_or_generate(cfg.data.target_dir, "target", cfg, 2, workers),
        val=_load_or_generate(cfg.data.val_dir, "target", cfg, 3, workers),
    )
    logger.info(f"Domains ready: {len(data.source)} source, {len(data.target)} target, {len(data.val)} held-out")
    return data


def run_benchmark(cfg: RunConfig, data: DomainData, out_dir: Optional[str] = None) -> Dict[str, FlowMetrics]:
    """Pretrain on source, adapt to target; compare held-out target metrics"""
    log_path = f"{out_dir}/training_log.jsonl" if out_dir else None
    trainer = Trainer(cfg, TrainingMonitor(log_path))
    pretrained = trainer.pretrain(data.source, val_pairs=data.val)
    adapted = trainer.adapt(pretrained, data.source, data.target, val_pairs=data.val)
    trainer.monitor.log_summary()

    mode = cfg.metrics.averaging
    results = {
        "nn-baseline": evaluate_predictor(nn_predictor(), data.val, mode),
        "source-only": evaluate_predictor(params_predictor(pretrained.student), data.val, mode),
        "adapted": evaluate_predictor(params_predictor(adapted.student), data.val, mode),
    }
    ratio = results["adapted"].epe3d / max(results["source-only"].epe3d, 1e-12)
    logger.info(f"Held-out target EPE: source-only {results['source-only'].epe3d:.4f} -> "
                f"adapted {results['adapted'].epe3d:.4f} (ratio {ratio:.3f})")

    if out_dir:
        reporter = ExperimentReporter("Desk-scale adaptation benchmark", mode)
        for name, metrics in results.items():
            reporter.add("bench", name, metrics)
        reporter.write(out_dir, "bench")
    return results


class AblationRunner:
    """Sweeps sharing one pretrained student"""

    def __init__(self, cfg: RunConfig, data: DomainData, reporter: ExperimentReporter):
        self.cfg = cfg
        self.data = data
        self.reporter = reporter
        self._pretrained: Optional[EstimatorParams] = None

    @property
    def pretrained(self) -> EstimatorParams:
        if self._pretrained is None:
            trainer = Trainer(self.cfg)
            self._pretrained = trainer.pretrain(self.data.source, steps=self.cfg.ablation.pretrain_steps).student
        return self._pretrained

    def _adapt_variant(self, cfg: RunConfig) -> FlowMetrics:
        trainer = Trainer(cfg)
        state = trainer.adapt(TrainState.initial(self.pretrained, cfg.seed), self.data.source, self.data.target,
                              steps=cfg.ablation.adapt_steps)
        return evaluate_predictor(params_predictor(state.student), self.data.val, cfg.metrics.averaging)

    def _section(self, name: str, **changes) -> dict:
        section = getattr(self.cfg, name).model_dump()
        section.update(changes)
        return section

    def sweep_alpha(self):
        for alpha in self.cfg.ablation.alphas:
            cfg = self.cfg.replace(ema=self._section("ema", alpha=alpha))
            self.reporter.add("alpha", f"{alpha:.3f}", self._adapt_variant(cfg), alpha=alpha)

    def sweep_k(self):
        for k in self.cfg.ablation.k_values:
            cfg = self.cfg.replace(refine=self._section("refine", k_neighbors=k))
            self.reporter.add("k", str(k), self._adapt_variant(cfg), k=k)

    def sweep_transform(self):
        for name in self.cfg.ablation.transforms:
            if name not in TRANSFORM_VARIANTS:
                raise ConfigurationError(f"Unknown transform variant: {name}")
            cfg = self.cfg.replace(transform=self._section("transform", **TRANSFORM_VARIANTS[name]))
            self.reporter.add("transform", name, self._adapt_variant(cfg))

    def sweep_components(self):
        for name, changes in COMPONENT_VARIANTS.items():
            cfg = self.cfg.replace(**{section: self._section(section, **values) for section, values in changes.items()})
            self.reporter.add("components", name, self._adapt_variant(cfg))

    def sweep_gpr(self):
        for strategy, metrics in ground_removal_ablation(self.cfg).items():
            self.reporter.add("gpr", strategy, metrics)

    def run(self, sweeps=SWEEPS):
        for sweep in sweeps:
            logger.info(f"Running {sweep} sweep")
            getattr(self, f"sweep_{sweep}")()
        return self.reporter


def ground_removal_ablation(cfg: RunConfig, script: Optional[SceneScript] = None) -> Dict[str, FlowMetrics]:
    """Post-refinement EPE of the nearest-neighbor flow per ground removal strategy.

    Scored on non-ground points only so every strategy is judged on the same objects.
    """
    script = script or SceneScript.preset("sloped")
    raw_pairs = []
    for s in range(cfg.data.num_pairs):
        scene_seed = derive_seed(cfg.seed, 4, s)
        raw_pairs.extend(scene_pairs(build_scene(script, scene_seed), scene_seed, raw=True))

    results = {}
    for strategy in cfg.ablation.ground_strategies:
        pre_cfg = cfg.preprocess.model_copy(update={"ground_strategy": strategy})
        scored = []
        for index, raw in enumerate(raw_pairs):
            pair = preprocess(raw, pre_cfg, derive_seed(cfg.seed, 5, index))
            clusters = dbscan(pair.first, cfg.dbscan)
            refined, _ = refine_flow(pair.first, pair.second, nn_baseline_flow(pair.first, pair.second),
                                     clusters, cfg.refine, cfg.pipeline.use_dr, cfg.pipeline.use_cr)
            objects = np.nonzero(~np.isin(pair.first.labels, pair.ground_ids))[0]
            if objects.size:
                scored.append((refined.subset(objects), pair.flow.subset(objects)))
        results[strategy] = aggregate(scored, cfg.metrics.averaging)
    return results
