"""Annotated pair generation from scene scripts"""

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from src.geometry.core import PointCloud
from src.synth.annotate import AnnotatedPair, annotate_pair
from src.synth.lidar import lidar_scan
from src.synth.preprocess import preprocess
from src.synth.scene import Scene, SceneScript, build_scene
from src.utils.config import PreprocessConfig
from src.utils.logger_setup import setup_logger
from src.utils.parallel import parallel_map

logger = setup_logger(__name__)


def derive_seed(*entropy: int) -> int:
    """Independent 32-bit seed for a (run seed, index, ...) tuple"""
    return int(np.random.SeedSequence([int(e) for e in entropy]).generate_state(1)[0])


@dataclass(frozen=True)
class GeneratedPair:
    pair: AnnotatedPair
    scene_seed: int
    frame: int


def scan_scene(scene: Scene, seed: int) -> List[PointCloud]:
    """One labeled scan per frame, range noise seeded per frame"""
    lidar = scene.script.lidar if scene.script is not None else None
    return [
        lidar_scan(scene.entities, scene.sensor.poses[f], lidar, f, np.random.default_rng(derive_seed(seed, f)))
        for f in range(len(scene.sensor))
    ]


def scene_pairs(scene: Scene, seed: int, cfg: Optional[PreprocessConfig] = None,
                raw: bool = False) -> List[AnnotatedPair]:
    """Annotated consecutive-frame pairs of a scene, preprocessed unless `raw`"""
    scans = scan_scene(scene, seed)
    pairs = []
    for frame in range(len(scans) - 1):
        pair = annotate_pair(scene.entities, scene.sensor, frame, (scans[frame], scans[frame + 1]))
        if not raw:
            pair = preprocess(pair, cfg, derive_seed(seed, frame, 1))
        pairs.append(pair)
    return pairs


def _scene_job(args) -> List[GeneratedPair]:
    script, scene_seed, cfg = args
    scene = build_scene(script, scene_seed)
    return [GeneratedPair(pair, scene_seed, frame) for frame, pair in enumerate(scene_pairs(scene, scene_seed, cfg))]


def generate_pairs(script: SceneScript, num_pairs: int, seed: int,
                   cfg: Optional[PreprocessConfig] = None, workers: int = 1) -> List[GeneratedPair]:
    """`num_pairs` preprocessed pairs drawn from independently seeded scenes.

    Output depends only on (script, num_pairs, seed, cfg), never on `workers`.
    """
    per_scene = script.frames - 1
    scene_count = -(-num_pairs // per_scene)
    jobs = [(script, derive_seed(seed, s), cfg) for s in range(scene_count)]

    batches = parallel_map(_scene_job, jobs, workers)

    generated = [g for batch in batches for g in batch][:num_pairs]
    logger.info(f"Generated {len(generated)} pairs from {scene_count} '{script.name}' scenes")
    return generated
