"""Ground removal, range cropping and subsampling of annotated pairs"""

from typing import Iterable, Optional, Tuple

import numpy as np

from src.geometry.core import PointCloud
from src.synth.annotate import AnnotatedPair
from src.utils.config import PreprocessConfig
from src.utils.error_handler import ConfigurationError, MissingLabels
from src.utils.logger_setup import setup_logger

logger = setup_logger(__name__)

GROUND_STRATEGIES = ("entity", "height", "none")


def remove_ground(cloud: PointCloud, strategy: str = "height", threshold: float = 0.3,
                  ground_ids: Iterable[int] = ()) -> Tuple[PointCloud, np.ndarray]:
    """Drop ground points; returns the survivors and their original indices.

    height: drop points whose up coordinate is below `threshold`.
    entity: drop points labeled with one of `ground_ids`.
    """
    if strategy == "none":
        keep = np.arange(len(cloud))
    elif strategy == "height":
        keep = np.nonzero(cloud.points[:, 2] >= threshold)[0]
    elif strategy == "entity":
        if cloud.labels is None:
            raise MissingLabels("Ground removal by entity needs labels")
        keep = np.nonzero(~np.isin(cloud.labels, np.asarray(list(ground_ids), dtype=np.int64)))[0]
    else:
        raise ConfigurationError(f"Unknown ground removal strategy: {strategy}")
    return cloud.subset(keep), keep


def _crop(cloud: PointCloud, cfg: PreprocessConfig) -> np.ndarray:
    keep = np.linalg.norm(cloud.points, axis=1) <= cfg.max_range
    if cfg.front_view_only:
        keep &= cloud.points[:, 0] > 0.0
    return np.nonzero(keep)[0]


def _subsample(count: int, target: int, rng: np.random.Generator) -> np.ndarray:
    if count <= target:
        return np.arange(count)
    return np.sort(rng.choice(count, size=target, replace=False))


def _frame_index(cloud: PointCloud, cfg: PreprocessConfig, ground_ids, rng: np.random.Generator) -> np.ndarray:
    """Composed original-index map of one frame through every filter"""
    kept, index = remove_ground(cloud, cfg.ground_strategy, cfg.height_threshold, ground_ids)
    cropped = _crop(kept, cfg)
    index = index[cropped]
    return index[_subsample(index.shape[0], cfg.num_points, rng)]


def preprocess(pair: AnnotatedPair, cfg: PreprocessConfig = None, seed: int = 0,
               ground_ids: Optional[Iterable[int]] = None) -> AnnotatedPair:
    """ground removal -> range (and optional front-view) crop -> seeded subsample.

    The first frame's index map is applied to the flow so points and flow stay
    aligned; relative point order is preserved.
    """
    cfg = cfg or PreprocessConfig()
    ground_ids = tuple(pair.ground_ids if ground_ids is None else ground_ids)
    rng = np.random.default_rng(seed)

    first_index = _frame_index(pair.first, cfg, ground_ids, rng)
    second_index = _frame_index(pair.second, cfg, ground_ids, rng)
    if pair.origin_index is not None:
        origin = pair.origin_index[first_index]
    else:
        origin = first_index

    logger.debug(
        f"Preprocessed pair ({cfg.ground_strategy}): {len(pair.first)}->{first_index.shape[0]}, "
        f"{len(pair.second)}->{second_index.shape[0]} points"
    )
    return AnnotatedPair(
        pair.first.subset(first_index),
        pair.second.subset(second_index),
        pair.flow.subset(first_index),
        ground_ids,
        origin,
    )
