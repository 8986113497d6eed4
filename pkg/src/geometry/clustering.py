"""Density-based segmentation of a cloud into rigid-object candidates"""

from collections import deque
from dataclasses import dataclass
from typing import List

import numpy as np
from scipy.spatial import cKDTree

from src.geometry.core import PointCloud
from src.utils.config import DbscanConfig
from src.utils.error_handler import EmptyCloud
from src.utils.logger_setup import setup_logger
from src.utils.validators import readonly

logger = setup_logger(__name__)

NOISE = -1


@dataclass(frozen=True)
class Clustering:
    """Per-point cluster ids 0..cluster_count-1, or NOISE"""
    assignments: np.ndarray
    cluster_count: int

    def __post_init__(self):
        object.__setattr__(self, "assignments", readonly(np.asarray(self.assignments, dtype=np.int64).copy()))

    def __len__(self) -> int:
        return self.assignments.shape[0]

    def members(self, cluster_id: int) -> np.ndarray:
        return np.nonzero(self.assignments == cluster_id)[0]

    def clusters(self) -> List[np.ndarray]:
        """Member indices of every cluster, in id order"""
        order = np.argsort(self.assignments, kind="stable")
        sorted_ids = self.assignments[order]
        bounds = np.searchsorted(sorted_ids, np.arange(self.cluster_count + 1))
        return [order[bounds[c]:bounds[c + 1]] for c in range(self.cluster_count)]

    @property
    def noise(self) -> np.ndarray:
        return np.nonzero(self.assignments == NOISE)[0]

    @classmethod
    def all_noise(cls, count: int) -> "Clustering":
        return cls(np.full(count, NOISE, dtype=np.int64), 0)


def dbscan(cloud: PointCloud, cfg: DbscanConfig = None) -> Clustering:
    """DBSCAN with Euclidean epsilon-neighborhoods (self included in the count).

    Seeds are visited in ascending index order and each cluster is grown to
    completion before the next seed, so a border point joins the first cluster
    that reaches it.
    """
    cfg = cfg or DbscanConfig()
    n = len(cloud)
    if n == 0:
        raise EmptyCloud("DBSCAN needs a non-empty cloud")

    tree = cKDTree(cloud.points)
    neighborhoods = tree.query_ball_point(cloud.points, r=cfg.epsilon, return_sorted=True)
    is_core = np.fromiter((len(nbrs) >= cfg.min_points for nbrs in neighborhoods), dtype=bool, count=n)

    assignments = np.full(n, NOISE, dtype=np.int64)
    cluster_id = 0
    for seed in range(n):
        if assignments[seed] != NOISE or not is_core[seed]:
            continue
        assignments[seed] = cluster_id
        frontier = deque([seed])
        while frontier:
            current = frontier.popleft()
            for neighbor in neighborhoods[current]:
                if assignments[neighbor] != NOISE:
                    continue
                assignments[neighbor] = cluster_id
                if is_core[neighbor]:
                    frontier.append(neighbor)
        cluster_id += 1

    logger.debug(f"DBSCAN: {cluster_id} clusters, {int(np.sum(assignments == NOISE))} noise points of {n}")
    return Clustering(assignments, cluster_id)
