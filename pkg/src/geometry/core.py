"""Point clouds, rigid motions, Kabsch fitting and exact k-nearest-neighbor queries.

Row-vector convention throughout: a point p maps to p·R + t.
"""

from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.transform import Rotation

from src.utils.error_handler import DataValidationError, DegenerateCluster, EmptyCloud, EmptyNeighborhood
from src.utils.validators import NO_LABEL, as_labels, as_points, as_vector3, readonly, require_same_length

ORTHONORMAL_TOLERANCE = 1e-9
DEGENERATE_TOLERANCE = 1e-12
# Extra neighbors fetched per batch query so index tie-breaking stays exact
TIE_SLACK = 4


@dataclass(frozen=True)
class PointCloud:
    """Ordered 3D points in meters with optional per-point entity labels"""
    points: np.ndarray
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        points = readonly(as_points(self.points, "PointCloud.points").copy())
        object.__setattr__(self, "points", points)
        if self.labels is not None:
            labels = readonly(as_labels(self.labels, len(points), "PointCloud.labels").copy())
            object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.points.shape[0]

    @property
    def has_labels(self) -> bool:
        return self.labels is not None

    def subset(self, indices: np.ndarray) -> "PointCloud":
        labels = self.labels[indices] if self.labels is not None else None
        return PointCloud(self.points[indices], labels)

    def with_points(self, points: np.ndarray) -> "PointCloud":
        """Same labels, new coordinates"""
        return PointCloud(points, self.labels)

    def translated(self, offset) -> "PointCloud":
        return PointCloud(self.points + as_vector3(offset, "offset"), self.labels)

    @classmethod
    def empty(cls) -> "PointCloud":
        return cls(np.zeros((0, 3)), np.zeros(0, dtype=np.int64))


@dataclass(frozen=True)
class FlowField:
    """Per-point displacement vectors, index-aligned with an anchor cloud"""
    vectors: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "vectors", readonly(as_points(self.vectors, "FlowField.vectors").copy()))

    def __len__(self) -> int:
        return self.vectors.shape[0]

    def check_anchor(self, cloud: PointCloud) -> "FlowField":
        require_same_length(cloud.points, self.vectors, names=("cloud", "flow"))
        return self

    def subset(self, indices: np.ndarray) -> "FlowField":
        return FlowField(self.vectors[indices])

    @classmethod
    def zeros(cls, count: int) -> "FlowField":
        return cls(np.zeros((count, 3)))


@dataclass(frozen=True)
class RigidMotion:
    """Rotation + translation acting on row vectors: p -> p·R + t"""
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        rotation = np.asarray(self.rotation, dtype=np.float64)
        if rotation.shape != (3, 3) or not np.all(np.isfinite(rotation)):
            raise DataValidationError(f"RigidMotion.rotation: expected finite 3x3, got {rotation.shape}")
        if np.max(np.abs(rotation.T @ rotation - np.eye(3))) > ORTHONORMAL_TOLERANCE:
            raise DataValidationError("RigidMotion.rotation is not orthonormal")
        if abs(np.linalg.det(rotation) - 1.0) > ORTHONORMAL_TOLERANCE:
            raise DataValidationError("RigidMotion.rotation has det != +1")
        object.__setattr__(self, "rotation", readonly(rotation.copy()))
        object.__setattr__(self, "translation", readonly(as_vector3(self.translation, "RigidMotion.translation").copy()))

    @classmethod
    def identity(cls) -> "RigidMotion":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_yaw(cls, angle: float, translation=(0.0, 0.0, 0.0)) -> "RigidMotion":
        """Rotation by `angle` radians about the up (z) axis, counter-clockwise seen from above"""
        return cls(yaw_rotation(angle), translation)

    @classmethod
    def from_matrix(cls, matrix: np.ndarray) -> "RigidMotion":
        """From a 4x4 row-convention homogeneous matrix [[R, 0], [t, 1]]"""
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.shape != (4, 4):
            raise DataValidationError(f"Expected a 4x4 matrix, got {matrix.shape}")
        return cls(matrix[:3, :3], matrix[3, :3])

    def matrix(self) -> np.ndarray:
        out = np.eye(4)
        out[:3, :3] = self.rotation
        out[3, :3] = self.translation
        return out

    def apply(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation + self.translation

    def then(self, other: "RigidMotion") -> "RigidMotion":
        """Motion equal to applying self first, then other"""
        return RigidMotion(self.rotation @ other.rotation, self.translation @ other.rotation + other.translation)

    def inverse(self) -> "RigidMotion":
        rotation_t = self.rotation.T
        return RigidMotion(rotation_t, -self.translation @ rotation_t)

    def is_close(self, other: "RigidMotion", tol: float = 1e-9) -> bool:
        return (np.max(np.abs(self.rotation - other.rotation)) <= tol
                and np.max(np.abs(self.translation - other.translation)) <= tol)


def yaw_rotation(angle: float) -> np.ndarray:
    """Row-convention rotation matrix about z"""
    matrix = Rotation.from_euler("z", float(angle)).as_matrix().T
    # Re-orthonormalize away float noise from the trigonometric construction
    u, _, vt = np.linalg.svd(matrix)
    return u @ vt


def apply_motion(cloud: PointCloud, m: RigidMotion) -> PointCloud:
    """p -> p·R + t for every point; labels preserved"""
    return PointCloud(m.apply(cloud.points), cloud.labels)


def kabsch_fit(source, target) -> RigidMotion:
    """Least-squares rigid motion taking `source` onto corresponded `target`.

    Minimizes sum ||s_i·R + t - t_i||^2. Raises DegenerateCluster when fewer than
    three points are given or the source is collinear/coincident, since the
    rotation is then not identifiable.
    """
    source = as_points(source, "source")
    target = as_points(target, "target")
    n = require_same_length(source, target, names=("source", "target"))
    if n < 3:
        raise DegenerateCluster(f"Kabsch needs at least 3 points, got {n}", size=n)

    source_centroid = source.mean(axis=0)
    target_centroid = target.mean(axis=0)
    centered_source = source - source_centroid
    centered_target = target - target_centroid

    spread = np.linalg.svd(centered_source, compute_uv=False)
    if spread[1] <= DEGENERATE_TOLERANCE * max(spread[0], 1.0):
        raise DegenerateCluster(f"Source points are collinear or coincident (n={n})", size=n)

    covariance = centered_source.T @ centered_target
    u, _, vt = np.linalg.svd(covariance)
    d = np.sign(np.linalg.det(u @ vt))
    if d == 0:
        d = 1.0
    rotation = u @ np.diag([1.0, 1.0, d]) @ vt
    translation = target_centroid - source_centroid @ rotation
    return RigidMotion(rotation, translation)


class KnnIndex:
    """Immutable exact k-nearest-neighbor index over a cloud.

    Results are sorted by ascending Euclidean distance, ties broken by lower
    point index.
    """

    def __init__(self, cloud):
        points = cloud.points if isinstance(cloud, PointCloud) else as_points(cloud, "index points")
        self._points = readonly(np.array(points, dtype=np.float64))
        self._tree = cKDTree(self._points) if len(self._points) else None

    @property
    def points(self) -> np.ndarray:
        return self._points

    @property
    def size(self) -> int:
        return self._points.shape[0]

    def _require_points(self):
        if self._tree is None:
            raise EmptyCloud("Cannot query an index over an empty cloud")

    def _exact_row(self, query: np.ndarray, k: int, exclude: int) -> Tuple[np.ndarray, np.ndarray]:
        """Single-query path: every point tied with the k-th distance is inspected"""
        fetch = min(self.size, k + (1 if exclude >= 0 else 0))
        dist, _ = self._tree.query(query, k=fetch)
        radius = float(np.max(np.atleast_1d(dist)))
        candidates = np.asarray(self._tree.query_ball_point(query, r=radius * (1.0 + 1e-12) + 1e-15), dtype=np.int64)
        if exclude >= 0:
            candidates = candidates[candidates != exclude]
        distances = np.linalg.norm(self._points[candidates] - query, axis=1)
        order = np.lexsort((candidates, distances))[:k]
        return candidates[order], distances[order]

    def query_many(self, queries, k: int, exclude: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray]:
        """Batch kNN; `exclude[i]` (an indexed point id, or -1) is never returned for query i.

        k is clamped to the number of admissible points.
        """
        self._require_points()
        if k < 1:
            raise DataValidationError(f"k must be >= 1, got {k}")
        queries = as_points(queries, "queries")
        m = queries.shape[0]
        pool = self.size - (1 if exclude is not None else 0)
        k_eff = min(k, pool)
        if k_eff < 1:
            raise EmptyNeighborhood("No admissible neighbor once the query point is excluded")
        if m == 0:
            return np.zeros((0, k_eff), dtype=np.int64), np.zeros((0, k_eff))

        fetch = min(self.size, k_eff + (1 if exclude is not None else 0) + TIE_SLACK)
        _, idx = self._tree.query(queries, k=fetch)
        idx = np.asarray(idx, dtype=np.int64).reshape(m, fetch)
        dist = np.linalg.norm(self._points[idx] - queries[:, None, :], axis=2)
        if exclude is not None:
            exclude = np.asarray(exclude, dtype=np.int64).reshape(m)
            dist = np.where(idx == exclude[:, None], np.inf, dist)
        order = np.lexsort((idx, dist), axis=1)
        idx = np.take_along_axis(idx, order, axis=1)
        dist = np.take_along_axis(dist, order, axis=1)

        if fetch < self.size:
            # Rows whose tie group at the k-th distance may extend past the fetched set
            # an excluded point sorts last as inf; compare against the last admissible distance
            boundary = dist[:, k_eff - 1]
            last = np.where(np.isinf(dist[:, -1]), dist[:, -2], dist[:, -1])
            ambiguous = np.nonzero(last <= boundary * (1.0 + 1e-12) + 1e-15)[0]
            for row in ambiguous:
                excluded = int(exclude[row]) if exclude is not None else -1
                idx[row, :k_eff], dist[row, :k_eff] = self._exact_row(queries[row], k_eff, excluded)
        return idx[:, :k_eff], dist[:, :k_eff]

    def query(self, point, k: int, exclude: int = -1) -> Tuple[np.ndarray, np.ndarray]:
        self._require_points()
        if k < 1:
            raise DataValidationError(f"k must be >= 1, got {k}")
        point = as_vector3(point, "query")
        pool = self.size - (1 if exclude >= 0 else 0)
        k_eff = min(k, pool)
        if k_eff < 1:
            raise EmptyNeighborhood("No admissible neighbor once the query point is excluded")
        return self._exact_row(point, k_eff, exclude)


def knn(index: KnnIndex, query, k: int) -> List[Tuple[int, float]]:
    """Exact k nearest neighbors as (point index, distance), nearest first"""
    indices, distances = index.query(query, k)
    return [(int(i), float(d)) for i, d in zip(indices, distances)]


def pairwise_distances(points: np.ndarray) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64)
    return np.linalg.norm(points[:, None, :] - points[None, :, :], axis=2)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniformly distributed row-convention rotation"""
    matrix = Rotation.random(None, rng).as_matrix()
    u, _, vt = np.linalg.svd(matrix)
    out = u @ vt
    if np.linalg.det(out) < 0:
        out = -out
    return out


__all__ = [
    "NO_LABEL", "PointCloud", "FlowField", "RigidMotion", "KnnIndex",
    "kabsch_fit", "apply_motion", "knn", "yaw_rotation", "pairwise_distances",
    "random_rotation",
]
