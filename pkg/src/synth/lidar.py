"""Spherical-grid LiDAR ray caster over analytic entity surfaces"""

from typing import Optional, Sequence, Tuple

import numpy as np

from src.geometry.core import PointCloud, RigidMotion
from src.synth.scene import Entity, LidarSpec
from src.utils.logger_setup import setup_logger

logger = setup_logger(__name__)


def ray_directions(sampler: LidarSpec) -> np.ndarray:
    """Unit ray directions in sensor-local axes, elevation-major"""
    half_fov = np.radians(sampler.azimuth_fov_deg) / 2.0
    if sampler.azimuth_fov_deg >= 360.0:
        azimuth = np.linspace(-np.pi, np.pi, sampler.azimuth_bins, endpoint=False)
    else:
        azimuth = np.linspace(-half_fov, half_fov, sampler.azimuth_bins)
    if sampler.elevation_bins == 1:
        elevation = np.array([np.radians(sampler.elevation_min_deg)])
    else:
        elevation = np.radians(np.linspace(sampler.elevation_min_deg, sampler.elevation_max_deg,
                                           sampler.elevation_bins))
    el, az = np.meshgrid(elevation, azimuth, indexing="ij")
    dirs = np.stack([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)], axis=-1)
    return dirs.reshape(-1, 3)


def cast_rays(entities: Sequence[Entity], origin_world: np.ndarray, dirs_world: np.ndarray,
              frame: int = 0) -> Tuple[np.ndarray, np.ndarray]:
    """Nearest hit distance and entity id per ray (inf / -1 on a miss)"""
    nearest = np.full(dirs_world.shape[0], np.inf)
    hit_ids = np.full(dirs_world.shape[0], -1, dtype=np.int64)
    for entity in entities:
        if not entity.is_present(frame):
            continue
        pose = entity.poses[frame]
        # world -> entity-local: (w - P)·R^T
        origin_local = (origin_world - pose.translation) @ pose.rotation.T
        dirs_local = dirs_world @ pose.rotation.T
        t = entity.shape.intersect(np.broadcast_to(origin_local, dirs_local.shape), dirs_local)
        closer = t < nearest
        nearest[closer] = t[closer]
        hit_ids[closer] = entity.id
    return nearest, hit_ids


def lidar_scan(entities: Sequence[Entity], pose: RigidMotion, sampler: LidarSpec = None,
               frame: int = 0, rng: Optional[np.random.Generator] = None) -> PointCloud:
    """Returns in sensor-local (ego) coordinates, labeled with the hit entity id.

    Rays start at (0, 0, mount_height); range noise is Gaussian along the ray
    and needs `rng` when sigma_r > 0.
    """
    sampler = sampler or LidarSpec()
    dirs_local = ray_directions(sampler)
    origin_local = np.array([0.0, 0.0, sampler.mount_height])
    origin_world = pose.apply(origin_local)
    dirs_world = dirs_local @ pose.rotation

    distance, hit_ids = cast_rays(entities, origin_world, dirs_world, frame)
    hit = np.isfinite(distance) & (distance <= sampler.max_range)
    distance = distance[hit]
    if sampler.range_noise > 0 and distance.size:
        if rng is None:
            rng = np.random.default_rng(0)
        distance = distance + rng.normal(0.0, sampler.range_noise, size=distance.shape)
        distance = np.maximum(distance, 0.0)

    points = origin_local + distance[:, None] * dirs_local[hit]
    logger.debug(f"Scan frame {frame}: {int(hit.sum())} returns of {dirs_local.shape[0]} rays")
    return PointCloud(points, hit_ids[hit])
