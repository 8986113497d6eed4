"""Exact scene-flow annotation from entity and ego motion"""

from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from src.geometry.core import FlowField, PointCloud, RigidMotion
from src.synth.scene import Entity, SensorPath
from src.utils.error_handler import DataValidationError, MissingLabels
from src.utils.logger_setup import setup_logger
from src.utils.validators import NO_LABEL, readonly

logger = setup_logger(__name__)


@dataclass(frozen=True)
class AnnotatedPair:
    """(first, second, ground-truth flow) with flow index-aligned to `first`"""
    first: PointCloud
    second: PointCloud
    flow: FlowField
    ground_ids: Tuple[int, ...] = ()
    # Original first-frame index of every point, filled in by preprocessing
    origin_index: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self):
        self.flow.check_anchor(self.first)
        if self.origin_index is not None:
            index = readonly(np.asarray(self.origin_index, dtype=np.int64).copy())
            if index.shape != (len(self.first),):
                raise DataValidationError("origin_index must have one entry per first-frame point")
            object.__setattr__(self, "origin_index", index)
        object.__setattr__(self, "ground_ids", tuple(int(g) for g in self.ground_ids))

    @property
    def warped(self) -> np.ndarray:
        return self.first.points + self.flow.vectors


def _entity_map(entities: Sequence[Entity]) -> Dict[int, Entity]:
    return {e.id: e for e in entities}


def entity_world_motion(entity: Entity, frame: int) -> Optional[RigidMotion]:
    """World-frame rigid motion of the entity from `frame` to `frame + 1`, None if it is absent"""
    if entity.kind == "ground" or not (entity.is_present(frame) and entity.is_present(frame + 1)):
        return None
    return entity.poses[frame].inverse().then(entity.poses[frame + 1])


def world_flow(points_world: np.ndarray, entity: Entity, frame: int) -> np.ndarray:
    """f = ((p - P_e)·R_e^-1·R'_e + P'_e) - p with (R_e, P_e) at `frame` and (R'_e, P'_e) at `frame + 1`"""
    current, following = entity.poses[frame], entity.poses[frame + 1]
    local = (points_world - current.translation) @ current.rotation.T
    return local @ following.rotation + following.translation - points_world


def annotate_pair(entities: Sequence[Entity], sensor: SensorPath, frame: int,
                  clouds: Tuple[PointCloud, PointCloud]) -> AnnotatedPair:
    """Ground-truth flow from frame-i sensor coordinates to frame-(i+1) sensor coordinates.

    Points on entities present in both frames follow the entity's rigid motion;
    ground, static and vanishing-entity points stay fixed in world, so their flow
    is pure ego-motion.
    """
    first, second = clouds
    if first.labels is None:
        raise MissingLabels("annotate_pair needs entity labels on the first frame")
    if not 0 <= frame < len(sensor) - 1:
        raise DataValidationError(f"Frame {frame} has no successor in a {len(sensor)}-frame sensor path")

    by_id = _entity_map(entities)
    current, following = sensor.poses[frame], sensor.poses[frame + 1]
    points_world = current.apply(first.points)
    flow_world = np.zeros_like(points_world)

    moving = 0
    for entity_id in np.unique(first.labels):
        if entity_id == NO_LABEL:
            continue
        entity = by_id.get(int(entity_id))
        if entity is None:
            raise MissingLabels(f"Label {entity_id} names no entity in the scene")
        if entity_world_motion(entity, frame) is None:
            continue
        members = first.labels == entity_id
        flow_world[members] = world_flow(points_world[members], entity, frame)
        moving += int(members.sum())

    end_local = following.inverse().apply(points_world + flow_world)
    flow = FlowField(end_local - first.points)
    ground_ids = tuple(e.id for e in entities if e.kind == "ground")
    logger.debug(f"Annotated frame {frame}: {moving} entity-motion points, {len(first) - moving} ego-motion points")
    return AnnotatedPair(first, second, flow, ground_ids)


def entity_consistent_positions(entities: Sequence[Entity], sensor: SensorPath, frame: int,
                                first: PointCloud) -> np.ndarray:
    """Frame-(i+1) sensor-local positions implied by each point's entity pose alone"""
    if first.labels is None:
        raise MissingLabels("Entity-consistent positions need labels")
    by_id = _entity_map(entities)
    world = sensor.poses[frame].apply(first.points)
    out = np.array(world)
    for entity_id in np.unique(first.labels):
        entity = by_id.get(int(entity_id))
        if entity is None or entity_world_motion(entity, frame) is None:
            continue
        members = first.labels == entity_id
        local = entity.poses[frame].inverse().apply(world[members])
        out[members] = entity.poses[frame + 1].apply(local)
    return sensor.poses[frame + 1].inverse().apply(out)


def retrieve_ego_motion(first: PointCloud, compensated_flow: FlowField,
                        poses: Tuple[RigidMotion, RigidMotion], dt: float) -> FlowField:
    """Full flow from a speed-form, ego-compensated flow.

    `poses` are (T^s, T^t), world -> sensor at the two capture times:
    F = (P + dt·F0)·(T^s)^-1·T^t - P.
    """
    if dt <= 0:
        raise DataValidationError(f"Capture interval must be positive, got {dt}")
    compensated_flow.check_anchor(first)
    world_to_source, world_to_target = poses
    relative = world_to_source.inverse().then(world_to_target)
    return FlowField(relative.apply(first.points + dt * compensated_flow.vectors) - first.points)


def compensate_ego_motion(first: PointCloud, flow: FlowField,
                          poses: Tuple[RigidMotion, RigidMotion], dt: float) -> FlowField:
    """Inverse of retrieve_ego_motion: F0 = ((P + F)·(T^t)^-1·T^s - P) / dt"""
    if dt <= 0:
        raise DataValidationError(f"Capture interval must be positive, got {dt}")
    flow.check_anchor(first)
    world_to_source, world_to_target = poses
    relative = world_to_target.inverse().then(world_to_source)
    return FlowField((relative.apply(first.points + flow.vectors) - first.points) / dt)


def sensor_poses(sensor: SensorPath, frame: int) -> Tuple[RigidMotion, RigidMotion]:
    """(T^s, T^t) world -> sensor for the pair starting at `frame`"""
    return sensor.world_to_sensor(frame), sensor.world_to_sensor(frame + 1)