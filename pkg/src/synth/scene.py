"""Procedural rigid-body scenes: scene scripts, entities, trajectories and the ego sensor path"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator
from scipy.spatial.transform import Rotation

from src.geometry.core import RigidMotion
from src.utils.error_handler import InvalidScript
from src.utils.logger_setup import setup_logger

logger = setup_logger(__name__)

PRESET_DIR = Path(__file__).parent / "presets"
GROUND_ID = 0


class _Spec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


def _ordered_range(v: Tuple[float, float], name: str) -> Tuple[float, float]:
    if v[0] > v[1]:
        raise ValueError(f"{name}: lower bound {v[0]} exceeds upper bound {v[1]}")
    return v


class GroundSpec(_Spec):
    kind: Literal["flat", "sloped"] = "flat"
    slope: float = Field(default=0.0, ge=-0.5, le=0.5)  # rise per meter along +x
    half_extent: float = Field(default=100.0, gt=0)

    @model_validator(mode="after")
    def check_flat(self):
        if self.kind == "flat" and self.slope != 0.0:
            raise ValueError("flat ground cannot have a slope")
        return self


class PropSpec(_Spec):
    count: int = Field(default=6, ge=0)
    size_range: Tuple[float, float] = (0.5, 2.0)  # box edge length, meters
    height_range: Tuple[float, float] = (0.8, 2.5)
    radius_range: Tuple[float, float] = (6.0, 30.0)  # distance from the ego start

    @field_validator("size_range", "height_range", "radius_range")
    @classmethod
    def validate_range(cls, v, info):
        if v[0] <= 0:
            raise ValueError(f"{info.field_name}: bounds must be positive")
        return _ordered_range(v, info.field_name)


class VehicleSpec(_Spec):
    count: int = Field(default=4, ge=0)
    speed_range: Tuple[float, float] = (0.0, 2.0)  # m/s
    yaw_rate_range: Tuple[float, float] = (-0.2, 0.2)  # rad/s
    length_range: Tuple[float, float] = (3.8, 4.8)
    width_range: Tuple[float, float] = (1.7, 2.0)
    height_range: Tuple[float, float] = (1.4, 1.8)
    radius_range: Tuple[float, float] = (6.0, 25.0)
    segment_frames: int = Field(default=5, ge=1)  # frames per constant-velocity segment
    despawn_probability: float = Field(default=0.0, ge=0.0, le=1.0)

    @field_validator("speed_range", "yaw_rate_range", "length_range", "width_range",
                     "height_range", "radius_range")
    @classmethod
    def validate_range(cls, v, info):
        if info.field_name != "yaw_rate_range" and v[0] < 0:
            raise ValueError(f"{info.field_name}: bounds must be non-negative")
        return _ordered_range(v, info.field_name)


class SensorSpec(_Spec):
    speed: float = Field(default=0.0, ge=0.0)  # m/s along the ego heading
    yaw_rate: float = 0.0  # rad/s
    heading: float = 0.0  # radians


class LidarSpec(_Spec):
    azimuth_bins: int = Field(default=512, ge=1)
    elevation_bins: int = Field(default=64, ge=1)
    elevation_min_deg: float = Field(default=-24.0, ge=-90.0, le=90.0)
    elevation_max_deg: float = Field(default=2.0, ge=-90.0, le=90.0)
    azimuth_fov_deg: float = Field(default=360.0, gt=0.0, le=360.0)
    max_range: float = Field(default=80.0, gt=0.0)
    range_noise: float = Field(default=0.0, ge=0.0)  # sigma_r, meters
    mount_height: float = Field(default=1.8, gt=0.0)

    @model_validator(mode="after")
    def check_elevation(self):
        if self.elevation_min_deg > self.elevation_max_deg:
            raise ValueError("elevation_min_deg exceeds elevation_max_deg")
        return self


class SceneScript(_Spec):
    """Declarative description of a scene and how it is observed"""
    name: str = "custom"
    seed: int = Field(default=0, ge=0)
    frames: int = Field(default=2, ge=2)
    dt: float = Field(default=0.1, gt=0.0)  # seconds between frames
    ground: GroundSpec = Field(default_factory=GroundSpec)
    static_props: PropSpec = Field(default_factory=PropSpec)
    vehicles: VehicleSpec = Field(default_factory=VehicleSpec)
    sensor: SensorSpec = Field(default_factory=SensorSpec)
    lidar: LidarSpec = Field(default_factory=LidarSpec)

    @classmethod
    def parse(cls, data: Dict) -> "SceneScript":
        try:
            return cls(**(data or {}))
        except ValidationError as e:
            raise InvalidScript(f"Invalid scene script: {e}") from e

    @classmethod
    def from_yaml(cls, path: str) -> "SceneScript":
        script_path = Path(path)
        if not script_path.is_file():
            script_path = PRESET_DIR / f"{path}.yaml"
        if not script_path.is_file():
            raise InvalidScript(f"Scene script not found: {path}")
        try:
            data = yaml.safe_load(script_path.read_text())
        except yaml.YAMLError as e:
            raise InvalidScript(f"Malformed scene script {path}: {e}") from e
        if data is not None and not isinstance(data, dict):
            raise InvalidScript(f"Scene script {path} must be a mapping")
        return cls.parse(data)

    @classmethod
    def preset(cls, name: str) -> "SceneScript":
        return cls.from_yaml(str(PRESET_DIR / f"{name}.yaml"))


@dataclass(frozen=True)
class Shape:
    """Analytic surface in entity-local coordinates.

    box: `size` holds half-extents; sphere: `size[0]` is the radius;
    plane: z = 0 square with half-size `size[0]`.
    """
    kind: Literal["box", "sphere", "plane"]
    size: Tuple[float, ...]

    def intersect(self, origins: np.ndarray, directions: np.ndarray, eps: float = 1e-9) -> np.ndarray:
        """Distance along unit rays to the first hit, inf where missed"""
        if self.kind == "sphere":
            radius = self.size[0]
            b = np.einsum("ij,ij->i", origins, directions)
            c = np.einsum("ij,ij->i", origins, origins) - radius * radius
            disc = b * b - c
            root = np.sqrt(np.maximum(disc, 0.0))
            near = -b - root
            far = -b + root
            t = np.where(near > eps, near, np.where(far > eps, far, np.inf))
            return np.where(disc >= 0.0, t, np.inf)

        if self.kind == "plane":
            half = self.size[0]
            with np.errstate(divide="ignore", invalid="ignore"):
                t = -origins[:, 2] / directions[:, 2]
            hit_xy = origins[:, :2] + t[:, None] * directions[:, :2]
            ok = (np.abs(directions[:, 2]) > 1e-12) & (t > eps) & np.all(np.abs(hit_xy) <= half, axis=1)
            return np.where(ok, t, np.inf)

        half = np.asarray(self.size, dtype=np.float64)
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / directions
            t1 = (-half - origins) * inv
            t2 = (half - origins) * inv
        parallel = directions == 0.0
        inside_slab = np.abs(origins) <= half
        lo = np.where(parallel, np.where(inside_slab, -np.inf, np.inf), np.minimum(t1, t2))
        hi = np.where(parallel, np.where(inside_slab, np.inf, -np.inf), np.maximum(t1, t2))
        t_near = lo.max(axis=1)
        t_far = hi.min(axis=1)
        ok = (t_far >= t_near) & (t_near > eps)
        return np.where(ok, t_near, np.inf)

    def surface_distance(self, points: np.ndarray) -> np.ndarray:
        """Unsigned distance from entity-local points to the surface"""
        points = np.asarray(points, dtype=np.float64)
        if self.kind == "sphere":
            return np.abs(np.linalg.norm(points, axis=1) - self.size[0])
        if self.kind == "plane":
            return np.abs(points[:, 2])
        q = np.abs(points) - np.asarray(self.size)
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
        inside = np.minimum(q.max(axis=1), 0.0)
        return np.abs(outside + inside)


@dataclass(frozen=True)
class Entity:
    """Rigid body with a per-frame pose mapping entity-local to world coordinates"""
    id: int
    kind: Literal["vehicle", "static-prop", "ground"]
    shape: Shape
    poses: Tuple[RigidMotion, ...]
    present: Tuple[bool, ...] = ()

    def __post_init__(self):
        if self.id < 0:
            raise InvalidScript(f"Entity id must be non-negative, got {self.id}")
        if not self.present:
            object.__setattr__(self, "present", tuple(True for _ in self.poses))
        if len(self.present) != len(self.poses):
            raise InvalidScript(f"Entity {self.id}: presence flags do not match pose count")
        if (self.kind == "ground") != (self.shape.kind == "plane"):
            raise InvalidScript(f"Entity {self.id}: ground entities are exactly the plane-shaped ones")

    def is_present(self, frame: int) -> bool:
        return 0 <= frame < len(self.poses) and self.present[frame]

    @classmethod
    def static(cls, entity_id: int, kind: str, shape: Shape, pose: RigidMotion, frames: int) -> "Entity":
        return cls(entity_id, kind, shape, tuple(pose for _ in range(frames)))


@dataclass(frozen=True)
class SensorPath:
    """Per-frame ego pose (ego-local -> world) and capture interval.

    The ego frame has its origin on the ground below the LiDAR with z up; the
    LiDAR itself sits at (0, 0, mount_height).
    """
    poses: Tuple[RigidMotion, ...]
    dt: float
    mount_height: float = 1.8

    def __post_init__(self):
        if self.dt <= 0:
            raise InvalidScript(f"Capture interval must be positive, got {self.dt}")

    def __len__(self) -> int:
        return len(self.poses)

    def world_to_sensor(self, frame: int) -> RigidMotion:
        return self.poses[frame].inverse()

    @classmethod
    def static(cls, frames: int, dt: float = 0.1, mount_height: float = 1.8,
               pose: Optional[RigidMotion] = None) -> "SensorPath":
        pose = pose or RigidMotion.identity()
        return cls(tuple(pose for _ in range(frames)), dt, mount_height)


@dataclass(frozen=True)
class Scene:
    entities: Tuple[Entity, ...]
    sensor: SensorPath
    script: Optional[SceneScript] = field(default=None, compare=False)

    @property
    def ground_ids(self) -> Tuple[int, ...]:
        return tuple(e.id for e in self.entities if e.kind == "ground")


def pitch_rotation(angle: float) -> np.ndarray:
    """Row-convention rotation taking the local +x axis up by `angle`"""
    matrix = Rotation.from_euler("y", -float(angle)).as_matrix().T
    u, _, vt = np.linalg.svd(matrix)
    return u @ vt


def ground_height(spec: GroundSpec, x) -> np.ndarray:
    return spec.slope * np.asarray(x, dtype=np.float64)


def _uniform(rng: np.random.Generator, bounds: Tuple[float, float]) -> float:
    return float(rng.uniform(bounds[0], bounds[1])) if bounds[1] > bounds[0] else float(bounds[0])


def _ring_position(rng: np.random.Generator, radius_range: Tuple[float, float]) -> np.ndarray:
    radius = _uniform(rng, radius_range)
    angle = float(rng.uniform(-np.pi, np.pi))
    return np.array([radius * np.cos(angle), radius * np.sin(angle)])


def _integrate_path(start: np.ndarray, heading: float, speeds: List[float], yaw_rate: float,
                    dt: float, frames: int) -> Tuple[np.ndarray, np.ndarray]:
    """Planar positions and headings under piecewise-constant speed and constant yaw rate"""
    positions = np.zeros((frames, 2))
    headings = np.zeros(frames)
    positions[0] = start
    headings[0] = heading
    for f in range(1, frames):
        direction = np.array([np.cos(headings[f - 1]), np.sin(headings[f - 1])])
        positions[f] = positions[f - 1] + speeds[f - 1] * dt * direction
        headings[f] = headings[f - 1] + yaw_rate * dt
    return positions, headings


def build_scene(script: SceneScript, seed: Optional[int] = None) -> Scene:
    """Deterministic scene: ground, static props, moving vehicles and the ego path"""
    if not isinstance(script, SceneScript):
        raise InvalidScript(f"Expected a SceneScript, got {type(script).__name__}")
    rng = np.random.default_rng(script.seed if seed is None else seed)
    frames, dt = script.frames, script.dt

    slope_angle = float(np.arctan(script.ground.slope))
    ground = Entity.static(
        GROUND_ID, "ground", Shape("plane", (script.ground.half_extent,)),
        RigidMotion(pitch_rotation(slope_angle), np.zeros(3)), frames,
    )
    entities: List[Entity] = [ground]
    next_id = GROUND_ID + 1

    props = script.static_props
    for _ in range(props.count):
        xy = _ring_position(rng, props.radius_range)
        width, depth = _uniform(rng, props.size_range), _uniform(rng, props.size_range)
        height = _uniform(rng, props.height_range)
        yaw = float(rng.uniform(-np.pi, np.pi))
        center = np.array([xy[0], xy[1], float(ground_height(script.ground, xy[0])) + height / 2])
        shape = Shape("box", (width / 2, depth / 2, height / 2))
        entities.append(Entity.static(next_id, "static-prop", shape, RigidMotion.from_yaw(yaw, center), frames))
        next_id += 1

    vehicles = script.vehicles
    for _ in range(vehicles.count):
        start = _ring_position(rng, vehicles.radius_range)
        heading = float(rng.uniform(-np.pi, np.pi))
        yaw_rate = _uniform(rng, vehicles.yaw_rate_range)
        length = _uniform(rng, vehicles.length_range)
        width = _uniform(rng, vehicles.width_range)
        height = _uniform(rng, vehicles.height_range)
        segment_speeds = [_uniform(rng, vehicles.speed_range)
                          for _ in range((frames + vehicles.segment_frames - 1) // vehicles.segment_frames)]
        speeds = [segment_speeds[f // vehicles.segment_frames] for f in range(frames)]
        despawn = frames
        if vehicles.despawn_probability > 0 and rng.uniform() < vehicles.despawn_probability:
            despawn = int(rng.integers(1, frames))

        positions, headings = _integrate_path(start, heading, speeds, yaw_rate, dt, frames)
        poses = tuple(
            RigidMotion.from_yaw(
                headings[f],
                (positions[f, 0], positions[f, 1], float(ground_height(script.ground, positions[f, 0])) + height / 2),
            )
            for f in range(frames)
        )
        shape = Shape("box", (length / 2, width / 2, height / 2))
        present = tuple(f < despawn for f in range(frames))
        entities.append(Entity(next_id, "vehicle", shape, poses, present))
        next_id += 1

    ego = script.sensor
    ego_positions, ego_headings = _integrate_path(np.zeros(2), ego.heading, [ego.speed] * frames,
                                                  ego.yaw_rate, dt, frames)
    sensor_poses = tuple(
        RigidMotion.from_yaw(
            ego_headings[f],
            (ego_positions[f, 0], ego_positions[f, 1], float(ground_height(script.ground, ego_positions[f, 0]))),
        )
        for f in range(frames)
    )
    sensor = SensorPath(sensor_poses, dt, script.lidar.mount_height)

    logger.debug(f"Built scene '{script.name}': {props.count} props, {vehicles.count} vehicles, {frames} frames")
    return Scene(tuple(entities), sensor, script)
