"""Tests for synthetic scene generation, annotation, preprocessing and storage"""

import numpy as np
import pytest

from src.geometry.clustering import dbscan
from src.geometry.core import FlowField, KnnIndex, PointCloud, RigidMotion
from src.models.checkpoint import load_checkpoint, save_checkpoint
from src.models.estimator import EstimatorParams
from src.synth.annotate import (AnnotatedPair, annotate_pair, compensate_ego_motion, entity_consistent_positions,
                                retrieve_ego_motion, sensor_poses)
from src.synth.generator import derive_seed, generate_pairs, scan_scene, scene_pairs
from src.synth.lidar import lidar_scan, ray_directions
from src.synth.preprocess import preprocess, remove_ground
from src.synth.scene import GROUND_ID, Entity, LidarSpec, SceneScript, SensorPath, Shape, build_scene
from src.training.mean_teacher import epc_loss_targets
from src.utils.config import CrConfig, DbscanConfig, PreprocessConfig
from src.utils.container import MAGIC, read_frames, write_frames, write_ply
from src.utils.dataset_store import DatasetStore
from src.utils.error_handler import ContainerFormatError, DataValidationError, InvalidScript, MissingLabels
from src.utils.validators import NO_LABEL

SMALL_LIDAR = {"azimuth_bins": 360, "elevation_bins": 32, "range_noise": 0.0}


def small_script(preset="source", **changes):
    """A preset with a coarse LiDAR so scans stay fast"""
    data = SceneScript.preset(preset).model_dump()
    data["lidar"] = {**data["lidar"], **SMALL_LIDAR}
    data.update(changes)
    return SceneScript.parse(data)


def moving_script():
    """Six-frame scenes seen from a moving, turning sensor, with vehicles that may vanish mid-scene"""
    source = SceneScript.preset("source")
    return small_script(
        frames=6,
        sensor={"speed": 1.5, "yaw_rate": 0.4, "heading": 0.2},
        vehicles={**source.vehicles.model_dump(), "despawn_probability": 0.6},
    )


def flat_ground(frames=2):
    return Entity.static(GROUND_ID, "ground", Shape("plane", (100.0,)), RigidMotion.identity(), frames)


def single_ray_lidar(**changes):
    values = {"azimuth_bins": 4, "elevation_bins": 1, "elevation_min_deg": 0.0, "elevation_max_deg": 0.0}
    values.update(changes)
    return LidarSpec(**values)


class TestSceneScript:
    """Test scene script parsing and presets"""

    def test_presets_load(self):
        """Test that every shipped preset parses"""
        for name in ("source", "target", "sloped"):
            assert SceneScript.preset(name).name == name

    def test_preset_by_name(self):
        """Test from_yaml falls back to the preset directory"""
        assert SceneScript.from_yaml("target") == SceneScript.preset("target")

    def test_unknown_key_rejected(self):
        """Test typos in scripts fail loudly"""
        with pytest.raises(InvalidScript):
            SceneScript.parse({"vehicles": {"cout": 3}})

    def test_single_frame_rejected(self):
        """Test a scene needs at least two frames"""
        with pytest.raises(InvalidScript):
            SceneScript.parse({"frames": 1})

    def test_slope_on_flat_ground_rejected(self):
        """Test flat ground cannot carry a slope"""
        with pytest.raises(InvalidScript):
            SceneScript.parse({"ground": {"kind": "flat", "slope": 0.1}})

    def test_missing_script(self):
        """Test a missing script file"""
        with pytest.raises(InvalidScript):
            SceneScript.from_yaml("/nonexistent/scene.yaml")

    def test_ground_entities_are_planes(self):
        """Test a ground entity must have a plane shape"""
        with pytest.raises(InvalidScript):
            Entity.static(1, "ground", Shape("box", (1.0, 1.0, 1.0)), RigidMotion.identity(), 2)


class TestSceneBuilder:
    """Test deterministic scene construction"""

    def test_same_seed_same_scene(self):
        """Test building twice with one seed gives identical poses"""
        script = SceneScript.preset("source")
        a, b = build_scene(script, 5), build_scene(script, 5)
        for ea, eb in zip(a.entities, b.entities):
            assert ea.id == eb.id
            for pa, pb in zip(ea.poses, eb.poses):
                np.testing.assert_array_equal(pa.matrix(), pb.matrix())

    def test_entity_counts(self):
        """Test one ground plane plus the scripted props and vehicles"""
        scene = build_scene(SceneScript.preset("source"))
        kinds = [e.kind for e in scene.entities]
        assert kinds.count("ground") == 1
        assert kinds.count("static-prop") == 8
        assert kinds.count("vehicle") == 5
        assert scene.ground_ids == (GROUND_ID,)

    def test_sensor_moves_forward(self):
        """Test the ego path advances speed * dt per frame along its heading"""
        scene = build_scene(SceneScript.preset("source"))
        step = scene.sensor.poses[1].translation - scene.sensor.poses[0].translation
        np.testing.assert_allclose(step, [0.1, 0.0, 0.0], atol=1e-12)


class TestLidar:
    """Test the analytic ray caster"""

    def test_ray_grid_size(self):
        """Test the ray count is azimuth x elevation bins and rays are unit length"""
        dirs = ray_directions(LidarSpec(azimuth_bins=32, elevation_bins=8))
        assert dirs.shape == (256, 3)
        np.testing.assert_allclose(np.linalg.norm(dirs, axis=1), 1.0, atol=1e-12)

    def test_sphere_distance(self):
        """Test a sphere whose surface is 10 m ahead returns a point at 10 m"""
        sampler = single_ray_lidar()
        sphere = Entity.static(7, "static-prop", Shape("sphere", (1.0,)),
                               RigidMotion(np.eye(3), (11.0, 0.0, sampler.mount_height)), 2)
        cloud = lidar_scan([sphere], RigidMotion.identity(), sampler)
        assert len(cloud) == 1
        np.testing.assert_allclose(cloud.points[0], [10.0, 0.0, sampler.mount_height], atol=1e-9)
        assert cloud.labels.tolist() == [7]

    def test_empty_scene(self):
        """Test nothing to hit gives an empty cloud"""
        cloud = lidar_scan([], RigidMotion.identity(), single_ray_lidar())
        assert len(cloud) == 0

    def test_occlusion(self):
        """Test the nearer of two aligned objects is returned"""
        sampler = single_ray_lidar()
        near = Entity.static(1, "static-prop", Shape("sphere", (1.0,)),
                             RigidMotion(np.eye(3), (11.0, 0.0, sampler.mount_height)), 2)
        far = Entity.static(2, "static-prop", Shape("box", (1.0, 1.0, 1.0)),
                            RigidMotion(np.eye(3), (21.0, 0.0, sampler.mount_height)), 2)
        cloud = lidar_scan([far, near], RigidMotion.identity(), sampler)
        assert cloud.labels.tolist() == [1]

    def test_max_range(self):
        """Test hits beyond max_range are dropped"""
        sampler = single_ray_lidar(max_range=50.0)
        sphere = Entity.static(1, "static-prop", Shape("sphere", (1.0,)),
                               RigidMotion(np.eye(3), (61.0, 0.0, sampler.mount_height)), 2)
        assert len(lidar_scan([sphere], RigidMotion.identity(), sampler)) == 0

    def test_flat_ground_at_zero_height(self):
        """Test ground returns sit at z = 0 in the ego frame"""
        cloud = lidar_scan([flat_ground()], RigidMotion.identity(), LidarSpec(azimuth_bins=64, elevation_bins=8))
        assert len(cloud) > 0
        np.testing.assert_allclose(cloud.points[:, 2], 0.0, atol=1e-9)

    def test_range_noise_is_seeded(self):
        """Test noisy scans repeat under the same generator seed"""
        sampler = LidarSpec(azimuth_bins=64, elevation_bins=8, range_noise=0.05)
        a = lidar_scan([flat_ground()], RigidMotion.identity(), sampler, rng=np.random.default_rng(3))
        b = lidar_scan([flat_ground()], RigidMotion.identity(), sampler, rng=np.random.default_rng(3))
        np.testing.assert_array_equal(a.points, b.points)


class TestAnnotation:
    """Test exact ground-truth flow"""

    @staticmethod
    def _moving_box_scene(speed=1.5, dt=0.1):
        box = Shape("box", (2.0, 1.0, 0.75))
        poses = (RigidMotion(np.eye(3), (10.0, 0.0, 0.75)), RigidMotion(np.eye(3), (10.0 + speed * dt, 0.0, 0.75)))
        vehicle = Entity(3, "vehicle", box, poses)
        return [flat_ground(), vehicle], SensorPath.static(2, dt)

    def test_static_world_static_sensor(self):
        """Test zero vehicles and a static sensor give zero flow"""
        script = small_script(vehicles={"count": 0}, sensor={"speed": 0.0})
        scene = build_scene(script)
        pair = scene_pairs(scene, 1, raw=True)[0]
        np.testing.assert_allclose(pair.flow.vectors, 0.0, atol=1e-9)

    def test_constant_velocity_vehicle(self):
        """Test vehicle points move by v * dt and ground points stay"""
        entities, sensor = self._moving_box_scene()
        sampler = LidarSpec(azimuth_bins=720, elevation_bins=32)
        first = lidar_scan(entities, sensor.poses[0], sampler, 0)
        second = lidar_scan(entities, sensor.poses[1], sampler, 1)
        pair = annotate_pair(entities, sensor, 0, (first, second))
        on_vehicle = first.labels == 3
        assert on_vehicle.any()
        np.testing.assert_allclose(pair.flow.vectors[on_vehicle], np.tile([0.15, 0.0, 0.0], (on_vehicle.sum(), 1)),
                                   atol=1e-9)
        np.testing.assert_allclose(pair.flow.vectors[~on_vehicle], 0.0, atol=1e-9)

    def test_pure_ego_translation(self):
        """Test a static world seen from a sensor moving by d has flow -d everywhere"""
        d = np.array([0.4, -0.2, 0.0])
        sensor = SensorPath((RigidMotion.identity(), RigidMotion(np.eye(3), d)), 0.1)
        prop = Entity.static(1, "static-prop", Shape("box", (1.0, 1.0, 1.0)), RigidMotion(np.eye(3), (8.0, 3.0, 1.0)), 2)
        entities = [flat_ground(), prop]
        sampler = LidarSpec(azimuth_bins=90, elevation_bins=16)
        first = lidar_scan(entities, sensor.poses[0], sampler, 0)
        second = lidar_scan(entities, sensor.poses[1], sampler, 1)
        pair = annotate_pair(entities, sensor, 0, (first, second))
        np.testing.assert_allclose(pair.flow.vectors, np.tile(-d, (len(first), 1)), atol=1e-9)

    def test_end_points_lie_on_moved_surfaces(self):
        """Test p + flow lands on the next surface, or stays world-fixed once the entity vanishes, over 50 pairs"""
        script = moving_script()
        pairs_seen, vanished = 0, 0
        for s in range(10):
            scene = build_scene(script, derive_seed(21, s))
            for frame, pair in enumerate(scene_pairs(scene, derive_seed(22, s), raw=True)):
                pairs_seen += 1
                start_world = scene.sensor.poses[frame].apply(pair.first.points)
                end_world = scene.sensor.poses[frame + 1].apply(pair.warped)
                covered = 0
                for entity in scene.entities:
                    members = pair.first.labels == entity.id
                    if not members.any():
                        continue
                    assert entity.is_present(frame)
                    if entity.is_present(frame + 1):
                        local = entity.poses[frame + 1].inverse().apply(end_world[members])
                        assert np.max(entity.shape.surface_distance(local)) < 1e-6
                    else:
                        np.testing.assert_allclose(end_world[members], start_world[members], atol=1e-9)
                        vanished += int(members.sum())
                    covered += int(members.sum())
                assert covered == len(pair.first)

                oracle = entity_consistent_positions(scene.entities, scene.sensor, frame, pair.first)
                np.testing.assert_allclose(pair.warped, oracle, atol=1e-6)
        assert pairs_seen == 50
        assert vanished > 0

    def test_vanishing_entity_stays_world_fixed(self):
        """Test points of an entity absent in the next frame get pure ego-motion flow"""
        box = Shape("box", (2.0, 1.0, 0.75))
        poses = (RigidMotion(np.eye(3), (10.0, 0.0, 0.75)), RigidMotion(np.eye(3), (12.0, 0.0, 0.75)))
        vehicle = Entity(4, "vehicle", box, poses, (True, False))
        sensor = SensorPath.static(2)
        first = lidar_scan([vehicle], sensor.poses[0], LidarSpec(azimuth_bins=360, elevation_bins=16), 0)
        pair = annotate_pair([vehicle], sensor, 0, (first, PointCloud.empty()))
        np.testing.assert_allclose(pair.flow.vectors, 0.0, atol=1e-12)

    def test_missing_labels(self):
        """Test annotation refuses unlabeled or unknown-labeled clouds"""
        entities, sensor = self._moving_box_scene()
        with pytest.raises(MissingLabels):
            annotate_pair(entities, sensor, 0, (PointCloud(np.zeros((2, 3))), PointCloud(np.zeros((2, 3)))))
        with pytest.raises(MissingLabels):
            annotate_pair(entities, sensor, 0, (PointCloud(np.zeros((1, 3)), np.array([99])), PointCloud.empty()))

    def test_unlabeled_returns_are_world_fixed(self):
        """Test NO_LABEL points get ego-motion flow"""
        entities, sensor = self._moving_box_scene()
        cloud = PointCloud(np.array([[1.0, 2.0, 0.0]]), np.array([NO_LABEL]))
        pair = annotate_pair(entities, sensor, 0, (cloud, cloud))
        np.testing.assert_allclose(pair.flow.vectors, 0.0, atol=1e-12)


class TestEgoMotion:
    """Test ego-motion retrieval and compensation"""

    @staticmethod
    def _poses():
        pose0 = RigidMotion.from_yaw(0.1, (1.0, 2.0, 0.0))
        pose1 = RigidMotion.from_yaw(0.25, (1.3, 2.1, 0.0))
        sensor = SensorPath((pose0, pose1), 0.1)
        return sensor, sensor_poses(sensor, 0)

    def test_round_trip(self):
        """Test compensate then retrieve recovers generated flow, and world-fixed points compensate to zero"""
        script = moving_script()
        generated = generate_pairs(script, 50, seed=41, cfg=PreprocessConfig(num_points=512, ground_strategy="none"))
        assert len(generated) == 50
        scenes = {}
        for g in generated:
            scene = scenes.setdefault(g.scene_seed, build_scene(script, g.scene_seed))
            poses = sensor_poses(scene.sensor, g.frame)
            first, flow = g.pair.first, g.pair.flow
            speed_form = compensate_ego_motion(first, flow, poses, scene.sensor.dt)
            np.testing.assert_allclose(retrieve_ego_motion(first, speed_form, poses, scene.sensor.dt).vectors,
                                       flow.vectors, atol=1e-9)

            fixed_ids = [e.id for e in scene.entities
                         if e.kind in ("ground", "static-prop") or not e.is_present(g.frame + 1)]
            fixed = np.isin(first.labels, fixed_ids)
            assert fixed.any()
            np.testing.assert_allclose(speed_form.vectors[fixed], 0.0, atol=1e-8)
            assert np.abs(flow.vectors[fixed]).max() > 0.0

    def test_static_world_matches_annotation(self):
        """Test zero compensated flow retrieves the annotated ego-motion flow"""
        sensor, poses = self._poses()
        prop = Entity.static(1, "static-prop", Shape("box", (1.5, 1.5, 1.0)),
                             RigidMotion(np.eye(3), (9.0, 4.0, 1.0)), 2)
        entities = [flat_ground(), prop]
        sampler = LidarSpec(azimuth_bins=120, elevation_bins=16)
        first = lidar_scan(entities, sensor.poses[0], sampler, 0)
        pair = annotate_pair(entities, sensor, 0, (first, lidar_scan(entities, sensor.poses[1], sampler, 1)))
        retrieved = retrieve_ego_motion(first, FlowField.zeros(len(first)), poses, sensor.dt)
        np.testing.assert_allclose(retrieved.vectors, pair.flow.vectors, atol=1e-9)

    def test_non_positive_interval(self):
        """Test dt <= 0 is refused"""
        _, poses = self._poses()
        first = PointCloud(np.zeros((1, 3)))
        with pytest.raises(DataValidationError):
            retrieve_ego_motion(first, FlowField.zeros(1), poses, 0.0)
        with pytest.raises(DataValidationError):
            compensate_ego_motion(first, FlowField.zeros(1), poses, -0.1)


class TestPseudoLabelTargets:
    """Test refined pseudo-labels built from exact generated flow"""

    def test_ground_truth_flow_gives_accurate_labels(self):
        """Test DR + CR on ground-truth flow stays within 0.02 m mean of the true end points"""
        script = SceneScript.preset("source")
        cfg = PreprocessConfig(ground_strategy="entity", max_range=30.0, num_points=200000)
        errors = []
        for g in generate_pairs(script, 3, seed=17, cfg=cfg):
            pair = g.pair
            clusters = dbscan(pair.first, DbscanConfig())
            labels = epc_loss_targets(pair.first, pair.flow, clusters, pair.second, CrConfig())
            assert len(labels) == len(pair.first)
            errors.append(np.linalg.norm(labels.points - pair.warped, axis=1))
        assert float(np.mean(np.concatenate(errors))) <= 0.02


class TestGroundRemoval:
    """Test ground removal strategies"""

    def test_flat_ground(self):
        """Test height and entity strategies both drop all flat ground returns"""
        scene = build_scene(small_script())
        cloud = scan_scene(scene, 0)[0]
        assert np.any(cloud.labels == GROUND_ID)
        by_height, _ = remove_ground(cloud, "height", 0.3)
        by_entity, _ = remove_ground(cloud, "entity", ground_ids=scene.ground_ids)
        assert not np.any(by_height.labels == GROUND_ID)
        assert not np.any(by_entity.labels == GROUND_ID)
        assert len(by_entity) == int(np.sum(cloud.labels != GROUND_ID))

    def test_sloped_ground_leaks_through_height(self):
        """Test rising ground survives the height threshold but not entity removal"""
        scene = build_scene(small_script("sloped"))
        cloud = scan_scene(scene, 0)[0]
        by_height, _ = remove_ground(cloud, "height", 0.3)
        by_entity, _ = remove_ground(cloud, "entity", ground_ids=scene.ground_ids)
        assert np.any(by_height.labels == GROUND_ID)
        assert not np.any(by_entity.labels == GROUND_ID)

    def test_none_keeps_everything(self):
        """Test the none strategy is the identity"""
        cloud = PointCloud(np.random.default_rng(41).normal(size=(10, 3)))
        kept, index = remove_ground(cloud, "none")
        np.testing.assert_array_equal(kept.points, cloud.points)
        np.testing.assert_array_equal(index, np.arange(10))

    def test_entity_needs_labels(self):
        """Test entity removal on an unlabeled cloud"""
        with pytest.raises(MissingLabels):
            remove_ground(PointCloud(np.zeros((3, 3))), "entity", ground_ids=(0,))


class TestPreprocess:
    """Test cropping and subsampling of annotated pairs"""

    @staticmethod
    def _raw_pair():
        return scene_pairs(build_scene(small_script()), 3, raw=True)[0]

    def test_flow_stays_aligned(self):
        """Test the kept flow vectors are the original ones at origin_index"""
        raw = self._raw_pair()
        pair = preprocess(raw, PreprocessConfig(num_points=300), seed=4)
        assert len(pair.first) == 300
        np.testing.assert_array_equal(pair.flow.vectors, raw.flow.vectors[pair.origin_index])
        np.testing.assert_array_equal(pair.first.points, raw.first.points[pair.origin_index])
        assert np.all(np.diff(pair.origin_index) > 0)

    def test_num_points_larger_than_cloud(self):
        """Test num_points above the available count keeps every surviving point"""
        raw = self._raw_pair()
        pair = preprocess(raw, PreprocessConfig(num_points=10 ** 6, ground_strategy="none"), seed=4)
        assert len(pair.first) == int(np.sum(np.linalg.norm(raw.first.points, axis=1) <= 60.0))

    def test_seeded(self):
        """Test the same seed gives the same subsample"""
        raw = self._raw_pair()
        cfg = PreprocessConfig(num_points=200)
        a, b = preprocess(raw, cfg, seed=9), preprocess(raw, cfg, seed=9)
        np.testing.assert_array_equal(a.origin_index, b.origin_index)

    def test_front_view_and_range(self):
        """Test cropping keeps only forward points within range"""
        pair = preprocess(self._raw_pair(), PreprocessConfig(front_view_only=True, max_range=20.0), seed=1)
        assert np.all(pair.first.points[:, 0] > 0)
        assert np.all(np.linalg.norm(pair.second.points, axis=1) <= 20.0)


class TestGenerator:
    """Test pair generation"""

    def test_derive_seed(self):
        """Test derived seeds are stable and distinct"""
        assert derive_seed(1, 2) == derive_seed(1, 2)
        assert derive_seed(1, 2) != derive_seed(2, 1)

    def test_generation_is_reproducible(self):
        """Test identical inputs give bit-identical pairs, whatever the worker count"""
        script = small_script()
        cfg = PreprocessConfig(num_points=256)
        a = generate_pairs(script, 3, seed=7, cfg=cfg)
        b = generate_pairs(script, 3, seed=7, cfg=cfg, workers=2)
        assert len(a) == len(b) == 3
        for ga, gb in zip(a, b):
            assert ga.scene_seed == gb.scene_seed
            np.testing.assert_array_equal(ga.pair.first.points, gb.pair.first.points)
            np.testing.assert_array_equal(ga.pair.flow.vectors, gb.pair.flow.vectors)

    def test_different_seeds_differ(self):
        """Test the run seed changes the scenes"""
        script = small_script()
        a = generate_pairs(script, 1, seed=1)[0].pair
        b = generate_pairs(script, 1, seed=2)[0].pair
        assert a.first.points.shape != b.first.points.shape or not np.array_equal(a.first.points, b.first.points)

    def test_target_preset_is_sparser(self):
        """Test target scans are at least twice as sparse as source scans"""
        def mean_spacing(preset):
            scene = build_scene(SceneScript.preset(preset))
            cloud = scan_scene(scene, 0)[0]
            _, dist = KnnIndex(cloud).query_many(cloud.points, 1, exclude=np.arange(len(cloud)))
            return float(dist.mean())

        assert mean_spacing("target") >= 2.0 * mean_spacing("source")


class TestContainer:
    """Test the binary pair container, checkpoints and PLY export"""

    def test_round_trip_keeps_float32_values(self, tmp_path):
        """Test coordinates come back as their float32 values and labels survive"""
        rng = np.random.default_rng(42)
        first = PointCloud(rng.normal(size=(20, 3)), np.array([0, 1, NO_LABEL, 3] * 5))
        second = PointCloud(rng.normal(size=(15, 3)))
        flow = FlowField(rng.normal(size=(20, 3)))
        path = write_frames(tmp_path / "pair.gsf", first, second, flow)
        assert path.read_bytes()[:4] == MAGIC

        a, b, f = read_frames(path)
        np.testing.assert_array_equal(a.points, first.points.astype(np.float32).astype(np.float64))
        np.testing.assert_array_equal(b.points, second.points.astype(np.float32).astype(np.float64))
        np.testing.assert_array_equal(f.vectors, flow.vectors.astype(np.float32).astype(np.float64))
        np.testing.assert_array_equal(a.labels, first.labels)

    def test_first_frame_only(self, tmp_path):
        """Test optional sections are optional"""
        path = write_frames(tmp_path / "one.gsf", PointCloud(np.ones((2, 3))))
        first, second, flow = read_frames(path)
        assert len(first) == 2 and second is None and flow is None and first.labels is None

    def test_bad_magic(self, tmp_path):
        """Test a foreign file is rejected"""
        path = tmp_path / "bad.gsf"
        path.write_bytes(b"NOPE" + bytes(10))
        with pytest.raises(ContainerFormatError):
            read_frames(path)

    def test_truncated(self, tmp_path):
        """Test a cut-off container is rejected"""
        path = write_frames(tmp_path / "pair.gsf", PointCloud(np.ones((10, 3))))
        path.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(ContainerFormatError):
            read_frames(path)

    def test_checkpoint_round_trip(self, tmp_path):
        """Test float64 parameters survive a checkpoint exactly"""
        rng = np.random.default_rng(43)
        params = EstimatorParams(rng.normal(size=(3, 6)), -0.3, 12)
        loaded = load_checkpoint(save_checkpoint(tmp_path / "model.gsfc", params))
        assert loaded.equals(params)

    def test_checkpoint_missing(self, tmp_path):
        """Test a missing checkpoint"""
        with pytest.raises(ContainerFormatError):
            load_checkpoint(tmp_path / "absent.gsfc")

    def test_ply(self, tmp_path):
        """Test the PLY header and vertex rows"""
        path = write_ply(tmp_path / "cloud.ply", np.eye(3), np.array([1, 2, 3]))
        lines = path.read_text().splitlines()
        assert lines[0] == "ply"
        assert "element vertex 3" in lines
        assert "property int label" in lines
        assert lines[-1] == "0.000000 0.000000 1.000000 3"


class TestDatasetStore:
    """Test dataset directories"""

    def test_write_and_load(self, tmp_path):
        """Test pairs and ground ids come back from disk"""
        rng = np.random.default_rng(44)
        first = PointCloud(rng.normal(size=(8, 3)), np.arange(8))
        pair = AnnotatedPair(first, PointCloud(rng.normal(size=(6, 3))), FlowField(rng.normal(size=(8, 3))), (0,))
        store = DatasetStore(str(tmp_path / "data"))
        store.write([pair, pair], {"preset": "unit"})

        reloaded = DatasetStore(str(tmp_path / "data"))
        assert len(reloaded) == 2
        assert reloaded.manifest["preset"] == "unit"
        loaded = reloaded.load(1)
        assert loaded.ground_ids == (0,)
        np.testing.assert_array_equal(loaded.first.labels, first.labels)

    def test_missing_manifest(self, tmp_path):
        """Test a directory without a manifest"""
        with pytest.raises(DataValidationError):
            len(DatasetStore(str(tmp_path)))
