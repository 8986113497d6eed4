"""Integration tests for the command-line pipeline and the desk-scale experiments"""

import json
from pathlib import Path

import numpy as np
import pytest

from src.evaluation.reporter import ExperimentReporter
from src.geometry.clustering import dbscan
from src.geometry.core import FlowField, PointCloud
from src.main import main
from src.synth.annotate import AnnotatedPair
from src.synth.generator import generate_pairs
from src.synth.scene import SceneScript
from src.training.experiments import (AblationRunner, DomainData, build_domains, ground_removal_ablation,
                                      run_benchmark)
from src.utils.config import DbscanConfig, RunConfig
from src.utils.container import read_frames, write_flow
from src.utils.dataset_store import DatasetStore
from src.utils.error_handler import ConfigurationError

BENCH_CONFIG = Path(__file__).resolve().parents[1] / "configs" / "bench.yaml"

SMALL_RUN = """\
seed: 3
preprocess:
  num_points: 512
  max_range: 35.0
estimator:
  embedding_dim: 4
  candidate_k: 6
schedule:
  eval_interval: 2
"""


@pytest.fixture
def run_config(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text(SMALL_RUN)
    return str(path)


@pytest.fixture
def dataset(tmp_path, run_config):
    out = tmp_path / "data"
    assert main(["gen", "--config", run_config, "--script", "source", "--num-pairs", "2", "--out", str(out)]) == 0
    return out


class TestCommandLine:
    """End-to-end runs of the CLI subcommands"""

    def test_gen_is_byte_identical(self, tmp_path, run_config, dataset):
        """Test two generations with the same seed write identical files"""
        again = tmp_path / "again"
        assert main(["gen", "--config", run_config, "--script", "source", "--num-pairs", "2",
                     "--out", str(again)]) == 0
        assert (dataset / "manifest.json").read_bytes() == (again / "manifest.json").read_bytes()
        for name in ("pair_00000.gsf", "pair_00001.gsf"):
            assert (dataset / "pairs" / name).read_bytes() == (again / "pairs" / name).read_bytes()

    def test_gen_writes_manifest(self, dataset):
        """Test the dataset manifest and the run manifest"""
        manifest = json.loads((dataset / "manifest.json").read_text())
        assert manifest["preset"] == "source"
        assert len(manifest["pairs"]) == 2
        assert all(entry["points"] <= 512 for entry in manifest["pairs"])
        run = json.loads((dataset / "run_manifest.json").read_text())
        assert run["command"] == "gen"
        assert run["config"]["seed"] == 3
        assert run["result"]["pairs"] == 2

    def test_eval_ground_truth_prediction(self, tmp_path, dataset):
        """Test evaluating the ground truth as prediction gives EPE 0"""
        store = DatasetStore(str(dataset))
        pred_dir = tmp_path / "pred"
        for index, pair in enumerate(store.pairs()):
            write_flow(pred_dir / store.pair_path(index).name, pair.first, pair.flow)

        out = tmp_path / "eval"
        assert main(["eval", "--dataset", str(dataset), "--pred", str(pred_dir), "--out", str(out)]) == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["epe3d"] == 0.0
        assert summary["acc_strict"] == 100.0
        assert summary["outliers"] == 0.0
        assert len((out / "metrics.jsonl").read_text().splitlines()) == 2

    def test_refine_nearest_neighbor_flow(self, tmp_path, dataset):
        """Test refine writes one aligned flow per pair"""
        out = tmp_path / "refine"
        assert main(["refine", "--dataset", str(dataset), "--predictor", "nn", "--out", str(out)]) == 0
        store = DatasetStore(str(dataset))
        for index in range(2):
            first, _, flow = read_frames(out / "refined" / f"pair_{index:05d}.gsf")
            assert len(flow) == len(store.load(index).first)
            assert np.all(np.isfinite(flow.vectors))

    def test_pretrain_then_adapt(self, tmp_path, run_config, dataset):
        """Test checkpoints and training logs from short runs"""
        pre = tmp_path / "pre"
        assert main(["pretrain", "--config", run_config, "--source", str(dataset), "--val", str(dataset),
                     "--steps", "3", "--out", str(pre)]) == 0
        assert (pre / "student.gsfc").is_file()
        records = [json.loads(line) for line in (pre / "training_log.jsonl").read_text().splitlines()]
        assert [r["step"] for r in records] == [1, 2, 3]
        assert "val_epe" in records[1]

        adapted = tmp_path / "adapt"
        assert main(["adapt", "--config", run_config, "--source", str(dataset), "--target", str(dataset),
                     "--checkpoint", str(pre / "student.gsfc"), "--steps", "2", "--out", str(adapted)]) == 0
        assert (adapted / "teacher.gsfc").is_file()
        assert main(["eval", "--dataset", str(dataset), "--checkpoint", str(adapted / "student.gsfc"),
                     "--out", str(tmp_path / "eval")]) == 0

    def test_training_log_is_deterministic(self, tmp_path, run_config, dataset):
        """Test identical pretraining runs write identical logs"""
        logs = []
        for name in ("a", "b"):
            out = tmp_path / name
            assert main(["pretrain", "--config", run_config, "--source", str(dataset), "--steps", "2",
                         "--out", str(out)]) == 0
            logs.append((out / "training_log.jsonl").read_bytes())
        assert logs[0] == logs[1]


class TestExitCodes:
    """Test usage and runtime failures map to exit codes"""

    def test_unknown_command(self):
        """Test argparse usage errors return 2"""
        assert main(["frobnicate"]) == 2

    def test_missing_config(self, tmp_path):
        """Test a missing config file is a usage error"""
        assert main(["eval", "--config", str(tmp_path / "absent.yaml"), "--out", str(tmp_path)]) == 2

    def test_invalid_config_value(self, tmp_path):
        """Test an out-of-range config value is a usage error"""
        path = tmp_path / "bad.yaml"
        path.write_text("ema:\n  alpha: 2.0\n")
        assert main(["eval", "--config", str(path), "--out", str(tmp_path)]) == 2

    def test_eval_without_dataset(self, tmp_path):
        """Test a missing required input is a usage error"""
        assert main(["eval", "--out", str(tmp_path / "eval")]) == 2

    def test_missing_dataset_directory(self, tmp_path):
        """Test a runtime data error returns 1"""
        assert main(["pretrain", "--source", str(tmp_path / "nothing"), "--out", str(tmp_path / "pre")]) == 1

    def test_corrupt_pair(self, tmp_path, dataset):
        """Test a damaged container returns 1"""
        (dataset / "pairs" / "pair_00001.gsf").write_bytes(b"GSF1junk")
        assert main(["eval", "--dataset", str(dataset), "--predictor", "nn", "--out", str(tmp_path / "eval")]) == 1

    def test_unwritable_output(self, tmp_path, dataset):
        """Test an OS error while writing results is reported as a runtime failure"""
        blocker = tmp_path / "blocker"
        blocker.write_text("")
        assert main(["eval", "--dataset", str(dataset), "--predictor", "nn", "--out", str(blocker / "eval")]) == 1


class TestBenchConfig:
    """Test the benchmark knobs against the target scan geometry"""

    def test_rotation_stays_within_one_candidate_neighborhood(self):
        """Test the student rotation range is at most half the target azimuth step"""
        cfg = RunConfig.load(str(BENCH_CONFIG))
        lidar = SceneScript.preset("target").lidar
        assert cfg.transform.rotation_range_deg <= 0.5 * lidar.azimuth_fov_deg / lidar.azimuth_bins

    def test_teacher_follows_within_the_schedule(self):
        """Test the EMA time constant is at most a fifth of the adaptation steps"""
        cfg = RunConfig.load(str(BENCH_CONFIG))
        assert 1.0 / (1.0 - cfg.ema.alpha) <= cfg.schedule.adapt_steps / 5

    def test_clustering_covers_more_target_points(self):
        """Test the bench clustering leaves fewer sparse target points unrefined than the default"""
        cfg = RunConfig.load(str(BENCH_CONFIG))
        pair = generate_pairs(SceneScript.preset("target"), 1, seed=cfg.seed, cfg=cfg.preprocess)[0].pair
        bench_noise = dbscan(pair.first, cfg.dbscan).noise.shape[0]
        default_noise = dbscan(pair.first, DbscanConfig()).noise.shape[0]
        assert bench_noise < default_noise


@pytest.mark.slow
class TestDeskScaleExperiments:
    """Acceptance runs of the benchmark and the ground removal ablation"""

    def test_adaptation_improves_target_epe(self, tmp_path):
        """Test adapted EPE on held-out target pairs is at most 0.8x source-only"""
        cfg = RunConfig.load(str(BENCH_CONFIG))
        results = run_benchmark(cfg, build_domains(cfg), str(tmp_path))
        assert results["adapted"].epe3d <= 0.8 * results["source-only"].epe3d
        assert (tmp_path / "bench.csv").is_file()

    def test_ground_removal_ordering(self):
        """Test entity < height < none in post-refinement EPE on sloped ground"""
        cfg = RunConfig.load(str(BENCH_CONFIG))
        results = ground_removal_ablation(cfg)
        assert results["entity"].epe3d < results["height"].epe3d < results["none"].epe3d


def _tiny_domains(seed=0):
    """Hand-built source/target pairs small enough for many short adaptation runs"""
    rng = np.random.default_rng(seed)

    def pair(shift, noise):
        first = PointCloud(rng.uniform(0, 4, size=(90, 3)))
        second = PointCloud(first.points + shift + rng.normal(0, noise, size=(90, 3)))
        return AnnotatedPair(first, second, FlowField(np.tile(shift, (90, 1))))

    return DomainData(
        source=[pair([0.1, 0.0, 0.0], 0.0) for _ in range(2)],
        target=[pair([0.05, 0.05, 0.0], 0.02) for _ in range(2)],
        val=[pair([0.05, 0.05, 0.0], 0.02)],
    )


class TestAblationRunner:
    """Test sweep grids and the variants each sweep reports"""

    @staticmethod
    def _config(**changes):
        base = {
            "dbscan": {"epsilon": 0.8, "min_points": 3},
            "estimator": {"embedding_dim": 3, "candidate_k": 4},
            "ablation": {"alphas": [0.99, 0.999], "k_values": [3, 9], "pretrain_steps": 2, "adapt_steps": 2},
        }
        base.update(changes)
        return RunConfig.load(None, **base)

    def test_sweeps_report_every_variant(self):
        """Test alpha, K, transform and component sweeps each add one row per variant"""
        runner = AblationRunner(self._config(), _tiny_domains(), ExperimentReporter("ablation"))
        table = runner.run(("alpha", "k", "transform", "components")).table()

        variants = table.groupby("sweep")["variant"].apply(list).to_dict()
        assert variants["alpha"] == ["0.990", "0.999"]
        assert variants["k"] == ["3", "9"]
        assert variants["transform"] == ["asymmetric", "symmetric"]
        assert variants["components"] == ["EPC", "EPC+DR", "EPC+DR+CR", "no mean teacher"]
        assert table.loc[table["sweep"] == "alpha", "alpha"].tolist() == [0.99, 0.999]
        assert np.all(np.isfinite(table["epe3d"]))
        assert runner.pretrained is runner.pretrained

    def test_grid_bounds_validated(self):
        """Test alpha outside [0, 1] and K below 1 are refused in the sweep grids"""
        with pytest.raises(ConfigurationError):
            self._config(ablation={"alphas": [0.99, 1.01]})
        with pytest.raises(ConfigurationError):
            self._config(ablation={"k_values": [0, 3]})

    def test_unknown_transform_variant(self):
        """Test an unknown transform name fails as a configuration error"""
        cfg = self._config(ablation={"transforms": ["mirror"], "pretrain_steps": 1, "adapt_steps": 1})
        runner = AblationRunner(cfg, _tiny_domains(), ExperimentReporter("ablation"))
        with pytest.raises(ConfigurationError):
            runner.run(("transform",))
