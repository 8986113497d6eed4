"""Scene-flow domain adaptation toolkit: command-line entry point"""

import argparse
import json
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

from src.evaluation.metrics import aggregate, evaluate
from src.evaluation.reporter import ExperimentReporter
from src.geometry.clustering import dbscan
from src.geometry.core import FlowField, PointCloud
from src.labeling.pseudo_label import refine_flow
from src.models.checkpoint import load_checkpoint, save_checkpoint
from src.models.estimator import EstimatorParams, nn_baseline_flow, predict_flow
from src.synth.annotate import AnnotatedPair
from src.synth.generator import generate_pairs
from src.synth.scene import SceneScript
from src.training.experiments import SWEEPS, AblationRunner, build_domains, run_benchmark
from src.training.mean_teacher import TrainState
from src.training.trainer import Trainer
from src.utils.config import RunConfig
from src.utils.container import read_frames, write_flow, write_ply
from src.utils.dataset_store import DatasetStore
from src.utils.error_handler import ConfigurationError, SceneFlowError, handle_errors, setup_global_error_handler
from src.utils.logger_setup import set_level, setup_logger
from src.utils.monitoring import TrainingMonitor
from src.utils.parallel import parallel_map

logger = setup_logger(__name__)

VERSION = "1.0.0"
CHECKPOINT = "student.gsfc"
TEACHER_CHECKPOINT = "teacher.gsfc"


def write_run_manifest(out: Path, command: str, argv: Sequence[str], cfg: RunConfig,
                       extra: Optional[Dict[str, Any]] = None) -> Path:
    """Resolved config and seeds; enough to rerun the command bit-exactly"""
    out.mkdir(parents=True, exist_ok=True)
    document = {
        "command": command,
        "argv": list(argv),
        "version": VERSION,
        "seed": cfg.seed,
        "config": cfg.resolved(),
    }
    document.update(extra or {})
    path = out / "run_manifest.json"
    path.write_text(json.dumps(document, indent=2, sort_keys=True) + "\n")
    return path


def _load_pairs(directory: Optional[str], what: str) -> List[AnnotatedPair]:
    if not directory:
        raise ConfigurationError(f"No {what} dataset given (flag or data.{what}_dir)")
    return DatasetStore(directory).load_all()


def _initial_params(cfg: RunConfig, checkpoint: Optional[str]) -> EstimatorParams:
    return load_checkpoint(checkpoint) if checkpoint else EstimatorParams.initial(cfg.estimator)


# --- gen -------------------------------------------------------------------

def cmd_gen(args, cfg: RunConfig, out: Path) -> Dict[str, Any]:
    script_ref = args.script or cfg.data.scene_script or "source"
    script = SceneScript.from_yaml(script_ref)
    num_pairs = args.num_pairs or cfg.data.num_pairs
    generated = generate_pairs(script, num_pairs, cfg.seed, cfg.preprocess, args.workers)

    store = DatasetStore(str(out))
    store.write([g.pair for g in generated], {
        "preset": script.name,
        "script": script.model_dump(mode="json"),
        "seed": cfg.seed,
        "scene_seeds": [g.scene_seed for g in generated],
        "frames": [g.frame for g in generated],
        "preprocess": cfg.preprocess.model_dump(mode="json"),
    })
    if args.emit_ply:
        for index, g in enumerate(generated):
            write_ply(out / "ply" / f"pair_{index:05d}_first.ply", g.pair.first.points, g.pair.first.labels)
            write_ply(out / "ply" / f"pair_{index:05d}_second.ply", g.pair.second.points, g.pair.second.labels)
            write_ply(out / "ply" / f"pair_{index:05d}_warped.ply", g.pair.warped)
    logger.info(f"✅ Generated {len(generated)} '{script.name}' pairs in {out}")
    return {"pairs": len(generated), "preset": script.name}


# --- pretrain / adapt --------------------------------------------------------

def cmd_pretrain(args, cfg: RunConfig, out: Path) -> Dict[str, Any]:
    source = _load_pairs(args.source or cfg.data.source_dir, "source")
    val = _load_pairs(args.val or cfg.data.val_dir, "val") if (args.val or cfg.data.val_dir) else []
    trainer = Trainer(cfg, TrainingMonitor(str(out / "training_log.jsonl")))
    state = trainer.pretrain(source, _initial_params(cfg, args.checkpoint), args.steps, val)
    save_checkpoint(out / CHECKPOINT, state.student)
    trainer.monitor.log_summary()
    return {"steps": state.step, "final_l_source": state.l_source}


def cmd_adapt(args, cfg: RunConfig, out: Path) -> Dict[str, Any]:
    source = _load_pairs(args.source or cfg.data.source_dir, "source")
    target = _load_pairs(args.target or cfg.data.target_dir, "target")
    val = _load_pairs(args.val or cfg.data.val_dir, "val") if (args.val or cfg.data.val_dir) else []
    trainer = Trainer(cfg, TrainingMonitor(str(out / "training_log.jsonl")))
    start = TrainState.initial(_initial_params(cfg, args.checkpoint), cfg.seed)
    state = trainer.adapt(start, source, target, args.steps, val)
    save_checkpoint(out / CHECKPOINT, state.student)
    save_checkpoint(out / TEACHER_CHECKPOINT, state.teacher)
    trainer.monitor.log_summary()
    return {"steps": state.step, "final_l_stu": state.l_stu, "diagnostics": state.diagnostics}


# --- refine ------------------------------------------------------------------

def _refine_job(job: Tuple[PointCloud, PointCloud, FlowField, RunConfig]):
    first, second, flow, cfg = job
    clusters = dbscan(first, cfg.dbscan)
    refined, labels = refine_flow(first, second, flow, clusters, cfg.refine, cfg.pipeline.use_dr, cfg.pipeline.use_cr)
    return refined, labels.points, labels.diagnostics.as_dict()


def _predict(predictor: str, params: Optional[EstimatorParams], first: PointCloud, second: PointCloud) -> FlowField:
    if predictor == "nn":
        return nn_baseline_flow(first, second)
    return predict_flow(params, first, second)


def cmd_refine(args, cfg: RunConfig, out: Path) -> Dict[str, Any]:
    if args.pair:
        first, second, _ = read_frames(args.pair)
        if second is None:
            raise ConfigurationError(f"{args.pair} has no second frame")
        if args.flow:
            _, _, flow = read_frames(args.flow)
            if flow is None:
                raise ConfigurationError(f"{args.flow} has no FLOW section")
        else:
            flow = _predict(args.predictor, _predictor_params(args), first, second)
        jobs = [(first, second, flow, cfg)]
    else:
        pairs = _load_pairs(args.dataset, "dataset")
        params = _predictor_params(args)
        jobs = [(p.first, p.second, _predict(args.predictor, params, p.first, p.second), cfg) for p in pairs]

    results = parallel_map(_refine_job, jobs, args.workers)
    diagnostics: Dict[str, int] = {}
    for index, ((first, _, _, _), (refined, pseudo, counts)) in enumerate(zip(jobs, results)):
        write_flow(out / "refined" / f"pair_{index:05d}.gsf", first, refined)
        if args.emit_ply:
            write_ply(out / "ply" / f"pair_{index:05d}_pseudo.ply", pseudo)
        for kind, count in counts.items():
            diagnostics[kind] = diagnostics.get(kind, 0) + count
    logger.info(f"✅ Refined {len(jobs)} flows into {out / 'refined'}")
    return {"refined": len(jobs), "diagnostics": diagnostics}


# --- eval --------------------------------------------------------------------

def _predictor_params(args) -> Optional[EstimatorParams]:
    if args.predictor == "checkpoint":
        if not args.checkpoint:
            raise ConfigurationError("--predictor checkpoint needs --checkpoint")
        return load_checkpoint(args.checkpoint)
    return None


def _eval_job(job: Tuple[str, Optional[EstimatorParams], AnnotatedPair, Optional[FlowField]]):
    predictor, params, pair, pred = job
    if pred is None:
        pred = _predict(predictor, params, pair.first, pair.second)
    return pred, evaluate(pred, pair.flow)


def cmd_eval(args, cfg: RunConfig, out: Path) -> Dict[str, Any]:
    dataset = args.dataset or cfg.data.val_dir
    if not dataset:
        raise ConfigurationError("No dataset to evaluate (--dataset or data.val_dir)")
    store = DatasetStore(dataset)
    pairs = store.load_all()
    params = None if args.pred else _predictor_params(args)
    jobs = []
    for index, pair in enumerate(pairs):
        pred = None
        if args.pred:
            _, _, pred = read_frames(Path(args.pred) / Path(store.manifest["pairs"][index]["file"]).name)
            if pred is None:
                raise ConfigurationError(f"Prediction for pair {index} has no FLOW section")
        jobs.append((args.predictor, params, pair, pred))

    results = parallel_map(_eval_job, jobs, args.workers)
    mode = cfg.metrics.averaging
    summary = aggregate([(pred, pair.flow) for (pred, _), pair in zip(results, pairs)], mode)

    out.mkdir(parents=True, exist_ok=True)
    with (out / "metrics.jsonl").open("w") as f:
        for index, (_, metrics) in enumerate(results):
            f.write(json.dumps({"pair": index, **metrics.as_dict()}, sort_keys=True) + "\n")
    record = {"averaging": mode, "pairs": len(pairs), **summary.as_dict()}
    (out / "summary.json").write_text(json.dumps(record, indent=2, sort_keys=True) + "\n")
    if args.emit_ply:
        for index, ((pred, _), pair) in enumerate(zip(results, pairs)):
            write_ply(out / "ply" / f"pair_{index:05d}_predicted.ply", pair.first.points + pred.vectors)

    print(json.dumps(record, sort_keys=True))
    return record


# --- ablate / bench ----------------------------------------------------------

def cmd_ablate(args, cfg: RunConfig, out: Path) -> Dict[str, Any]:
    sweeps = args.sweep or list(SWEEPS)
    data = build_domains(cfg, args.workers) if any(s != "gpr" for s in sweeps) else None
    reporter = ExperimentReporter("Ablation sweeps", cfg.metrics.averaging)
    AblationRunner(cfg, data, reporter).run(sweeps)
    reporter.write(str(out), "ablation")
    print(reporter.render())
    return {"sweeps": sweeps, "rows": len(reporter.rows)}


def cmd_bench(args, cfg: RunConfig, out: Path) -> Dict[str, Any]:
    data = build_domains(cfg, args.workers)
    results = run_benchmark(cfg, data, str(out))
    source_only, adapted = results["source-only"].epe3d, results["adapted"].epe3d
    summary = {name: m.as_dict() for name, m in results.items()}
    summary["improvement"] = 1.0 - adapted / max(source_only, 1e-12)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return summary


COMMANDS = {
    "gen": cmd_gen,
    "pretrain": cmd_pretrain,
    "adapt": cmd_adapt,
    "refine": cmd_refine,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
    "bench": cmd_bench,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sceneflow", description="Scene-flow domain adaptation toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {VERSION}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run config")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", help="output directory (default runs/<command>)")
    common.add_argument("--workers", type=int, default=1, help="process pool size for per-pair work")
    common.add_argument("--emit-ply", action="store_true", help="also export clouds as ASCII PLY")

    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", parents=[common], help="generate a synthetic dataset")
    gen.add_argument("--script", help="scene script path or preset name (source, target, sloped)")
    gen.add_argument("--num-pairs", type=int)

    for name, help_text in (("pretrain", "source-only supervised training"),
                            ("adapt", "mean-teacher adaptation")):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.add_argument("--source", help="source dataset directory")
        p.add_argument("--val", help="held-out dataset for periodic validation")
        p.add_argument("--checkpoint", help="initial estimator checkpoint")
        p.add_argument("--steps", type=int)
        if name == "adapt":
            p.add_argument("--target", help="unlabeled target dataset directory")

    refine = sub.add_parser("refine", parents=[common], help="DR+CR on a pair and a flow")
    source = refine.add_mutually_exclusive_group(required=True)
    source.add_argument("--pair", help="pair container (PTS1 + PTS2)")
    source.add_argument("--dataset", help="dataset directory")
    refine.add_argument("--flow", help="flow container for --pair")
    refine.add_argument("--predictor", choices=["nn", "checkpoint"], default="nn")
    refine.add_argument("--checkpoint")

    ev = sub.add_parser("eval", parents=[common], help="scene-flow metrics on a dataset")
    ev.add_argument("--dataset", help="dataset directory with ground truth")
    ev.add_argument("--pred", help="directory of prediction containers named like the dataset pairs")
    ev.add_argument("--predictor", choices=["nn", "checkpoint"], default="checkpoint")
    ev.add_argument("--checkpoint")

    ablate = sub.add_parser("ablate", parents=[common], help="ablation sweeps")
    ablate.add_argument("--sweep", action="append", choices=list(SWEEPS))

    sub.add_parser("bench", parents=[common], help="desk-scale adaptation benchmark")
    return parser


@handle_errors
def run_command(args, argv: Sequence[str], cfg: RunConfig, out: Path) -> Dict[str, Any]:
    """Run one subcommand between its two run manifest writes"""
    write_run_manifest(out, args.command, argv, cfg)
    result = COMMANDS[args.command](args, cfg, out)
    write_run_manifest(out, args.command, argv, cfg, {"result": result})
    return result


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else 0

    try:
        cfg = RunConfig.load(args.config, seed=args.seed)
    except ConfigurationError as e:
        logger.error(f"❌ {e}")
        return 2
    set_level(cfg.logging.level, cfg.logging.directory)
    out = Path(args.out or f"runs/{args.command}")

    try:
        run_command(args, argv, cfg, out)
    except ConfigurationError as e:
        logger.error(f"❌ {e}")
        return 2
    except SceneFlowError as e:
        logger.error(f"❌ {type(e).__name__}: {e}")
        return 1
    return 0


if __name__ == "__main__":
    setup_global_error_handler()
    sys.exit(main())
