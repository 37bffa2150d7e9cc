"""Command-line entry point: ``relpipe <command> [options] [--section.key=value ...]``.

Commands: validate, cluster, train, predict, eval, ablate, synth.  Errors go
to stderr as one JSON object ``{"error": <category>, "message": ...}``.
Set ``RELPIPE_LOG`` to a logging level name to change verbosity.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

from ._fileio import atomic_write_text
from .boosting import BoostedModel
from .clustering import ClusterModel
from .dataset_io import read_split, scene_depth, load_vocabulary
from .depth import scene_depth_stats
from .errors import ArtifactError, ConfigError, DataParseError, RelpipeError
from .evaluation import per_scene_csv, report_csv, evaluate
from .features import features_csv
from .pipeline import (Dataset, cohesion_csv, featurize, load_config, prediction_scenes,
                       predictions_csv, read_predictions_csv, run_ablation, run_clustering,
                       run_prediction, run_training, trace_csv)
from .synthetic import SynthSpec, generate

log = logging.getLogger("relpipe")

EXIT_CODES = {"config_error": 2, "parse_error": 3, "validation_error": 4,
              "missing_artifact": 5, "model_error": 6}


def _setup_logging():
    level = os.environ.get("RELPIPE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _config(args):
    if not args.config:
        raise ConfigError("--config is required for this command")
    cfg = load_config(args.config, args.overrides)
    out = Path(args.out) if args.out else cfg.output_dir
    return cfg, out


def _read_json(path, what):
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"{what} file {path} not found")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataParseError(path, exc.pos, exc.msg) from None


def _load_cluster(path) -> ClusterModel:
    try:
        return ClusterModel.from_json(_read_json(path, "cluster model"))
    except (KeyError, ValueError) as exc:
        raise DataParseError(path, 0, str(exc)) from None


def _load_boosted(path) -> BoostedModel:
    try:
        return BoostedModel.from_json(_read_json(path, "boosted model"))
    except (KeyError, ValueError) as exc:
        raise DataParseError(path, 0, str(exc)) from None


def _write(out: Path, name: str, text: str) -> Path:
    path = out / name
    atomic_write_text(path, text)
    log.info("wrote %s", path)
    return path


def cmd_validate(args) -> int:
    if args.dataset:
        root = Path(args.dataset)
        vocab_path = Path(args.vocab) if args.vocab else root / "vocab.json"
    else:
        cfg, _ = _config(args)
        root, vocab_path = cfg.dataset_root, cfg.vocab_path
    vocab = load_vocabulary(vocab_path)
    splits = [root / f"{args.split}.jsonl"] if args.split else sorted(root.glob("*.jsonl"))
    report = {"dataset": str(root), "splits": {}}
    depth_rows = []
    for path in splits:
        if not path.exists():
            raise ArtifactError(f"split file {path} not found")
        scenes = read_split(path, vocab)
        n_depth = 0
        for scene in scenes:
            depth = scene_depth(root, scene)
            if depth is None:
                continue
            n_depth += 1
            if args.dump_depth:
                for iid, st in scene_depth_stats(scene, depth).items():
                    depth_rows.append((path.stem, scene.scene_id, iid, st))
        report["splits"][path.stem] = {
            "scenes": len(scenes),
            "instances": sum(len(s.instances) for s in scenes),
            "triples": sum(len(s.triples) for s in scenes),
            "depth_rasters": n_depth,
        }
    if args.dump_depth:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("split", "scene_id", "instance_id", "mean", "median",
                    "pixel_count", "raw_pixel_count", "valid"))
        for split, sid, iid, st in depth_rows:
            w.writerow((split, sid, iid, repr(st.mean), repr(st.median),
                        st.pixel_count, st.raw_pixel_count, int(st.valid)))
        atomic_write_text(args.dump_depth, buf.getvalue())
    report["status"] = "ok"
    print(json.dumps(report, indent=2))
    return 0


def cmd_cluster(args) -> int:
    cfg, out = _config(args)
    stage = run_clustering(cfg, Dataset(cfg.dataset_root, cfg.vocab_path), args.threads)
    _write(out, "cluster_model.json", json.dumps(stage.model.to_json(), indent=1) + "\n")
    _write(out, "cohesion.csv", cohesion_csv(stage))
    _write(out, "selection_trace.csv", trace_csv(stage.trace))
    print(f"selected k={stage.trace.selected_k} (feasible={stage.trace.feasible})")
    return 0


def cmd_train(args) -> int:
    cfg, out = _config(args)
    data = Dataset(cfg.dataset_root, cfg.vocab_path)
    cluster = _load_cluster(args.cluster or out / "cluster_model.json")
    use_depth = not args.no_depth
    if args.dump_features:
        rows = featurize(data.split(cfg.train_split), data, cluster, use_depth, args.threads)
        atomic_write_text(args.dump_features, features_csv(rows))
    model = run_training(cfg, data, cluster, use_depth, args.threads)
    if model is None:
        print("no group routes to the boosted model; nothing to train")
        return 0
    name = "boosted_model.json" if use_depth else "boosted_model_nodepth.json"
    _write(out, name, json.dumps(model.to_json()) + "\n")
    log_lines = ["round,loss"] + [f"{i},{v:.10f}" for i, v in enumerate(model.train_loss)]
    _write(out, "train_log.csv" if use_depth else "train_log_nodepth.csv",
           "\n".join(log_lines) + "\n")
    return 0


def cmd_predict(args) -> int:
    cfg, out = _config(args)
    data = Dataset(cfg.dataset_root, cfg.vocab_path)
    cluster = _load_cluster(args.cluster or out / "cluster_model.json")
    boosted = None
    if "boosted" in cluster.routing:
        default = "boosted_model.json" if not args.no_depth else "boosted_model_nodepth.json"
        boosted = _load_boosted(args.boosted or out / default)
    scenes = prediction_scenes(cfg, data, args.split)
    if not scenes:
        raise ArtifactError(f"split {args.split or cfg.eval_split!r} is missing or empty")
    preds = run_prediction(scenes, data, cluster, boosted, not args.no_depth,
                           cfg.predict_seed, args.threads)
    _write(out, args.output or "predictions.csv", predictions_csv(preds, data.vocab))
    return 0


def cmd_eval(args) -> int:
    cfg, out = _config(args)
    data = Dataset(cfg.dataset_root, cfg.vocab_path)
    pred_path = Path(args.predictions) if args.predictions else out / "predictions.csv"
    if not pred_path.exists():
        raise ArtifactError(f"predictions file {pred_path} not found")
    preds = read_predictions_csv(pred_path, data.vocab)
    split = args.split or cfg.eval_split
    truth = data.split(split)
    if not truth:
        raise ArtifactError(f"split {split!r} is missing or empty")
    report = evaluate(preds, prediction_scenes(cfg, data, split), truth, cfg.evaluation)
    _write(out, "eval_report.csv", report_csv({args.name: report}, cfg.evaluation))
    if args.per_scene:
        _write(out, "eval_per_scene.csv", per_scene_csv(report))
    print(" ".join(f"{c}={v:.4f}" for c, v in zip(cfg.evaluation.columns, report.row())))
    return 0


def cmd_ablate(args) -> int:
    cfg, out = _config(args)
    result = run_ablation(cfg, Dataset(cfg.dataset_root, cfg.vocab_path), args.threads)
    path = _write(out, "ablation.csv", report_csv(result.reports, cfg.evaluation))
    print(path.read_text(), end="")
    return 0


def cmd_synth(args) -> int:
    spec_obj = _read_json(args.spec, "synthetic spec")
    try:
        spec = SynthSpec.from_json(spec_obj)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid synthetic spec: {exc}") from None
    if not args.out:
        raise ConfigError("--out is required for synth")
    ds = generate(spec, args.out)
    print(f"wrote {len(ds.train)} train and {len(ds.val)} val scenes to {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="pipeline config JSON")
    common.add_argument("--out", help="output directory (overrides output_dir)")
    common.add_argument("--threads", type=int, default=1, help="worker threads")

    parser = argparse.ArgumentParser(prog="relpipe", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", parents=[common], help="check a dataset directory")
    p.add_argument("dataset", nargs="?", help="dataset directory (or use --config)")
    p.add_argument("--vocab", help="vocabulary JSON (default DATASET/vocab.json)")
    p.add_argument("--split", help="only this split")
    p.add_argument("--dump-depth", help="write per-instance depth statistics CSV here")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("cluster", parents=[common], help="select k and cluster labels")
    p.set_defaults(func=cmd_cluster)

    p = sub.add_parser("train", parents=[common], help="train the boosted model")
    p.add_argument("--cluster", help="cluster model JSON (default OUT/cluster_model.json)")
    p.add_argument("--no-depth", action="store_true", help="impute depth features")
    p.add_argument("--dump-features", help="write the training feature CSV here")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", parents=[common], help="predict relations for a split")
    p.add_argument("--cluster")
    p.add_argument("--boosted")
    p.add_argument("--split", help="split to predict (default: evaluation split)")
    p.add_argument("--no-depth", action="store_true")
    p.add_argument("--output", help="file name under OUT (default predictions.csv)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", parents=[common], help="score a predictions CSV")
    p.add_argument("--predictions")
    p.add_argument("--split")
    p.add_argument("--name", default="predictions", help="row label in the report")
    p.add_argument("--per-scene", action="store_true", help="also write per-scene hits")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", parents=[common], help="run the four-way ablation")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset")
    p.add_argument("spec", help="synthetic spec JSON")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    overrides = []
    for item in extra:
        if not item.startswith("--") or "=" not in item:
            parser.error(f"unrecognized argument {item!r}")
        overrides.append(item[2:])
    args.overrides = overrides
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        return args.func(args)
    except RelpipeError as exc:
        print(json.dumps({"error": exc.category, "message": str(exc)}), file=sys.stderr)
        if args.command == "validate":
            return 1
        return EXIT_CODES.get(exc.category, 1)


if __name__ == "__main__":
    sys.exit(main())
