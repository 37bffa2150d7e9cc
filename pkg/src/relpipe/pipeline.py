"""Pipeline configuration and the stage functions used by the CLI.

Stages: cluster labels on the training split, route groups, train the
boosted model on boosted-routed pairs, predict on the evaluation split (or
its detections), and score.  The ablation runs four variants:

``freq_full``       frequency prediction from per-category distributions
``freq_clustered``  frequency prediction from pseudo-label group distributions
``gb``              routed prediction, boosted path without depth features
``gb_depth``        routed prediction, boosted path with depth features
"""

from __future__ import annotations

import copy
import csv
import io
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .boosting import BoostedModel, BoostingParams
from .clustering import (ClusterModel, CohesionReport, FrequencyMatrix, SelectionTrace,
                         build_frequency_matrix, identity_model, select_k)
from .dataset_io import DepthRaster, LabelVocabulary, RelationTriple, SceneRecord, read_split, scene_depth, load_vocabulary
from .errors import ArtifactError, ConfigError
from .evaluation import EvalConfig, EvalReport, evaluate
from .features import CandidatePair, PairFeatures, scene_features
from .predictors import (BOOSTED, FREQ_ARGMAX, FREQ_SAMPLE, FrequencyModel, RoutingRule,
                         predict_scene, route_groups, train_boosted_for_groups)

log = logging.getLogger(__name__)

CONFIG_VERSION = 1
ABLATION_CONFIGS = ("freq_full", "freq_clustered", "gb", "gb_depth")


@dataclass(frozen=True)
class PipelineConfig:
    dataset_root: Path
    vocab_path: Path
    cluster_seed: int
    predict_seed: int
    train_split: str = "train"
    eval_split: str = "val"
    detections_split: str | None = "val_detections"
    k_range: tuple[int, int] = (8, 10)
    restarts: int = 16
    max_sigma: float = 0.15
    min_support: int = 50
    routing: RoutingRule = RoutingRule()
    boosting: BoostingParams = BoostingParams()
    freq_mode: str = "argmax"
    evaluation: EvalConfig = EvalConfig()
    output_dir: Path = Path("out")

    @classmethod
    def from_json(cls, obj: dict, base_dir=".") -> "PipelineConfig":
        base = Path(base_dir)
        if obj.get("version") != CONFIG_VERSION:
            raise ConfigError(f"config version must be {CONFIG_VERSION}, got {obj.get('version')!r}")
        try:
            ds = obj["dataset"]
            cl = obj.get("clustering", {})
            pr = obj.get("prediction", {})
            if "seed" not in cl or "seed" not in pr:
                raise ConfigError("clustering.seed and prediction.seed are required")
            root = base / ds["root"]
            k_range = tuple(int(k) for k in cl.get("k_range", (8, 10)))
            if len(k_range) != 2 or k_range[0] < 1 or k_range[0] > k_range[1]:
                raise ConfigError(f"clustering.k_range must be [lo, hi] with 1 <= lo <= hi: {k_range}")
            mode = pr.get("freq_mode", "argmax")
            if mode not in ("argmax", "sample"):
                raise ConfigError(f"prediction.freq_mode must be argmax or sample, got {mode!r}")
            restarts = int(cl.get("restarts", 16))
            if restarts < 1:
                raise ConfigError("clustering.restarts must be >= 1")
            ev = obj.get("evaluation", {})
            return cls(
                dataset_root=root,
                vocab_path=root / ds.get("vocab", "vocab.json"),
                train_split=ds.get("train_split", "train"),
                eval_split=ds.get("eval_split", "val"),
                detections_split=ds.get("detections_split", "val_detections"),
                cluster_seed=int(cl["seed"]),
                predict_seed=int(pr["seed"]),
                k_range=k_range,
                restarts=restarts,
                max_sigma=float(cl.get("max_sigma", 0.15)),
                min_support=int(cl.get("min_support", 50)),
                routing=RoutingRule(**obj.get("routing", {})),
                boosting=BoostingParams(**obj.get("boosting", {})),
                freq_mode=mode,
                evaluation=EvalConfig(tuple(ev.get("thresholds", (0.25, 0.5, 0.75))),
                                      ev.get("matching", "mask")),
                output_dir=base / obj.get("output_dir", "out"),
            )
        except ConfigError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid config: {exc}") from None


def apply_overrides(obj: dict, overrides: Sequence[str]) -> dict:
    """Apply ``section.key=value`` overrides; values parse as JSON when they can."""
    obj = copy.deepcopy(obj)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form section.key=value")
        path, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = obj
        keys = path.split(".")
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {path!r} descends into a non-object")
        node[keys[-1]] = value
    return obj


def load_config(path, overrides: Sequence[str] = ()) -> PipelineConfig:
    path = Path(path)
    try:
        obj = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return PipelineConfig.from_json(apply_overrides(obj, overrides), path.parent)


class Dataset:
    """A dataset directory with lazily loaded splits and depth rasters."""

    def __init__(self, root, vocab_path):
        self.root = Path(root)
        if not self.root.is_dir():
            raise ArtifactError(f"dataset directory {self.root} does not exist")
        self.vocab: LabelVocabulary = load_vocabulary(vocab_path)
        self._splits: dict[str, list[SceneRecord]] = {}

    def has_split(self, name: str | None) -> bool:
        return name is not None and (self.root / f"{name}.jsonl").exists()

    def split(self, name: str) -> list[SceneRecord]:
        if name not in self._splits:
            path = self.root / f"{name}.jsonl"
            self._splits[name] = read_split(path, self.vocab) if path.exists() else []
        return self._splits[name]

    def depth(self, scene: SceneRecord) -> DepthRaster | None:
        return scene_depth(self.root, scene)


def _pmap(fn, items, threads: int):
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def featurize(scenes: Sequence[SceneRecord], data: Dataset, cluster: ClusterModel,
              use_depth: bool, threads: int = 1) -> list[tuple[CandidatePair, PairFeatures]]:
    def one(scene):
        depth = data.depth(scene) if use_depth else None
        return scene_features(scene, data.vocab, cluster, depth)

    return [row for rows in _pmap(one, scenes, threads) for row in rows]


@dataclass
class ClusterStage:
    matrix: FrequencyMatrix
    model: ClusterModel
    report: CohesionReport
    trace: SelectionTrace


def run_clustering(cfg: PipelineConfig, data: Dataset, threads: int = 1) -> ClusterStage:
    """Select k, cluster, and route groups on the training split."""
    train = data.split(cfg.train_split)
    matrix = build_frequency_matrix(train, data.vocab)
    if not matrix.clustered.any():
        raise ArtifactError(f"training split {cfg.train_split!r} has no relation triples")
    model, report, trace = select_k(matrix, cfg.k_range, cfg.cluster_seed, cfg.max_sigma,
                                    cfg.min_support, cfg.restarts, threads=threads)
    model = route_groups(model, data.vocab, cfg.routing)
    model = _demote_untrainable(model, train, data.vocab)
    return ClusterStage(matrix, model, report, trace)


def _demote_untrainable(model: ClusterModel, train, vocab) -> ClusterModel:
    """Send boosted groups to frequency prediction when their labels hold a single class."""
    boosted = {g for g, r in enumerate(model.routing) if r == BOOSTED}
    if not boosted:
        return model
    labels = {t.relation_id for s in train for t in s.triples
              if model.group_of(s.instance(t.object_id).category_id) in boosted}
    if len(labels) >= 2:
        return model
    log.warning("boosted groups %s carry fewer than two relation classes; "
                "routing them to frequency_argmax", sorted(boosted))
    return model.with_routing(FREQ_ARGMAX if r == BOOSTED else r for r in model.routing)


def run_training(cfg: PipelineConfig, data: Dataset, cluster: ClusterModel, use_depth: bool,
                 threads: int = 1) -> BoostedModel | None:
    """Boosted model for the boosted-routed groups, or None when no group needs one."""
    if BOOSTED not in cluster.routing:
        return None
    rows = featurize(data.split(cfg.train_split), data, cluster, use_depth, threads)
    pairs = [p for p, _ in rows]
    feats = [f for _, f in rows]
    return train_boosted_for_groups(pairs, feats, cluster, cfg.boosting, threads=threads)


def prediction_scenes(cfg: PipelineConfig, data: Dataset, split: str | None = None):
    """Scenes whose instances predictions refer to: detections if present, else truth."""
    split = split or cfg.eval_split
    if split == cfg.eval_split and data.has_split(cfg.detections_split):
        return data.split(cfg.detections_split)
    return data.split(split)


def run_prediction(scenes: Sequence[SceneRecord], data: Dataset, cluster: ClusterModel,
                   boosted: BoostedModel | None, use_depth: bool, seed: int,
                   threads: int = 1) -> dict[str, list[RelationTriple]]:
    freq = FrequencyModel.from_cluster(cluster)

    def one(scene):
        depth = data.depth(scene) if use_depth and BOOSTED in cluster.routing else None
        preds = predict_scene(scene, data.vocab, cluster, freq, boosted, depth, seed)
        return scene.scene_id, [RelationTriple(p.subject_id, p.object_id, r) for p, r in preds]

    return dict(_pmap(one, scenes, threads))


def predictions_csv(predictions: Mapping[str, Sequence[RelationTriple]],
                    vocab: LabelVocabulary) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("scene_id", "subject_id", "object_id", "relation"))
    for sid in sorted(predictions):
        for t in predictions[sid]:
            writer.writerow((sid, t.subject_id, t.object_id, vocab.relation_labels[t.relation_id]))
    return buf.getvalue()


def read_predictions_csv(path, vocab: LabelVocabulary) -> dict[str, list[RelationTriple]]:
    out: dict[str, list[RelationTriple]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rel = row["relation"]
            rid = vocab.relation_id(rel) if rel in vocab.relation_labels else int(rel)
            out.setdefault(row["scene_id"], []).append(
                RelationTriple(int(row["subject_id"]), int(row["object_id"]), rid))
    return out


@dataclass
class AblationResult:
    reports: dict[str, EvalReport]
    cluster: ClusterStage
    models: dict[str, BoostedModel | None] = field(default_factory=dict)


def run_ablation(cfg: PipelineConfig, data: Dataset, threads: int = 1,
                 configs: Sequence[str] = ABLATION_CONFIGS) -> AblationResult:
    unknown = set(configs) - set(ABLATION_CONFIGS)
    if unknown:
        raise ConfigError(f"unknown ablation configurations {sorted(unknown)}")
    stage = run_clustering(cfg, data, threads)
    truth = data.split(cfg.eval_split)
    if not truth:
        raise ArtifactError(f"evaluation split {cfg.eval_split!r} is missing or empty")
    scenes = prediction_scenes(cfg, data)
    freq_route = FREQ_ARGMAX if cfg.freq_mode == "argmax" else FREQ_SAMPLE
    reports: dict[str, EvalReport] = {}
    models: dict[str, BoostedModel | None] = {}
    for name in configs:
        if name == "freq_full":
            full = identity_model(stage.matrix)
            cluster = full.with_routing([freq_route] * full.k)
            boosted, use_depth = None, False
        elif name == "freq_clustered":
            cluster = stage.model.with_routing([freq_route] * stage.model.k)
            boosted, use_depth = None, False
        else:
            cluster = stage.model
            use_depth = name == "gb_depth"
            boosted = run_training(cfg, data, cluster, use_depth, threads)
            models[name] = boosted
        preds = run_prediction(scenes, data, cluster, boosted, use_depth, cfg.predict_seed, threads)
        reports[name] = evaluate(preds, scenes, truth, cfg.evaluation)
        log.info("%s: %s", name, " ".join(f"{a:.4f}" for a in reports[name].row()))
    return AblationResult(reports, stage, models)


def cohesion_csv(stage: ClusterStage) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("group", "members", "support", "sigma", "routing"))
    m = stage.model
    for g in range(m.k):
        writer.writerow((g, " ".join(map(str, m.members(g))), int(m.group_support[g]),
                         f"{stage.report.per_cluster_sigma[g]:.6f}", m.routing[g]))
    writer.writerow(("aggregate", "", int(np.sum(m.group_support)),
                     f"{stage.report.aggregate_sigma:.6f}", ""))
    return buf.getvalue()


def trace_csv(trace: SelectionTrace) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("k", "status", "wcss", "aggregate_sigma", "min_group_support",
                     "feasible", "selected"))
    for e in trace.entries:
        writer.writerow((e["k"], e["status"],
                         "" if e["wcss"] is None else f"{e['wcss']:.6f}",
                         "" if e["aggregate_sigma"] is None else f"{e['aggregate_sigma']:.6f}",
                         "" if e["min_group_support"] is None else e["min_group_support"],
                         int(e["feasible"]), int(e["selected"])))
    return buf.getvalue()
