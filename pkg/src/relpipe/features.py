"""Human-centric candidate pairs and their 10-value feature vectors."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .clustering import ClusterModel
from .dataset_io import BoundingBox, DepthRaster, LabelVocabulary, SceneRecord
from .depth import DepthStats, scene_depth_stats

DEPTH_IMPUTE = 0.0
FEATURE_NAMES = ("d_y1", "d_x1", "d_y2", "d_x2", "overlap", "group_id",
                 "subj_mean", "subj_median", "obj_mean", "obj_median")
CSV_HEADER = ("scene_id", "subject_id", "object_id") + FEATURE_NAMES + ("label",)


@dataclass(frozen=True)
class CandidatePair:
    scene_id: str
    subject_id: int
    object_id: int
    label: int | None = None

    @property
    def key(self) -> tuple[str, int, int]:
        return (self.scene_id, self.subject_id, self.object_id)


@dataclass(frozen=True)
class PairFeatures:
    d_y1: float
    d_x1: float
    d_y2: float
    d_x2: float
    overlap: float
    group_id: int
    subj_mean: float
    subj_median: float
    obj_mean: float
    obj_median: float
    imputed: bool = False

    def values(self) -> tuple:
        return (self.d_y1, self.d_x1, self.d_y2, self.d_x2, self.overlap, self.group_id,
                self.subj_mean, self.subj_median, self.obj_mean, self.obj_median)


def generate_candidates(scene: SceneRecord, vocab: LabelVocabulary) -> list[CandidatePair]:
    """Every (human, other instance) pair, ordered by (subject_id, object_id).

    Ground-truth labels are attached when the scene has a triple for the
    pair; with several relations on one pair the lowest relation id is used.
    """
    humans = sorted(i.instance_id for i in scene.instances if i.category_id == vocab.human_index)
    others = sorted(i.instance_id for i in scene.instances)
    labels: dict[tuple[int, int], int] = {}
    for t in scene.triples:
        key = (t.subject_id, t.object_id)
        labels[key] = min(labels.get(key, t.relation_id), t.relation_id)
    return [
        CandidatePair(scene.scene_id, h, o, labels.get((h, o)))
        for h in humans
        for o in others
        if o != h
    ]


def box_iou(a: BoundingBox, b: BoundingBox) -> float:
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    inter = max(ih, 0.0) * max(iw, 0.0)
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    return min(max(inter / union, 0.0), 1.0)


def assemble_features(pair: CandidatePair, scene: SceneRecord, cluster: ClusterModel,
                      depth: DepthRaster | None = None,
                      depth_stats: Mapping[int, DepthStats] | None = None) -> PairFeatures:
    """Feature vector for one pair.

    Box differences are subject minus object, with y scaled by the image
    height and x by the width.  Pass precomputed ``depth_stats`` to avoid
    re-filtering the same instance for every pair it appears in.  Missing
    or invalid depth gives zeros and ``imputed=True``.
    """
    subj = scene.instance(pair.subject_id)
    obj = scene.instance(pair.object_id)
    if not 0 <= obj.category_id < len(cluster.assignment):
        raise ValueError(f"category {obj.category_id} has no group in the cluster model")
    h, w = float(scene.height), float(scene.width)
    sb, ob = subj.box, obj.box
    if depth_stats is None and depth is not None:
        depth_stats = scene_depth_stats(scene, depth)
    s_stats = depth_stats.get(subj.instance_id) if depth_stats else None
    o_stats = depth_stats.get(obj.instance_id) if depth_stats else None
    if s_stats is not None and o_stats is not None and s_stats.valid and o_stats.valid:
        dvals = (s_stats.mean, s_stats.median, o_stats.mean, o_stats.median)
        imputed = False
    else:
        dvals = (DEPTH_IMPUTE,) * 4
        imputed = True
    return PairFeatures(
        d_y1=(sb.y1 - ob.y1) / h,
        d_x1=(sb.x1 - ob.x1) / w,
        d_y2=(sb.y2 - ob.y2) / h,
        d_x2=(sb.x2 - ob.x2) / w,
        overlap=box_iou(sb, ob),
        group_id=cluster.group_of(obj.category_id),
        subj_mean=dvals[0],
        subj_median=dvals[1],
        obj_mean=dvals[2],
        obj_median=dvals[3],
        imputed=imputed,
    )


def scene_features(scene: SceneRecord, vocab: LabelVocabulary, cluster: ClusterModel,
                   depth: DepthRaster | None = None):
    """Candidates of one scene together with their feature vectors."""
    pairs = generate_candidates(scene, vocab)
    stats = scene_depth_stats(scene, depth) if depth is not None else None
    return [(p, assemble_features(p, scene, cluster, depth_stats=stats)) for p in pairs]


def design_matrix(features: Sequence[PairFeatures], n_groups: int) -> np.ndarray:
    """Numeric matrix for the tree learner, with the group id one-hot encoded.

    Columns: the four box differences, overlap, the four depth statistics,
    then ``n_groups`` indicator columns.
    """
    X = np.zeros((len(features), 9 + n_groups))
    for i, f in enumerate(features):
        X[i, :9] = (f.d_y1, f.d_x1, f.d_y2, f.d_x2, f.overlap,
                    f.subj_mean, f.subj_median, f.obj_mean, f.obj_median)
        X[i, 9 + f.group_id] = 1.0
    return X


def features_csv(rows: Iterable[tuple[CandidatePair, PairFeatures]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for pair, f in rows:
        writer.writerow([pair.scene_id, pair.subject_id, pair.object_id,
                         *(repr(float(v)) if isinstance(v, float) else v for v in f.values()),
                         "" if pair.label is None else pair.label])
    return buf.getvalue()
