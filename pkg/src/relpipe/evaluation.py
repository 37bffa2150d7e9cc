"""IoU-thresholded relation accuracy.

Metric convention (the absolute numbers depend on it):

* predicted instances are matched to ground truth greedily, same category
  only, in descending IoU order, accepting a pair when IoU >= threshold;
* a ground-truth triple is a hit when some predicted triple maps onto it
  through the matching and carries the same relation id;
* accuracy is recall over ground-truth triples, pooled over scenes.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .dataset_io import Instance, RelationTriple, SceneRecord, mask_iou
from .features import box_iou

METRIC_NOTE = ("metric: recall over ground-truth triples; greedy same-category "
               "instance matching at IoU >= threshold")


@dataclass(frozen=True)
class EvalConfig:
    thresholds: tuple[float, ...] = (0.25, 0.5, 0.75)
    matching: str = "mask"

    def __post_init__(self):
        t = tuple(float(x) for x in self.thresholds)
        if not t or any(not 0 < x <= 1 for x in t) or any(b <= a for a, b in zip(t, t[1:])):
            raise ValueError(f"thresholds must be strictly increasing in (0, 1]: {t}")
        if self.matching not in ("mask", "box"):
            raise ValueError(f"matching must be 'mask' or 'box', got {self.matching!r}")
        object.__setattr__(self, "thresholds", t)

    @property
    def columns(self) -> tuple[str, ...]:
        return tuple(f"iou_{t:g}" for t in self.thresholds) + ("average",)


@dataclass(frozen=True)
class EvalReport:
    thresholds: tuple[float, ...]
    accuracy: tuple[float, ...]
    matched_instances: tuple[int, ...]
    hits: tuple[int, ...]
    total_triples: int
    per_scene: tuple[dict, ...] = field(default=(), compare=False)

    @property
    def average(self) -> float:
        return sum(self.accuracy) / len(self.accuracy)

    def row(self) -> tuple[float, ...]:
        return self.accuracy + (self.average,)


def instance_iou(a: Instance, b: Instance, matching: str = "mask") -> float:
    if matching == "box":
        return box_iou(a.box, b.box)
    return mask_iou(a.mask, b.mask)


def pairwise_ious(predicted: Sequence[Instance], truth: Sequence[Instance],
                  matching: str = "mask") -> list[tuple[float, int, int]]:
    """(iou, predicted id, truth id) for every same-category pair with IoU > 0."""
    out = []
    for p in predicted:
        for t in truth:
            if p.category_id == t.category_id:
                iou = instance_iou(p, t, matching)
                if iou > 0:
                    out.append((iou, p.instance_id, t.instance_id))
    return out


def greedy_match(ious: Iterable[tuple[float, int, int]], threshold: float) -> dict[int, int]:
    matched: dict[int, int] = {}
    used = set()
    for iou, pid, tid in sorted(ious, key=lambda e: (-e[0], e[1], e[2])):
        if iou < threshold:
            break
        if pid not in matched and tid not in used:
            matched[pid] = tid
            used.add(tid)
    return matched


def match_instances(predicted: Sequence[Instance], truth: Sequence[Instance],
                    threshold: float, matching: str = "mask") -> dict[int, int]:
    """Partial bijection predicted id -> truth id."""
    return greedy_match(pairwise_ious(predicted, truth, matching), threshold)


def relation_hits(pred_triples: Iterable[RelationTriple], truth_triples: Sequence[RelationTriple],
                  matching: Mapping[int, int]) -> int:
    mapped = {
        (matching[p.subject_id], matching[p.object_id], p.relation_id)
        for p in pred_triples
        if p.subject_id in matching and p.object_id in matching
    }
    return sum((t.subject_id, t.object_id, t.relation_id) in mapped for t in truth_triples)


def relation_accuracy(pred_triples, truth_triples, matching) -> float:
    """Fraction of ``truth_triples`` hit; 0.0 when there are none."""
    truth_triples = list(truth_triples)
    if not truth_triples:
        return 0.0
    return relation_hits(pred_triples, truth_triples, matching) / len(truth_triples)


def evaluate(predictions: Mapping[str, Sequence[RelationTriple]],
             detections: Sequence[SceneRecord], truth: Sequence[SceneRecord],
             config: EvalConfig = EvalConfig()) -> EvalReport:
    """Score predicted triples, which reference ``detections`` ids, against ``truth``.

    Scenes are paired by ``scene_id``; a truth scene without detections or
    predictions still counts its triples as misses.
    """
    det_by_id = {s.scene_id: s for s in detections}
    nt = len(config.thresholds)
    hits = [0] * nt
    matched = [0] * nt
    total = 0
    per_scene = []
    for scene in sorted(truth, key=lambda s: s.scene_id):
        n_truth = len(scene.triples)
        if n_truth == 0:
            continue
        total += n_truth
        det = det_by_id.get(scene.scene_id)
        preds = predictions.get(scene.scene_id, ())
        ious = pairwise_ious(det.instances, scene.instances, config.matching) if det else []
        row = {"scene_id": scene.scene_id, "triples": n_truth}
        for j, t in enumerate(config.thresholds):
            m = greedy_match(ious, t)
            h = relation_hits(preds, scene.triples, m)
            hits[j] += h
            matched[j] += len(m)
            row[f"hits@{t:g}"] = h
        per_scene.append(row)
    accuracy = tuple(h / total if total else 0.0 for h in hits)
    return EvalReport(config.thresholds, accuracy, tuple(matched), tuple(hits), total,
                      tuple(per_scene))


def report_csv(reports: Mapping[str, EvalReport], config: EvalConfig = EvalConfig()) -> str:
    """Rows are configurations; columns are per-threshold accuracies and their mean."""
    buf = io.StringIO()
    buf.write(f"# {METRIC_NOTE}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("config",) + config.columns)
    for name, rep in reports.items():
        writer.writerow([name, *(f"{v:.6f}" for v in rep.row())])
    return buf.getvalue()


def per_scene_csv(report: EvalReport) -> str:
    buf = io.StringIO()
    if report.per_scene:
        writer = csv.DictWriter(buf, fieldnames=list(report.per_scene[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(report.per_scene)
    return buf.getvalue()
