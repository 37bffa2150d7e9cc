"""Synthetic scenes with planted label families and a planted depth rule.

Object categories are grouped into families that share a relation
template.  With probability ``rho`` a human-object relation ignores the
template and follows depth order instead: ``in-front-of`` when the human is
nearer (smaller depth), ``behind`` otherwise.  Instance depth is drawn
independently of box geometry, so only the depth raster reveals it.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ._fileio import atomic_write_text
from .dataset_io import (BoundingBox, DepthRaster, Instance, LabelVocabulary, RelationTriple,
                         SceneRecord, encode_mask, write_dataset, write_depth)

DEFAULT_RELATIONS = (
    ("in-front-of", True), ("behind", True), ("next-to", True), ("on", True),
    ("hold", False), ("ride", False), ("look-at", False), ("carry", False),
    ("use", False), ("talk-to", False),
)
FRONT, BEHIND = "in-front-of", "behind"
BACKGROUND_DEPTH = 15.0
DETECTION_ID_OFFSET = 1000


@dataclass(frozen=True)
class FamilySpec:
    template: tuple[float, ...]
    n_categories: int

    def __post_init__(self):
        t = np.asarray(self.template, dtype=np.float64)
        if np.any(t < 0) or not np.isclose(t.sum(), 1.0, atol=1e-9):
            raise ValueError("family template must be a probability distribution")
        if self.n_categories < 1:
            raise ValueError("a family needs at least one category")


def dominant_template(dominant: int, n_relations: int, mass: float = 0.85) -> tuple[float, ...]:
    """Put ``mass`` on one relation and spread the rest evenly."""
    rest = (1.0 - mass) / (n_relations - 1)
    t = [rest] * n_relations
    t[dominant] = mass
    return tuple(t)


@dataclass(frozen=True)
class SynthSpec:
    seed: int
    n_scenes: int
    families: tuple[FamilySpec, ...]
    n_val_scenes: int = 0
    image_size: tuple[int, int] = (48, 64)
    rho: float = 0.0
    noise: float = 0.0            # detection box jitter, as a fraction of box size
    dropout: float = 0.0          # per-pixel mask dropout
    humans: tuple[int, int] = (1, 2)
    objects: tuple[int, int] = (2, 4)
    label_prob: float = 1.0
    with_depth: bool = True
    depth_range: tuple[float, float] = (1.0, 10.0)
    human_depth_range: tuple[float, float] | None = None   # defaults to depth_range
    relations: tuple[tuple[str, bool], ...] = DEFAULT_RELATIONS

    def __post_init__(self):
        if not 0 <= self.rho <= 1:
            raise ValueError("rho must lie in [0, 1]")
        if not self.families:
            raise ValueError("at least one family is required")
        for f in self.families:
            if len(f.template) != len(self.relations):
                raise ValueError("family template length differs from relation count")
        if self.humans[0] < 1 or self.humans[0] > self.humans[1]:
            raise ValueError("every scene needs at least one human")
        if self.objects[0] < 0 or self.objects[0] > self.objects[1]:
            raise ValueError("invalid object count range")
        for r in (self.depth_range, self.human_depth_range or self.depth_range):
            if not 0 < r[0] <= r[1] < BACKGROUND_DEPTH:
                raise ValueError(f"depth range {r} must lie inside (0, {BACKGROUND_DEPTH})")

    @classmethod
    def from_json(cls, obj: dict) -> "SynthSpec":
        obj = dict(obj)
        relations = tuple((str(n), bool(g)) for n, g in obj.pop("relations", DEFAULT_RELATIONS))
        families = []
        for f in obj.pop("families"):
            if "template" in f:
                template = tuple(float(v) for v in f["template"])
            else:
                names = [r[0] for r in relations]
                template = dominant_template(names.index(f["dominant"]), len(relations),
                                             float(f.get("mass", 0.85)))
            families.append(FamilySpec(template, int(f["n_categories"])))
        for key in ("image_size", "humans", "objects"):
            if key in obj:
                obj[key] = tuple(int(v) for v in obj[key])
        for key in ("depth_range", "human_depth_range"):
            if obj.get(key) is not None:
                obj[key] = tuple(float(v) for v in obj[key])
        return cls(families=tuple(families), relations=relations, **obj)

    def to_json(self) -> dict:
        out = asdict(self)
        out["families"] = [{"template": list(f.template), "n_categories": f.n_categories}
                           for f in self.families]
        out["relations"] = [list(r) for r in self.relations]
        return out


@dataclass
class SynthDataset:
    vocab: LabelVocabulary
    train: list[SceneRecord]
    val: list[SceneRecord]
    val_detections: list[SceneRecord]
    depth: dict[str, DepthRaster] = field(repr=False)
    planted: dict = field(repr=False)


def build_vocabulary(spec: SynthSpec):
    """Vocabulary plus the family index of every category (human is in family 0)."""
    names = []
    family_of = []
    for f, fam in enumerate(spec.families):
        for j in range(fam.n_categories):
            names.append("human" if (f == 0 and j == 0) else f"fam{f}_obj{j}")
            family_of.append(f)
    vocab = LabelVocabulary(
        object_categories=tuple(names),
        human_index=0,
        relation_labels=tuple(r[0] for r in spec.relations),
        geometric_flags=tuple(r[1] for r in spec.relations),
    )
    return vocab, family_of


def _random_box(rng, H, W):
    hh = int(rng.integers(max(H // 6, 2), max(H // 2, 3) + 1))
    ww = int(rng.integers(max(W // 6, 2), max(W // 2, 3) + 1))
    y1 = int(rng.integers(0, H - hh + 1))
    x1 = int(rng.integers(0, W - ww + 1))
    return y1, x1, y1 + hh, x1 + ww


def _rect_mask(H, W, y1, x1, y2, x2, dropout, rng):
    grid = np.zeros((H, W), dtype=bool)
    grid[y1:y2, x1:x2] = True
    if dropout > 0:
        grid &= rng.random((H, W)) >= dropout
    return encode_mask(grid)


def _jitter_box(rng, box, noise, H, W):
    y1, x1, y2, x2 = box
    hh, ww = y2 - y1, x2 - x1
    d = rng.normal(0.0, noise, size=4) * np.array([hh, ww, hh, ww])
    ny1 = int(np.clip(round(y1 + d[0]), 0, H - 1))
    nx1 = int(np.clip(round(x1 + d[1]), 0, W - 1))
    ny2 = int(np.clip(round(y2 + d[2]), ny1 + 1, H))
    nx2 = int(np.clip(round(x2 + d[3]), nx1 + 1, W))
    return ny1, nx1, ny2, nx2


def _make_scene(spec, vocab, family_of, members, scene_id, rng, det_rng, depth_name):
    H, W = spec.image_size
    R = vocab.n_relations
    front, behind = vocab.relation_id(FRONT), vocab.relation_id(BEHIND)
    n_h = int(rng.integers(spec.humans[0], spec.humans[1] + 1))
    n_o = int(rng.integers(spec.objects[0], spec.objects[1] + 1))
    cats = [vocab.human_index] * n_h
    for _ in range(n_o):
        fam = int(rng.integers(len(spec.families)))
        cats.append(int(rng.choice(members[fam])))
    boxes = [_random_box(rng, H, W) for _ in cats]
    lo, hi = spec.depth_range
    hlo, hhi = spec.human_depth_range or spec.depth_range
    depths = np.where(np.asarray(cats) == vocab.human_index,
                      rng.uniform(hlo, hhi, size=len(cats)),
                      rng.uniform(lo, hi, size=len(cats)))
    instances = []
    for i, (c, b) in enumerate(zip(cats, boxes)):
        mask = _rect_mask(H, W, *b, spec.dropout, rng)
        instances.append(Instance(i + 1, c, BoundingBox(*map(float, b)), mask))

    triples = []
    templates = [np.asarray(f.template) for f in spec.families]
    humans = [i for i, c in enumerate(cats) if c == vocab.human_index]
    for h in humans:
        for o in range(len(cats)):
            if o == h or rng.random() >= spec.label_prob:
                continue
            if rng.random() < spec.rho and depths[h] != depths[o]:
                rel = front if depths[h] < depths[o] else behind
            else:
                rel = int(rng.choice(R, p=templates[family_of[cats[o]]]))
            triples.append(RelationTriple(h + 1, o + 1, rel))

    raster = None
    if spec.with_depth:
        values = BACKGROUND_DEPTH + rng.normal(0.0, 0.05, size=(H, W))
        for i in np.argsort(-depths, kind="stable"):
            y1, x1, y2, x2 = boxes[i]
            values[y1:y2, x1:x2] = depths[i] + rng.normal(0.0, 0.05, size=(y2 - y1, x2 - x1))
        raster = DepthRaster(H, W, values.astype(np.float32))

    depth_path = f"depth/{depth_name}.reldepth" if raster is not None else None
    scene = SceneRecord(scene_id, H, W, tuple(instances), tuple(triples), depth_path)
    if det_rng is None:
        return scene, None, raster

    det_instances = []
    for i, (c, b) in enumerate(zip(cats, boxes)):
        jb = _jitter_box(det_rng, b, spec.noise, H, W) if spec.noise > 0 else b
        mask = _rect_mask(H, W, *jb, 0.0, det_rng)
        det_instances.append(Instance(DETECTION_ID_OFFSET + i + 1, c,
                                      BoundingBox(*map(float, jb)), mask))
    detections = SceneRecord(scene_id, H, W, tuple(det_instances), (), depth_path)
    return scene, detections, raster


def generate(spec: SynthSpec, out_dir=None) -> SynthDataset:
    """Generate the dataset in memory, and write it under ``out_dir`` if given.

    Every scene draws from its own generator keyed by (seed, split, index),
    so output is independent of generation order.
    """
    vocab, family_of = build_vocabulary(spec)
    members = [[c for c, f in enumerate(family_of) if f == fam] for fam in range(len(spec.families))]
    train, val, val_det = [], [], []
    depth = {}
    for split, count, sink in ((0, spec.n_scenes, train), (1, spec.n_val_scenes, val)):
        prefix = "train" if split == 0 else "val"
        for i in range(count):
            sid = f"{prefix}_{i:05d}"
            rng = np.random.default_rng([spec.seed, split, i, 0])
            det_rng = np.random.default_rng([spec.seed, split, i, 1]) if split == 1 else None
            scene, det, raster = _make_scene(spec, vocab, family_of, members, sid, rng, det_rng, sid)
            sink.append(scene)
            if split == 1:
                val_det.append(det)
            if raster is not None:
                depth[sid] = raster
    planted = {
        "seed": spec.seed,
        "rho": spec.rho,
        "families": members,
        "category_family": family_of,
        "templates": [list(f.template) for f in spec.families],
        "rule": f"{FRONT} if subject depth < object depth else {BEHIND}",
        "depth_convention": "smaller value is nearer",
    }
    ds = SynthDataset(vocab, train, val, val_det, depth, planted)
    if out_dir is not None:
        write_synth(ds, spec, out_dir)
    return ds


def write_synth(ds: SynthDataset, spec: SynthSpec, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_dataset(out, ds.train, "train", vocab=ds.vocab)
    if ds.val:
        write_dataset(out, ds.val, "val")
        write_dataset(out, ds.val_detections, "val_detections")
    for sid in sorted(ds.depth):
        write_depth(out / "depth" / f"{sid}.reldepth", ds.depth[sid])
    atomic_write_text(out / "planted.json", json.dumps(ds.planted, indent=2) + "\n")
    atomic_write_text(out / "synth_spec.json", json.dumps(spec.to_json(), indent=2) + "\n")
    return out


def family_spec_list(dominants: Sequence[int], sizes: Sequence[int], n_relations: int,
                     mass: float = 0.85) -> tuple[FamilySpec, ...]:
    return tuple(FamilySpec(dominant_template(d, n_relations, mass), s)
                 for d, s in zip(dominants, sizes))
