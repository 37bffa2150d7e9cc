"""On-disk dataset formats and the in-memory scene records built from them.

Layout of a dataset directory::

    root/
      <split>.jsonl          one scene per line
      depth/<scene>.reldepth depth rasters referenced by ``depth_path``

Masks are stored as row-major run lengths that start with a background run,
so ``[0, 6]`` on a 2x3 image is fully foreground.  Depth rasters are a small
binary container: the magic ``RELDEPTH``, height and width as little-endian
uint32, then ``height * width`` little-endian float32 values.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ._fileio import atomic_write_bytes
from .errors import DataParseError, DataValidationError

DEPTH_MAGIC = b"RELDEPTH"
_DEPTH_HEADER = struct.Struct("<8sII")
BOX_TOLERANCE = 1.0


@dataclass(frozen=True)
class LabelVocabulary:
    object_categories: tuple[str, ...]
    human_index: int
    relation_labels: tuple[str, ...]
    geometric_flags: tuple[bool, ...]

    def __post_init__(self):
        if len(set(self.object_categories)) != len(self.object_categories):
            raise DataValidationError("duplicate object category names")
        if len(set(self.relation_labels)) != len(self.relation_labels):
            raise DataValidationError("duplicate relation names")
        if len(self.geometric_flags) != len(self.relation_labels):
            raise DataValidationError("geometric_flags length differs from relation_labels")
        if not 0 <= self.human_index < len(self.object_categories):
            raise DataValidationError("human category index out of range")

    @property
    def n_categories(self) -> int:
        return len(self.object_categories)

    @property
    def n_relations(self) -> int:
        return len(self.relation_labels)

    def relation_id(self, name: str) -> int:
        return self.relation_labels.index(name)

    def category_id(self, name: str) -> int:
        return self.object_categories.index(name)

    def to_json(self) -> dict:
        return {
            "object_categories": [
                {"name": n, "is_human": i == self.human_index}
                for i, n in enumerate(self.object_categories)
            ],
            "relations": [
                {"name": n, "is_geometric": bool(g)}
                for n, g in zip(self.relation_labels, self.geometric_flags)
            ],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "LabelVocabulary":
        cats = obj["object_categories"]
        humans = [i for i, c in enumerate(cats) if c.get("is_human", False)]
        if len(humans) != 1:
            raise DataValidationError(
                f"exactly one category must be human, found {len(humans)}"
            )
        rels = obj["relations"]
        return cls(
            object_categories=tuple(str(c["name"]) for c in cats),
            human_index=humans[0],
            relation_labels=tuple(str(r["name"]) for r in rels),
            geometric_flags=tuple(bool(r.get("is_geometric", False)) for r in rels),
        )


@dataclass(frozen=True)
class BoundingBox:
    y1: float
    x1: float
    y2: float
    x2: float

    @property
    def area(self) -> float:
        return max(self.y2 - self.y1, 0.0) * max(self.x2 - self.x1, 0.0)

    def as_list(self) -> list[float]:
        return [self.y1, self.x1, self.y2, self.x2]


@dataclass(frozen=True)
class InstanceMask:
    height: int
    width: int
    runs: tuple[int, ...]

    def __post_init__(self):
        if any(r < 0 for r in self.runs):
            raise DataValidationError("negative run length in mask")
        if sum(self.runs) != self.height * self.width:
            raise DataValidationError(
                f"mask runs sum to {sum(self.runs)}, expected {self.height * self.width}"
            )

    @property
    def area(self) -> int:
        return int(sum(self.runs[1::2]))


@dataclass(frozen=True)
class Instance:
    instance_id: int
    category_id: int
    box: BoundingBox
    mask: InstanceMask


@dataclass(frozen=True)
class RelationTriple:
    subject_id: int
    object_id: int
    relation_id: int


@dataclass(frozen=True)
class SceneRecord:
    scene_id: str
    height: int
    width: int
    instances: tuple[Instance, ...]
    triples: tuple[RelationTriple, ...] = ()
    depth_path: str | None = None
    _by_id: dict = field(default=None, init=False, repr=False, compare=False)

    def instance(self, instance_id: int) -> Instance:
        if self._by_id is None:
            object.__setattr__(self, "_by_id", {i.instance_id: i for i in self.instances})
        return self._by_id[instance_id]


@dataclass(frozen=True)
class DepthRaster:
    height: int
    width: int
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.size != self.height * self.width:
            raise DataValidationError(
                f"depth raster has {values.size} values, expected {self.height * self.width}"
            )
        if not np.all(np.isfinite(values)):
            raise DataValidationError("depth raster contains non-finite values")
        values = values.reshape(self.height, self.width)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)


# -- masks -----------------------------------------------------------------


def encode_mask(grid) -> InstanceMask:
    """Run-length encode a 2-D binary grid (row-major, background first)."""
    grid = np.asarray(grid)
    if grid.ndim != 2:
        raise ValueError("mask grid must be 2-D")
    h, w = grid.shape
    flat = grid.reshape(-1).astype(bool)
    if flat.size == 0:
        return InstanceMask(h, w, ())
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs.insert(0, 0)
    return InstanceMask(h, w, tuple(int(r) for r in runs))


def decode_mask(mask: InstanceMask) -> np.ndarray:
    """Expand run lengths into a boolean ``(height, width)`` array."""
    total = sum(mask.runs)
    if total != mask.height * mask.width:
        raise DataValidationError(
            f"mask runs sum to {total}, expected {mask.height * mask.width}"
        )
    values = np.arange(len(mask.runs)) % 2 == 1
    flat = np.repeat(values, np.asarray(mask.runs, dtype=np.int64))
    return flat.reshape(mask.height, mask.width)


def mask_iou(a: InstanceMask, b: InstanceMask) -> float:
    """Intersection over union of two masks; 0.0 when both are empty."""
    if (a.height, a.width) != (b.height, b.width):
        raise ValueError(
            f"mask dimensions differ: {a.height}x{a.width} vs {b.height}x{b.width}"
        )
    da, db = decode_mask(a), decode_mask(b)
    union = np.count_nonzero(da | db)
    if union == 0:
        return 0.0
    return np.count_nonzero(da & db) / union


# -- depth rasters ---------------------------------------------------------


def write_depth(path, raster: DepthRaster) -> None:
    header = _DEPTH_HEADER.pack(DEPTH_MAGIC, raster.height, raster.width)
    body = np.ascontiguousarray(raster.values, dtype="<f4").tobytes()
    atomic_write_bytes(path, header + body)


def read_depth(path) -> DepthRaster:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < _DEPTH_HEADER.size:
        raise DataParseError(path, 0, "truncated depth header")
    magic, h, w = _DEPTH_HEADER.unpack_from(data)
    if magic != DEPTH_MAGIC:
        raise DataParseError(path, 0, f"bad magic {magic!r}")
    expected = _DEPTH_HEADER.size + 4 * h * w
    if len(data) != expected:
        raise DataParseError(
            path, min(len(data), expected), f"expected {expected} bytes, found {len(data)}"
        )
    values = np.frombuffer(data, dtype="<f4", offset=_DEPTH_HEADER.size)
    try:
        return DepthRaster(h, w, values)
    except DataValidationError as exc:
        raise DataParseError(path, _DEPTH_HEADER.size, str(exc)) from None


# -- scenes ----------------------------------------------------------------


def load_vocabulary(path) -> LabelVocabulary:
    path = Path(path)
    text = path.read_bytes().decode("utf-8", "replace")
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DataParseError(path, len(text[: exc.pos].encode("utf-8")), exc.msg) from None
    try:
        return LabelVocabulary.from_json(obj)
    except (KeyError, TypeError) as exc:
        raise DataParseError(path, 0, f"malformed vocabulary: {exc!r}") from None


def write_vocabulary(path, vocab: LabelVocabulary) -> None:
    text = json.dumps(vocab.to_json(), indent=2) + "\n"
    atomic_write_bytes(path, text.encode("utf-8"))


def scene_to_json(scene: SceneRecord) -> dict:
    return {
        "scene_id": scene.scene_id,
        "height": scene.height,
        "width": scene.width,
        "depth_path": scene.depth_path,
        "instances": [
            {
                "instance_id": inst.instance_id,
                "category_id": inst.category_id,
                "box": inst.box.as_list(),
                "mask": list(inst.mask.runs),
            }
            for inst in scene.instances
        ],
        "triples": [
            {"subject_id": t.subject_id, "object_id": t.object_id, "relation_id": t.relation_id}
            for t in scene.triples
        ],
    }


def scene_from_json(obj: dict) -> SceneRecord:
    h, w = int(obj["height"]), int(obj["width"])
    instances = tuple(
        Instance(
            instance_id=int(i["instance_id"]),
            category_id=int(i["category_id"]),
            box=BoundingBox(*(float(v) for v in i["box"])),
            mask=InstanceMask(h, w, tuple(int(r) for r in i["mask"])),
        )
        for i in obj["instances"]
    )
    triples = tuple(
        RelationTriple(int(t["subject_id"]), int(t["object_id"]), int(t["relation_id"]))
        for t in obj.get("triples", ())
    )
    depth_path = obj.get("depth_path")
    return SceneRecord(
        scene_id=str(obj["scene_id"]),
        height=h,
        width=w,
        instances=instances,
        triples=triples,
        depth_path=None if depth_path is None else str(depth_path),
    )


def validate_scene(scene: SceneRecord, vocab: LabelVocabulary) -> None:
    """Raise :class:`DataValidationError` on the first broken invariant."""
    sid = scene.scene_id
    ids = [i.instance_id for i in scene.instances]
    if len(set(ids)) != len(ids):
        raise DataValidationError("duplicate instance ids", scene_id=sid)
    by_id = {}
    for inst in scene.instances:
        iid = inst.instance_id
        by_id[iid] = inst
        if not 0 <= inst.category_id < vocab.n_categories:
            raise DataValidationError(
                f"category id {inst.category_id} out of range", sid, iid
            )
        if (inst.mask.height, inst.mask.width) != (scene.height, scene.width):
            raise DataValidationError("mask size differs from image size", sid, iid)
        b = inst.box
        if not (b.y1 <= b.y2 and b.x1 <= b.x2):
            raise DataValidationError(f"inverted box {b.as_list()}", sid, iid)
        if min(b.y1, b.x1) < 0 or b.y2 > scene.height or b.x2 > scene.width:
            raise DataValidationError(f"box {b.as_list()} outside image", sid, iid)
        grid = decode_mask(inst.mask)
        rows = np.flatnonzero(grid.any(axis=1))
        if rows.size:
            cols = np.flatnonzero(grid.any(axis=0))
            tol = BOX_TOLERANCE
            if (
                rows[0] < b.y1 - tol
                or rows[-1] + 1 > b.y2 + tol
                or cols[0] < b.x1 - tol
                or cols[-1] + 1 > b.x2 + tol
            ):
                raise DataValidationError("box does not enclose mask", sid, iid)
    for t in scene.triples:
        if t.subject_id not in by_id or t.object_id not in by_id:
            missing = t.subject_id if t.subject_id not in by_id else t.object_id
            raise DataValidationError(
                "triple references a missing instance", sid, missing
            )
        if t.subject_id == t.object_id:
            raise DataValidationError("triple subject equals object", sid, t.subject_id)
        if by_id[t.subject_id].category_id != vocab.human_index:
            raise DataValidationError("triple subject is not human", sid, t.subject_id)
        if not 0 <= t.relation_id < vocab.n_relations:
            raise DataValidationError(
                f"relation id {t.relation_id} out of range", sid, t.subject_id
            )


def read_split(path, vocab: LabelVocabulary) -> list[SceneRecord]:
    path = Path(path)
    scenes = []
    offset = 0
    with open(path, "rb") as fh:
        for raw in fh:
            line = raw.strip()
            if line:
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    lead = len(raw) - len(raw.lstrip())
                    pos = len(line.decode("utf-8", "replace")[: exc.pos].encode("utf-8"))
                    raise DataParseError(path, offset + lead + pos, exc.msg) from None
                try:
                    scene = scene_from_json(obj)
                except DataValidationError as exc:
                    raise DataValidationError(
                        str(exc), scene_id=obj.get("scene_id")
                    ) from None
                except (KeyError, TypeError, ValueError) as exc:
                    raise DataParseError(path, offset, f"malformed scene record: {exc!r}") from None
                validate_scene(scene, vocab)
                scenes.append(scene)
            offset += len(raw)
    ids = [s.scene_id for s in scenes]
    if len(set(ids)) != len(ids):
        raise DataValidationError(f"duplicate scene ids in {path.name}")
    scenes.sort(key=lambda s: s.scene_id)
    return scenes


def load_dataset(root, vocab_path, split: str | None = None):
    """Load scenes and the vocabulary.

    With ``split=None`` every ``*.jsonl`` file under ``root`` is read; scene ids
    must then be unique across files.  A missing split file yields no scenes.
    Scenes come back sorted by ``scene_id``.
    """
    root = Path(root)
    vocab = load_vocabulary(vocab_path)
    if split is None:
        files = sorted(root.glob("*.jsonl"))
    else:
        files = [root / f"{split}.jsonl"]
    scenes: list[SceneRecord] = []
    for f in files:
        if f.exists():
            scenes.extend(read_split(f, vocab))
    ids = [s.scene_id for s in scenes]
    if len(set(ids)) != len(ids):
        raise DataValidationError("duplicate scene ids across splits")
    scenes.sort(key=lambda s: s.scene_id)
    return scenes, vocab


def dump_split(scenes: Iterable[SceneRecord]) -> bytes:
    lines = [
        json.dumps(scene_to_json(s), separators=(",", ":"))
        for s in sorted(scenes, key=lambda s: s.scene_id)
    ]
    return ("".join(line + "\n" for line in lines)).encode("utf-8")


def write_dataset(root, scenes: Sequence[SceneRecord], split: str = "train",
                  vocab: LabelVocabulary | None = None, vocab_name: str = "vocab.json") -> Path:
    """Write ``scenes`` as ``root/<split>.jsonl`` (and the vocabulary if given)."""
    root = Path(root)
    target = root / f"{split}.jsonl"
    atomic_write_bytes(target, dump_split(scenes))
    if vocab is not None:
        write_vocabulary(root / vocab_name, vocab)
    return target


def scene_depth(root, scene: SceneRecord) -> DepthRaster | None:
    """Read the depth raster referenced by ``scene``, or None when it has none."""
    if scene.depth_path is None:
        return None
    raster = read_depth(Path(root) / scene.depth_path)
    if (raster.height, raster.width) != (scene.height, scene.width):
        raise DataValidationError("depth raster size differs from image size", scene.scene_id)
    return raster
