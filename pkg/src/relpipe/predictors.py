"""Per-group routing between frequency-based and boosted relation prediction."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .boosting import BoostedModel, BoostingParams, softmax, train_boosted
from .clustering import ClusterModel
from .dataset_io import DepthRaster, LabelVocabulary, SceneRecord
from .errors import ModelError
from .features import CandidatePair, PairFeatures, design_matrix, scene_features

FREQ_SAMPLE = "frequency_sample"
FREQ_ARGMAX = "frequency_argmax"
BOOSTED = "boosted"


@dataclass(frozen=True)
class RoutingRule:
    geometric_mass_threshold: float = 0.5
    imbalance_threshold: float = 0.8

    def __post_init__(self):
        for name in ("geometric_mass_threshold", "imbalance_threshold"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")

    def route(self, distribution: np.ndarray, geometric: np.ndarray) -> str:
        # imbalance is checked first: a dominated group gains nothing from a classifier
        if distribution.max() >= self.imbalance_threshold:
            return FREQ_ARGMAX
        if distribution[geometric].sum() > self.geometric_mass_threshold:
            return BOOSTED
        return FREQ_SAMPLE


def route_groups(cluster: ClusterModel, vocab: LabelVocabulary,
                 rule: RoutingRule = RoutingRule()) -> ClusterModel:
    geometric = np.asarray(vocab.geometric_flags, dtype=bool)
    return cluster.with_routing(rule.route(d, geometric) for d in cluster.group_distribution)


@dataclass(frozen=True)
class FrequencyModel:
    distributions: np.ndarray          # (groups, relations)
    modes: tuple[str, ...]

    def __post_init__(self):
        dist = np.asarray(self.distributions, dtype=np.float64)
        if not np.allclose(dist.sum(axis=1), 1.0, atol=1e-9, rtol=0):
            raise ValueError("group distributions must sum to 1")
        object.__setattr__(self, "distributions", dist)
        object.__setattr__(self, "_cdf", np.cumsum(dist, axis=1))

    @classmethod
    def from_cluster(cls, cluster: ClusterModel, mode: str | None = None) -> "FrequencyModel":
        """Use the cluster routing for modes, or force every group to ``mode``."""
        if mode is None:
            if cluster.routing is None:
                raise ValueError("cluster model has no routing; pass a mode")
            modes = tuple("sample" if r == FREQ_SAMPLE else "argmax" for r in cluster.routing)
        else:
            if mode not in ("sample", "argmax"):
                raise ValueError(f"unknown frequency mode {mode!r}")
            modes = (mode,) * cluster.k
        return cls(cluster.group_distribution, modes)


def keyed_uniform(key: tuple, seed: int) -> float:
    """Uniform draw in [0, 1) determined only by ``key`` and ``seed``."""
    text = "\x1f".join(str(p) for p in (seed, *key)).encode("utf-8")
    word = int.from_bytes(hashlib.blake2b(text, digest_size=8).digest(), "little")
    return (word >> 11) / float(1 << 53)


def frequency_predict(model: FrequencyModel, group_id: int, mode: str | None = None,
                      key: tuple = (), seed: int = 0) -> int:
    mode = mode or model.modes[group_id]
    dist = model.distributions[group_id]
    if mode == "argmax":
        return int(np.argmax(dist))
    if mode != "sample":
        raise ValueError(f"unknown frequency mode {mode!r}")
    cdf = model._cdf[group_id]
    u = keyed_uniform(key, seed) * cdf[-1]
    return int(np.searchsorted(cdf, u, side="right"))


def train_boosted_for_groups(pairs: Sequence[CandidatePair], features: Sequence[PairFeatures],
                             cluster: ClusterModel, params: BoostingParams = BoostingParams(),
                             threads: int = 1) -> BoostedModel:
    """Train one global model on labeled pairs whose object group routes to boosting."""
    if cluster.routing is None:
        raise ValueError("cluster model has no routing")
    rows = [i for i, (p, f) in enumerate(zip(pairs, features))
            if p.label is not None and cluster.routing[f.group_id] == BOOSTED]
    X = design_matrix([features[i] for i in rows], cluster.k)
    y = np.array([pairs[i].label for i in rows], dtype=np.int64)
    return train_boosted(X, y, params, threads=threads)


def boosted_predict(model: BoostedModel, features: PairFeatures | Sequence[PairFeatures]):
    """Relation id and class-probability vector (over ``model.classes``) per input."""
    single = isinstance(features, PairFeatures)
    feats = [features] if single else list(features)
    n_groups = model.n_features - 9
    bad = [f.group_id for f in feats if not 0 <= f.group_id < n_groups]
    if bad:
        raise ValueError(f"group id {bad[0]} outside the model's {n_groups} groups")
    X = design_matrix(feats, n_groups) if feats else np.zeros((0, model.n_features))
    F = model.decision_function(X)
    P = softmax(F)
    ids = np.asarray(model.classes, dtype=np.int64)[np.argmax(F, axis=1)]
    if single:
        return int(ids[0]), P[0]
    return ids, P


def predict_scene(scene: SceneRecord, vocab: LabelVocabulary, cluster: ClusterModel,
                  freq_model: FrequencyModel, boosted_model: BoostedModel | None = None,
                  depth: DepthRaster | None = None, seed: int = 0) -> list[tuple[CandidatePair, int]]:
    """Predict one relation per candidate pair, dispatching on the object's group route."""
    if cluster.routing is None:
        raise ValueError("cluster model has no routing")
    if boosted_model is None and BOOSTED in cluster.routing:
        raise ModelError("a group routes to the boosted model but none was supplied")
    rows = scene_features(scene, vocab, cluster, depth if BOOSTED in cluster.routing else None)
    out: list[tuple[CandidatePair, int] | None] = [None] * len(rows)
    boosted_rows = []
    for i, (pair, f) in enumerate(rows):
        route = cluster.routing[f.group_id]
        if route == BOOSTED:
            boosted_rows.append(i)
        else:
            mode = "sample" if route == FREQ_SAMPLE else "argmax"
            out[i] = (pair, frequency_predict(freq_model, f.group_id, mode, pair.key, seed))
    if boosted_rows:
        ids, _ = boosted_predict(boosted_model, [rows[i][1] for i in boosted_rows])
        for i, rel in zip(boosted_rows, ids):
            out[i] = (rows[i][0], int(rel))
    return out
