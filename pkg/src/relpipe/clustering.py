"""Relation-frequency label clustering.

Each object category is described by the distribution of relations it takes
part in as the object of a human-subject triple.  Categories with similar
distributions are pooled into pseudo-label groups with k-means, which shrinks
the label space and gives rare categories the statistics of their group.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .dataset_io import LabelVocabulary, SceneRecord

log = logging.getLogger(__name__)

MAX_ITER = 300
DEFAULT_RESTARTS = 16
DEFAULT_MAX_SIGMA = 0.15
DEFAULT_MIN_SUPPORT = 50
ROUTING_MODES = ("frequency_sample", "frequency_argmax", "boosted")


@dataclass(frozen=True)
class FrequencyMatrix:
    """Relation counts per object category (rows) and relation (columns)."""

    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        if counts.ndim != 2 or np.any(counts < 0):
            raise ValueError("counts must be a non-negative 2-D array")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)

    @property
    def support(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def clustered(self) -> np.ndarray:
        """Boolean flag per category: True when it has any support."""
        return self.support > 0

    @property
    def normalized(self) -> np.ndarray:
        support = self.support
        out = np.zeros(self.counts.shape, dtype=np.float64)
        nz = support > 0
        out[nz] = self.counts[nz] / support[nz, None]
        return out

    @property
    def n_categories(self) -> int:
        return self.counts.shape[0]

    @property
    def n_relations(self) -> int:
        return self.counts.shape[1]


def build_frequency_matrix(scenes: Sequence[SceneRecord], vocab: LabelVocabulary) -> FrequencyMatrix:
    counts = np.zeros((vocab.n_categories, vocab.n_relations), dtype=np.int64)
    for scene in scenes:
        for t in scene.triples:
            counts[scene.instance(t.object_id).category_id, t.relation_id] += 1
    return FrequencyMatrix(counts)


@dataclass(frozen=True)
class ClusterModel:
    k: int
    assignment: tuple[int, ...]          # group id per category, fallback for unseen ones
    clustered: tuple[bool, ...]
    centroids: np.ndarray
    group_distribution: np.ndarray
    group_support: np.ndarray
    fallback_group: int
    wcss: float = 0.0
    routing: tuple[str, ...] | None = None
    selection_trace: tuple[dict, ...] = ()
    wcss_history: tuple[float, ...] = field(default=(), compare=False)

    def group_of(self, category_id: int) -> int:
        return self.assignment[category_id]

    def members(self, group: int) -> list[int]:
        return [c for c, (g, ok) in enumerate(zip(self.assignment, self.clustered))
                if ok and g == group]

    def with_routing(self, routing: Sequence[str]) -> "ClusterModel":
        routing = tuple(routing)
        if len(routing) != self.k or any(r not in ROUTING_MODES for r in routing):
            raise ValueError(f"invalid routing {routing!r}")
        return replace(self, routing=routing)

    def to_json(self) -> dict:
        return {
            "format": "relpipe.cluster_model",
            "version": 1,
            "k": self.k,
            "assignment": list(self.assignment),
            "clustered": list(self.clustered),
            "fallback_group": self.fallback_group,
            "wcss": self.wcss,
            "centroids": self.centroids.tolist(),
            "group_distribution": self.group_distribution.tolist(),
            "group_support": [int(s) for s in self.group_support],
            "routing": None if self.routing is None else list(self.routing),
            "selection_trace": list(self.selection_trace),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ClusterModel":
        if obj.get("format") != "relpipe.cluster_model":
            raise ValueError("not a cluster model file")
        if obj.get("version") != 1:
            raise ValueError(f"unsupported cluster model version {obj.get('version')}")
        routing = obj.get("routing")
        return cls(
            k=int(obj["k"]),
            assignment=tuple(int(a) for a in obj["assignment"]),
            clustered=tuple(bool(c) for c in obj["clustered"]),
            centroids=np.asarray(obj["centroids"], dtype=np.float64),
            group_distribution=np.asarray(obj["group_distribution"], dtype=np.float64),
            group_support=np.asarray(obj["group_support"], dtype=np.int64),
            fallback_group=int(obj["fallback_group"]),
            wcss=float(obj["wcss"]),
            routing=None if routing is None else tuple(routing),
            selection_trace=tuple(obj.get("selection_trace", ())),
        )


def _sq_dist(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    diff = X[:, None, :] - C[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _kmeans_pp(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = _sq_dist(X, X[chosen])[:, 0]
    for _ in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            rest = np.setdiff1d(np.arange(n), chosen)
            idx = int(rng.choice(rest))
        chosen.append(idx)
        d2 = np.minimum(d2, _sq_dist(X, X[idx:idx + 1])[:, 0])
    return X[chosen].copy()


def _lloyd(X: np.ndarray, k: int, rng: np.random.Generator, max_iter: int = MAX_ITER):
    """One k-means run.  Returns labels, centroids, final WCSS and per-iteration WCSS."""
    C = _kmeans_pp(X, k, rng)
    labels = None
    history = []
    for _ in range(max_iter):
        d2 = _sq_dist(X, C)
        new = np.argmin(d2, axis=1)
        if labels is not None:
            # keep the current cluster on ties so the fixpoint is reachable
            keep = d2[np.arange(len(X)), labels] <= d2[np.arange(len(X)), new]
            new = np.where(keep, labels, new)
            if np.array_equal(new, labels):
                break
        labels = new
        counts = np.bincount(labels, minlength=k)
        for j in np.flatnonzero(counts == 0):
            # reseed an empty cluster with the worst-fit point of a shared cluster
            resid = d2[np.arange(len(X)), labels]
            resid = np.where(counts[labels] > 1, resid, -1.0)
            p = int(np.argmax(resid))
            counts[labels[p]] -= 1
            labels[p] = j
            counts[j] = 1
        for j in range(k):
            C[j] = X[labels == j].mean(axis=0)
        diff = X - C[labels]
        history.append(float(np.einsum("ij,ij->", diff, diff)))
    return labels, C, history[-1] if history else 0.0, history


def _finish_model(matrix: FrequencyMatrix, cat_ids: np.ndarray, labels: np.ndarray,
                  k: int, wcss: float, history=()) -> ClusterModel:
    # canonical group ids: ordered by smallest member category id
    first = {}
    for c, g in sorted(zip(cat_ids.tolist(), labels.tolist())):
        first.setdefault(g, len(first))
    relabeled = np.array([first[g] for g in labels.tolist()], dtype=np.int64)
    X = matrix.normalized
    counts = matrix.counts
    R = matrix.n_relations
    centroids = np.zeros((k, R))
    pooled = np.zeros((k, R), dtype=np.int64)
    for g in range(k):
        members = cat_ids[relabeled == g]
        centroids[g] = X[members].mean(axis=0)
        pooled[g] = counts[members].sum(axis=0)
    support = pooled.sum(axis=1)
    dist = pooled / support[:, None]
    uniform = np.full(R, 1.0 / R)
    fallback = int(np.argmin(((centroids - uniform) ** 2).sum(axis=1)))
    assignment = np.full(matrix.n_categories, fallback, dtype=np.int64)
    assignment[cat_ids] = relabeled
    return ClusterModel(
        k=k,
        assignment=tuple(int(a) for a in assignment),
        clustered=tuple(bool(c) for c in matrix.clustered),
        centroids=centroids,
        group_distribution=dist,
        group_support=support,
        fallback_group=fallback,
        wcss=float(wcss),
        wcss_history=tuple(history),
    )


def kmeans(matrix: FrequencyMatrix, k: int, seed: int, restarts: int = DEFAULT_RESTARTS,
           max_iter: int = MAX_ITER, threads: int = 1) -> ClusterModel:
    """Cluster the normalized rows of ``matrix`` into ``k`` groups.

    Rows are put in a canonical (lexicographic) order before seeding, so the
    partition does not depend on category numbering.  Each restart draws from
    its own child of ``SeedSequence(seed)``; the lowest-WCSS restart wins and
    ties go to the earlier restart.
    """
    cat_ids = np.flatnonzero(matrix.clustered)
    if k < 1 or k > cat_ids.size:
        raise ValueError(f"k={k} must lie in [1, {cat_ids.size}] (clusterable categories)")
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    X = matrix.normalized[cat_ids]
    order = np.lexsort(X.T[::-1])
    Xs = X[order]
    seeds = np.random.SeedSequence(seed).spawn(restarts)

    def run(ss):
        return _lloyd(Xs, k, np.random.default_rng(ss), max_iter)

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            runs = list(pool.map(run, seeds))
    else:
        runs = [run(ss) for ss in seeds]
    best = min(range(restarts), key=lambda r: (runs[r][2], r))
    labels, _, wcss, history = runs[best]
    return _finish_model(matrix, cat_ids[order], labels, k, wcss, history)


def identity_model(matrix: FrequencyMatrix) -> ClusterModel:
    """Every supported category in its own group (the unclustered baseline)."""
    cat_ids = np.flatnonzero(matrix.clustered)
    if cat_ids.size == 0:
        raise ValueError("no category has any support")
    return _finish_model(matrix, cat_ids, np.arange(cat_ids.size), int(cat_ids.size), 0.0)


@dataclass(frozen=True)
class CohesionReport:
    per_cluster_sigma: tuple[float, ...]
    aggregate_sigma: float
    min_group_support: int
    excluded: tuple[int, ...] = ()


def _cosine_distance(v: np.ndarray, m: np.ndarray) -> float:
    return 1.0 - float(v @ m) / (np.linalg.norm(v) * np.linalg.norm(m))


def cohesion(matrix: FrequencyMatrix, model: ClusterModel) -> CohesionReport:
    """Spread of member-to-mean cosine distances within each group.

    Sigma is the population standard deviation of the distances; the
    aggregate weights each group's sigma by its triple support.
    """
    X = matrix.normalized
    sigmas = []
    excluded = []
    for g in range(model.k):
        members = model.members(g)
        if not members:
            sigmas.append(0.0)
            continue
        m = X[members].mean(axis=0)
        dists = []
        for c in members:
            if np.linalg.norm(X[c]) == 0 or np.linalg.norm(m) == 0:
                excluded.append(c)
                continue
            dists.append(_cosine_distance(X[c], m))
        sigmas.append(float(np.std(dists)) if len(dists) > 1 else 0.0)
    support = np.asarray(model.group_support, dtype=np.float64)
    total = support.sum()
    aggregate = float(np.dot(sigmas, support) / total) if total > 0 else 0.0
    return CohesionReport(
        per_cluster_sigma=tuple(sigmas),
        aggregate_sigma=aggregate,
        min_group_support=int(support.min()) if support.size else 0,
        excluded=tuple(excluded),
    )


@dataclass(frozen=True)
class SelectionTrace:
    entries: tuple[dict, ...]
    selected_k: int
    feasible: bool


def select_k(matrix: FrequencyMatrix, k_range: tuple[int, int], seed: int,
             max_sigma: float = DEFAULT_MAX_SIGMA, min_support: int = DEFAULT_MIN_SUPPORT,
             restarts: int = DEFAULT_RESTARTS, threads: int = 1):
    """Pick the number of groups.

    A k is feasible when its aggregate sigma is at most ``max_sigma`` and
    every group holds at least ``min_support`` triples.  The smallest feasible
    k wins; if none is feasible the k with the lowest aggregate sigma is used
    and the trace is marked infeasible.

    Returns ``(model, report, trace)``; the model carries the trace entries.
    """
    lo, hi = k_range
    if lo > hi or lo < 1:
        raise ValueError(f"empty k range {k_range}")
    n_clusterable = int(matrix.clustered.sum())
    entries = []
    fits = {}
    for k in range(lo, hi + 1):
        if k > n_clusterable:
            entries.append({"k": k, "status": "skipped", "wcss": None,
                            "aggregate_sigma": None, "min_group_support": None,
                            "feasible": False})
            continue
        model = kmeans(matrix, k, seed, restarts, threads=threads)
        report = cohesion(matrix, model)
        ok = report.aggregate_sigma <= max_sigma and report.min_group_support >= min_support
        fits[k] = (model, report)
        entries.append({"k": k, "status": "scored", "wcss": model.wcss,
                        "aggregate_sigma": report.aggregate_sigma,
                        "min_group_support": report.min_group_support,
                        "feasible": bool(ok)})
    if not fits:
        raise ValueError(f"no k in {k_range} fits {n_clusterable} clusterable categories")
    feasible = [e["k"] for e in entries if e["feasible"]]
    if feasible:
        chosen = feasible[0]
    else:
        chosen = min(fits, key=lambda k: (fits[k][1].aggregate_sigma, k))
        log.warning("no feasible k in %s; falling back to k=%d", k_range, chosen)
    for e in entries:
        e["selected"] = e["k"] == chosen
    trace = SelectionTrace(tuple(entries), chosen, bool(feasible))
    model, report = fits[chosen]
    model = replace(model, selection_trace=trace.entries)
    return model, report, trace
