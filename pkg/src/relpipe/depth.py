"""Per-instance depth statistics with interquartile filtering.

Monocular depth maps are noisy near mask borders and where objects occlude
each other, so the raw masked mean is a poor summary.  Values outside the
closed interval [Q1, Q3] are dropped before taking the mean and median.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataset_io import DepthRaster, InstanceMask, decode_mask

MIN_FILTER_PIXELS = 4


@dataclass(frozen=True)
class DepthStats:
    mean: float
    median: float
    pixel_count: int
    raw_pixel_count: int

    @property
    def valid(self) -> bool:
        return self.raw_pixel_count > 0


INVALID_STATS = DepthStats(math.nan, math.nan, 0, 0)


def _percentile_sorted(s: np.ndarray, p: float) -> float:
    rank = p * (s.size - 1)
    lo = math.floor(rank)
    hi = min(lo + 1, s.size - 1)
    frac = rank - lo
    return float(s[lo] + frac * (s[hi] - s[lo]))


def percentile(values, p: float) -> float:
    """Linear-interpolation percentile at fraction ``p``; rank is ``p * (n - 1)``."""
    s = np.sort(np.asarray(values, dtype=np.float64).ravel())
    if s.size == 0:
        raise ValueError("percentile of an empty sequence")
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    return _percentile_sorted(s, p)


def interquartile_filter(values) -> np.ndarray:
    """Return the sorted values inside [Q1, Q3]; fewer than 4 values pass through."""
    s = np.sort(np.asarray(values, dtype=np.float64).ravel())
    if s.size < MIN_FILTER_PIXELS:
        return s
    q1 = _percentile_sorted(s, 0.25)
    q3 = _percentile_sorted(s, 0.75)
    return s[(s >= q1) & (s <= q3)]


def depth_stats_from_values(values) -> DepthStats:
    values = np.asarray(values, dtype=np.float64).ravel()
    if values.size == 0:
        return INVALID_STATS
    kept = interquartile_filter(values)
    # summation rounding can push the mean a hair outside the retained range
    mean = min(max(float(np.mean(kept)), kept[0]), kept[-1])
    return DepthStats(
        mean=float(mean),
        median=_percentile_sorted(kept, 0.5),
        pixel_count=int(kept.size),
        raw_pixel_count=int(values.size),
    )


def masked_depth_stats(depth: DepthRaster, mask: InstanceMask) -> DepthStats:
    if (depth.height, depth.width) != (mask.height, mask.width):
        raise ValueError(
            f"depth {depth.height}x{depth.width} and mask {mask.height}x{mask.width} differ"
        )
    return depth_stats_from_values(depth.values[decode_mask(mask)])


def scene_depth_stats(scene, depth: DepthRaster | None) -> dict[int, DepthStats]:
    """Stats for every instance of ``scene`` keyed by instance id."""
    if depth is None:
        return {inst.instance_id: INVALID_STATS for inst in scene.instances}
    return {inst.instance_id: masked_depth_stats(depth, inst.mask) for inst in scene.instances}
