import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from relpipe.dataset_io import DepthRaster, encode_mask
from relpipe.depth import (depth_stats_from_values, interquartile_filter, masked_depth_stats,
                           percentile)

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


def oracle_percentile(values, p):
    """Closest-ranks linear interpolation on a python-sorted list."""
    s = sorted(float(v) for v in values)
    rank = p * (len(s) - 1)
    lo = int(math.floor(rank))
    hi = min(lo + 1, len(s) - 1)
    return s[lo] + (rank - lo) * (s[hi] - s[lo])


def test_percentile_endpoints():
    vals = [3.0, -1.0, 7.5, 2.0]
    assert percentile(vals, 0.0) == -1.0
    assert percentile(vals, 1.0) == 7.5


def test_percentile_quarter_of_four():
    assert percentile([10, 20, 30, 40], 0.25) == 17.5


def test_percentile_empty():
    with pytest.raises(ValueError):
        percentile([], 0.5)


@settings(max_examples=300)
@given(st.lists(finite, min_size=1, max_size=60), st.floats(0, 1))
def test_percentile_matches_oracle(values, p):
    assert percentile(values, p) == oracle_percentile(values, p)


def test_one_to_eight_example():
    st_ = depth_stats_from_values(np.arange(1, 9, dtype=float))
    assert oracle_percentile(range(1, 9), 0.25) == 2.75
    assert oracle_percentile(range(1, 9), 0.75) == 6.25
    assert list(interquartile_filter(np.arange(1, 9))) == [3, 4, 5, 6]
    assert (st_.mean, st_.median, st_.pixel_count, st_.raw_pixel_count) == (4.5, 4.5, 4, 8)


def test_small_mask_is_not_filtered():
    s = depth_stats_from_values([1.0, 2.0, 3.0])
    assert (s.mean, s.median, s.pixel_count) == (2.0, 2.0, 3)


def test_constant_depth_under_mask():
    grid = np.zeros((5, 6), dtype=bool)
    grid[1:4, 2:5] = True
    s = masked_depth_stats(DepthRaster(5, 6, np.full((5, 6), 5.0)), encode_mask(grid))
    assert (s.mean, s.median, s.pixel_count, s.raw_pixel_count) == (5.0, 5.0, 9, 9)


def test_empty_mask_is_invalid_not_error():
    s = masked_depth_stats(DepthRaster(2, 2, np.ones((2, 2))), encode_mask(np.zeros((2, 2))))
    assert not s.valid and s.raw_pixel_count == 0


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        masked_depth_stats(DepthRaster(2, 2, np.ones(4)), encode_mask(np.ones((2, 3))))


def test_masked_pixels_only():
    depth = np.array([[1.0, 100.0], [2.0, 100.0]])
    mask = encode_mask(np.array([[1, 0], [1, 0]]))
    s = masked_depth_stats(DepthRaster(2, 2, depth), mask)
    assert (s.mean, s.median) == (1.5, 1.5)


vals = st.lists(st.floats(0.5, 100, allow_nan=False), min_size=1, max_size=80)


@settings(max_examples=200)
@given(vals, st.randoms(use_true_random=False))
def test_order_invariance(values, rnd):
    shuffled = list(values)
    rnd.shuffle(shuffled)
    assert depth_stats_from_values(values) == depth_stats_from_values(shuffled)


@settings(max_examples=200)
@given(vals, st.sampled_from([0.25, 0.5, 2.0, 8.0]))
def test_scale_equivariance(values, s):
    a = depth_stats_from_values(values)
    b = depth_stats_from_values([v * s for v in values])
    assert b.mean == pytest.approx(a.mean * s, rel=1e-12)
    assert b.median == pytest.approx(a.median * s, rel=1e-12)


@settings(max_examples=200)
@given(st.lists(st.integers(0, 50), min_size=1, max_size=80), st.integers(-20, 20))
def test_shift_equivariance(values, c):
    a = depth_stats_from_values([float(v) for v in values])
    b = depth_stats_from_values([float(v + c) for v in values])
    assert b.mean == pytest.approx(a.mean + c, abs=1e-9)
    assert b.median == pytest.approx(a.median + c, abs=1e-9)


@settings(max_examples=200)
@given(vals)
def test_retention_band_and_range(values):
    n = len(values)
    s = depth_stats_from_values(values)
    kept = interquartile_filter(values)
    assert s.pixel_count <= s.raw_pixel_count == n
    if n >= 4:
        assert math.ceil(n / 2) - 2 <= s.pixel_count <= n
    assert kept.min() <= s.mean <= kept.max()
    assert kept.min() <= s.median <= kept.max()


@settings(max_examples=200)
@given(vals)
def test_refiltering_with_same_quartiles_keeps_everything(values):
    s = np.sort(np.asarray(values))
    if s.size < 4:
        return
    q1, q3 = percentile(s, 0.25), percentile(s, 0.75)
    kept = interquartile_filter(s)
    assert np.all((kept >= q1) & (kept <= q3))
