"""
Robust per-object depth
=======================

A depth map is noisy near object borders and where things overlap, so the
masked values are trimmed to [Q1, Q3] before averaging.
"""

import numpy as np

from relpipe.dataset_io import DepthRaster, encode_mask
from relpipe.depth import depth_stats_from_values, interquartile_filter, masked_depth_stats, percentile

values = np.arange(1, 9, dtype=float)
print("Q1, Q3:", percentile(values, 0.25), percentile(values, 0.75))   # 2.75, 6.25
print("kept:", interquartile_filter(values))                           # 3 4 5 6
print(depth_stats_from_values(values))

# an object at depth ~2 whose mask bleeds onto a wall at depth 9
rng = np.random.default_rng(0)
depth = np.full((8, 8), 9.0)
depth[2:6, 2:6] = 2.0 + rng.normal(0, 0.05, (4, 4))
grid = np.zeros((8, 8), dtype=bool)
grid[1:6, 2:6] = True              # one row too many
raster = DepthRaster(8, 8, depth)
mask = encode_mask(grid)

raw = depth[grid]
print("raw mean   %.3f" % raw.mean())
st = masked_depth_stats(raster, mask)
print("robust mean %.3f, median %.3f (%d of %d pixels kept)"
      % (st.mean, st.median, st.pixel_count, st.raw_pixel_count))

# tiny masks are not filtered at all
print(depth_stats_from_values([4.0, 1.0, 7.0]))
