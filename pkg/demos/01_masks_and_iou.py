"""
Masks, run lengths and IoU
==========================

Instance masks are stored as row-major run lengths that start with a
background run.  This walks through encoding one, reading it back, and
comparing two masks.
"""

import numpy as np

from relpipe.dataset_io import decode_mask, encode_mask, mask_iou

grid = np.zeros((4, 6), dtype=bool)
grid[1:3, 2:5] = True
print(grid.astype(int))

mask = encode_mask(grid)
print("runs:", mask.runs)          # 8 background, 3 on, 3 off, 3 on, 7 off
print("area:", mask.area)
assert np.array_equal(decode_mask(mask), grid)

# a mask that starts on a foreground pixel gets a leading zero-length run
corner = np.zeros((2, 2), dtype=bool)
corner[0, 0] = True
print("corner runs:", encode_mask(corner).runs)

# shift the block one column right: 4 shared pixels out of 8
other = np.zeros_like(grid)
other[1:3, 3:6] = True
print("IoU:", mask_iou(mask, encode_mask(other)))
print("IoU with itself:", mask_iou(mask, mask))
print("two empty masks:", mask_iou(encode_mask(np.zeros((3, 3), bool)),
                                    encode_mask(np.zeros((3, 3), bool))))
