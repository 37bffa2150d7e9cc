import sys

import numpy as np
import pytest

from relpipe.dataset_io import (BoundingBox, DepthRaster, Instance, LabelVocabulary,
                                RelationTriple, SceneRecord, encode_mask)


@pytest.fixture(scope="session")
def vocab():
    return LabelVocabulary(
        object_categories=("human", "bottle", "chair", "bike"),
        human_index=0,
        relation_labels=("in-front-of", "behind", "next-to", "hold", "ride"),
        geometric_flags=(True, True, True, False, False),
    )


def rect_instance(iid, cat, box, h, w):
    y1, x1, y2, x2 = box
    grid = np.zeros((h, w), dtype=bool)
    grid[y1:y2, x1:x2] = True
    return Instance(iid, cat, BoundingBox(float(y1), float(x1), float(y2), float(x2)),
                    encode_mask(grid))


@pytest.fixture
def scene():
    h, w = 10, 20
    insts = (
        rect_instance(1, 0, (0, 0, 6, 4), h, w),
        rect_instance(2, 1, (2, 2, 4, 6), h, w),
        rect_instance(3, 0, (4, 10, 10, 14), h, w),
        rect_instance(4, 2, (5, 12, 9, 20), h, w),
    )
    triples = (RelationTriple(1, 2, 3), RelationTriple(3, 4, 0), RelationTriple(1, 3, 2))
    return SceneRecord("s001", h, w, insts, triples, "depth/s001.reldepth")


@pytest.fixture
def scene_depth_raster():
    h, w = 10, 20
    values = np.full((h, w), 9.0)
    values[0:6, 0:4] = 2.0
    values[2:4, 2:6] = 3.0
    values[4:10, 10:14] = 1.5
    values[5:9, 14:20] = 5.0
    return DepthRaster(h, w, values)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
