import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from relpipe.clustering import FrequencyMatrix, kmeans
from relpipe.dataset_io import BoundingBox, SceneRecord
from relpipe.depth import depth_stats_from_values
from relpipe.features import (CSV_HEADER, assemble_features, box_iou, design_matrix,
                              features_csv, generate_candidates, scene_features)
from relpipe.synthetic import SynthSpec, family_spec_list, generate

from conftest import rect_instance


@pytest.fixture
def cluster():
    # 4 categories: human, bottle, chair, bike; bottle and bike look alike
    counts = np.array([[5, 5, 10, 0, 0], [0, 0, 0, 10, 0], [8, 8, 2, 0, 0], [0, 0, 1, 9, 0]])
    return kmeans(FrequencyMatrix(counts), 3, seed=0)


def scene_with(cats, h=10, w=10):
    insts = tuple(rect_instance(i + 1, c, (0, 0, 2, 2), h, w) for i, c in enumerate(cats))
    return SceneRecord("x", h, w, insts)


def test_five_instances_two_humans(vocab):
    pairs = generate_candidates(scene_with([0, 1, 0, 2, 3]), vocab)
    assert len(pairs) == (5 - 1) * 2 == 8
    assert [(p.subject_id, p.object_id) for p in pairs] == sorted(
        (s, o) for s in (1, 3) for o in range(1, 6) if o != s)


def test_no_humans(vocab):
    assert generate_candidates(scene_with([1, 2, 3]), vocab) == []


def test_two_humans_each_subject_of_other(vocab):
    pairs = generate_candidates(scene_with([0, 0]), vocab)
    assert [(p.subject_id, p.object_id) for p in pairs] == [(1, 2), (2, 1)]


def test_candidates_carry_labels(vocab, scene):
    pairs = {(p.subject_id, p.object_id): p.label for p in generate_candidates(scene, vocab)}
    assert pairs[(1, 2)] == 3 and pairs[(3, 4)] == 0 and pairs[(1, 3)] == 2
    assert pairs[(3, 1)] is None


@settings(max_examples=100)
@given(st.lists(st.integers(0, 3), min_size=0, max_size=9))
def test_candidate_count_law(vocab, cats):
    n, k = len(cats), cats.count(0)
    assert len(generate_candidates(scene_with(cats), vocab)) == (n - 1) * k


def test_box_iou_examples():
    a = BoundingBox(0, 0, 1, 1)
    assert box_iou(a, a) == 1.0
    assert box_iou(a, BoundingBox(2, 2, 3, 3)) == 0.0
    # unit squares offset by half a side: overlap 0.5, union 1.5
    assert box_iou(a, BoundingBox(0.5, 0, 1.5, 1)) == pytest.approx(1 / 3)
    assert box_iou(BoundingBox(1, 1, 1, 1), BoundingBox(1, 1, 1, 1)) == 0.0


coord = st.floats(0, 50, allow_nan=False)


def box_strategy():
    return st.tuples(coord, coord, coord, coord).map(
        lambda t: BoundingBox(min(t[0], t[2]), min(t[1], t[3]), max(t[0], t[2]), max(t[1], t[3])))


@settings(max_examples=200)
@given(box_strategy(), box_strategy(), st.sampled_from([0.5, 2.0, 4.0]))
def test_box_iou_symmetric_and_scale_invariant(a, b, s):
    iou = box_iou(a, b)
    assert iou == box_iou(b, a)
    assert 0.0 <= iou <= 1.0
    sa = BoundingBox(a.y1 * s, a.x1 * s, a.y2 * s, a.x2 * s)
    sb = BoundingBox(b.y1 * s, b.x1 * s, b.y2 * s, b.x2 * s)
    assert box_iou(sa, sb) == pytest.approx(iou, abs=1e-12)


def test_identical_boxes_features(vocab, cluster):
    h = w = 10
    s = SceneRecord("x", h, w, (rect_instance(1, 0, (1, 1, 5, 5), h, w),
                                rect_instance(2, 1, (1, 1, 5, 5), h, w)))
    f = assemble_features(generate_candidates(s, vocab)[0], s, cluster)
    assert (f.d_y1, f.d_x1, f.d_y2, f.d_x2, f.overlap) == (0, 0, 0, 0, 1.0)
    assert f.imputed and (f.subj_mean, f.subj_median, f.obj_mean, f.obj_median) == (0, 0, 0, 0)
    assert len(f.values()) == 10


def test_hand_computed_vector(vocab, scene, scene_depth_raster, cluster):
    pair = [p for p in generate_candidates(scene, vocab) if (p.subject_id, p.object_id) == (1, 2)][0]
    f = assemble_features(pair, scene, cluster, scene_depth_raster)
    # subject box (0,0,6,4), object box (2,2,4,6), image 10 x 20
    assert f.d_y1 == pytest.approx(-2 / 10)
    assert f.d_x1 == pytest.approx(-2 / 20)
    assert f.d_y2 == pytest.approx(2 / 10)
    assert f.d_x2 == pytest.approx(-2 / 20)
    # intersection rows 2..4, cols 2..4 -> 4; union 24 + 8 - 4
    assert f.overlap == pytest.approx(4 / 28)
    assert f.group_id == cluster.group_of(1)
    # subject mask: 24 pixels, 4 of them overwritten by the bottle (3.0), rest 2.0
    subj = depth_stats_from_values([2.0] * 20 + [3.0] * 4)
    assert (f.subj_mean, f.subj_median) == (subj.mean, subj.median) == (2.0, 2.0)
    assert (f.obj_mean, f.obj_median) == (3.0, 3.0)
    assert not f.imputed


def test_translation_invariance(vocab, cluster):
    h = w = 40
    def make(dy, dx):
        return SceneRecord("x", h, w, (rect_instance(1, 0, (2 + dy, 3 + dx, 9 + dy, 8 + dx), h, w),
                                       rect_instance(2, 2, (5 + dy, 1 + dx, 12 + dy, 6 + dx), h, w)))
    a, b = make(0, 0), make(10, 7)
    fa = assemble_features(generate_candidates(a, vocab)[0], a, cluster)
    fb = assemble_features(generate_candidates(b, vocab)[0], b, cluster)
    assert fa.values() == pytest.approx(fb.values())


def test_unknown_category(vocab, cluster):
    s = scene_with([0, 7])
    with pytest.raises(ValueError):
        assemble_features(generate_candidates(s, vocab)[0], s, cluster)


def test_design_matrix_one_hot(vocab, scene, cluster):
    rows = scene_features(scene, vocab, cluster)
    X = design_matrix([f for _, f in rows], cluster.k)
    assert X.shape == (len(rows), 9 + cluster.k)
    assert np.all(X[:, 9:].sum(axis=1) == 1)
    for (pair, f), x in zip(rows, X):
        assert x[9 + f.group_id] == 1


def test_features_csv_header(vocab, scene, cluster):
    text = features_csv(scene_features(scene, vocab, cluster))
    lines = text.splitlines()
    assert lines[0] == ",".join(CSV_HEADER)
    assert lines[0] == ("scene_id,subject_id,object_id,d_y1,d_x1,d_y2,d_x2,overlap,group_id,"
                        "subj_mean,subj_median,obj_mean,obj_median,label")
    assert len(lines) == 1 + len(generate_candidates(scene, vocab))


def test_feature_bounds_on_synthetic():
    spec = SynthSpec(seed=1, n_scenes=30, families=family_spec_list([0, 3], [2, 2], 10), rho=0.5)
    ds = generate(spec)
    from relpipe.clustering import build_frequency_matrix
    model = kmeans(build_frequency_matrix(ds.train, ds.vocab), 2, seed=0)
    for s in ds.train:
        for _, f in scene_features(s, ds.vocab, model, ds.depth[s.scene_id]):
            assert all(-1 <= v <= 1 for v in (f.d_y1, f.d_x1, f.d_y2, f.d_x2))
            assert 0 <= f.overlap <= 1
            assert all(np.isfinite(f.values()))
