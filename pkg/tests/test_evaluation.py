import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from relpipe.dataset_io import RelationTriple, SceneRecord
from relpipe.evaluation import (EvalConfig, evaluate, greedy_match, match_instances,
                                per_scene_csv, relation_accuracy, report_csv)
from relpipe.synthetic import SynthSpec, family_spec_list, generate

from conftest import rect_instance


def test_identity_matching(scene):
    for t in (0.25, 0.5, 0.75, 1.0):
        assert match_instances(scene.instances, scene.instances, t) == {1: 1, 2: 2, 3: 3, 4: 4}


def test_category_gate():
    a = rect_instance(1, 1, (0, 0, 4, 4), 8, 8)
    b = rect_instance(1, 2, (0, 0, 4, 4), 8, 8)
    assert match_instances([a], [b], 0.25) == {}


def brute_force_best(ious, threshold):
    """Maximum-total-IoU partial bijection, by enumeration."""
    edges = [e for e in ious if e[0] >= threshold]
    best, best_score = {}, -1.0
    for r in range(len(edges) + 1):
        for subset in itertools.combinations(edges, r):
            ps = [e[1] for e in subset]
            ts = [e[2] for e in subset]
            if len(set(ps)) == r and len(set(ts)) == r:
                score = sum(e[0] for e in subset)
                if score > best_score:
                    best, best_score = {e[1]: e[2] for e in subset}, score
    return best


def test_contention_goes_to_higher_iou():
    h, w = 20, 10
    truth = [rect_instance(7, 1, (0, 0, 20, 10), h, w)]
    a = rect_instance(1, 1, (0, 0, 20, 6), h, w)     # IoU 0.6
    b = rect_instance(2, 1, (0, 0, 11, 10), h, w)    # IoU 0.55
    m = match_instances([b, a], truth, 0.5)
    assert m == {1: 7}
    assert m == brute_force_best([(0.6, 1, 7), (0.55, 2, 7)], 0.5)


def test_iou_at_threshold_is_accepted():
    assert greedy_match([(0.5, 1, 1)], 0.5) == {1: 1}


def test_relation_accuracy_examples():
    truth = [RelationTriple(1, 2, 0), RelationTriple(1, 3, 1), RelationTriple(4, 2, 2)]
    ident = {i: i for i in range(1, 5)}
    assert relation_accuracy(truth, truth, ident) == 1.0
    assert relation_accuracy([], truth, ident) == 0.0
    # predictions use ids 11..14; a hand matching leaves triple (4,2,2) unreachable
    preds = [RelationTriple(11, 12, 0), RelationTriple(11, 13, 1), RelationTriple(14, 12, 2)]
    assert relation_accuracy(preds, truth, {11: 1, 12: 2, 13: 3}) == pytest.approx(2 / 3)


def test_wrong_relation_is_a_miss():
    truth = [RelationTriple(1, 2, 0)]
    assert relation_accuracy([RelationTriple(1, 2, 1)], truth, {1: 1, 2: 2}) == 0.0


iou_lists = st.lists(
    st.tuples(st.floats(0.01, 1.0), st.integers(1, 6), st.integers(1, 6)),
    max_size=20, unique_by=lambda e: (e[1], e[2]))


@settings(max_examples=200)
@given(iou_lists, st.floats(0.01, 1.0))
def test_matching_is_partial_bijection_above_threshold(ious, t):
    m = greedy_match(ious, t)
    lookup = {(p, q): v for v, p, q in ious}
    assert len(set(m.values())) == len(m)
    assert all(lookup[(p, q)] >= t for p, q in m.items())


@settings(max_examples=200)
@given(iou_lists, st.floats(0.01, 1.0), st.floats(0.01, 1.0))
def test_higher_threshold_matching_is_a_subset(ious, t1, t2):
    lo, hi = sorted((t1, t2))
    m_lo, m_hi = greedy_match(ious, lo), greedy_match(ious, hi)
    assert all(m_lo.get(p) == q for p, q in m_hi.items())


@settings(max_examples=200)
@given(st.lists(st.tuples(st.integers(1, 5), st.integers(1, 5), st.integers(0, 3)), max_size=10),
       st.lists(st.tuples(st.integers(1, 5), st.integers(1, 5), st.integers(0, 3)),
                min_size=1, max_size=10),
       st.dictionaries(st.integers(1, 5), st.integers(1, 5), max_size=5),
       st.permutations(range(1, 6)))
def test_relabeling_invariance(preds, truth, matching, perm):
    inv = {v: k for k, v in matching.items()}
    matching = {k: v for v, k in inv.items()}            # make it a bijection
    pi = dict(zip(range(1, 6), [p + 100 for p in perm]))
    P = [RelationTriple(*t) for t in preds]
    T = [RelationTriple(*t) for t in truth]
    P2 = [RelationTriple(pi[t.subject_id], pi[t.object_id], t.relation_id) for t in P]
    m2 = {pi[k]: v for k, v in matching.items()}
    assert relation_accuracy(P, T, matching) == relation_accuracy(P2, T, m2)


@pytest.fixture(scope="module")
def noisy_synth():
    spec = SynthSpec(seed=3, n_scenes=0, n_val_scenes=40, noise=0.25, image_size=(24, 32),
                     families=family_spec_list([0, 3], [2, 2], 10, mass=0.7), with_depth=False)
    return generate(spec)


def oracle_predictions(ds):
    # truth triples rewritten onto detection ids
    return {s.scene_id: [RelationTriple(t.subject_id + 1000, t.object_id + 1000, t.relation_id)
                         for t in s.triples] for s in ds.val}


def test_accuracy_non_increasing_in_threshold(noisy_synth):
    cfg = EvalConfig((0.1, 0.25, 0.4, 0.5, 0.6, 0.75, 0.9, 1.0))
    rep = evaluate(oracle_predictions(noisy_synth), noisy_synth.val_detections,
                   noisy_synth.val, cfg)
    assert all(b <= a for a, b in zip(rep.accuracy, rep.accuracy[1:]))
    assert rep.accuracy[0] > rep.accuracy[-1]           # the noise actually bites
    assert abs(rep.average - np.mean(rep.accuracy)) <= 1e-12


def test_truth_as_prediction_scores_one(noisy_synth):
    preds = {s.scene_id: list(s.triples) for s in noisy_synth.val}
    rep = evaluate(preds, noisy_synth.val, noisy_synth.val)
    assert rep.row() == (1.0, 1.0, 1.0, 1.0)


def test_box_matching_agrees_on_rectangles(noisy_synth):
    preds = oracle_predictions(noisy_synth)
    a = evaluate(preds, noisy_synth.val_detections, noisy_synth.val, EvalConfig(matching="mask"))
    b = evaluate(preds, noisy_synth.val_detections, noisy_synth.val, EvalConfig(matching="box"))
    assert a.accuracy == b.accuracy


def test_missing_scene_counts_as_misses(scene):
    empty = SceneRecord("other", scene.height, scene.width, scene.instances, scene.triples)
    rep = evaluate({scene.scene_id: list(scene.triples)}, [scene], [scene, empty])
    assert rep.total_triples == 6
    assert rep.accuracy == (0.5, 0.5, 0.5)


def test_thresholds_validated():
    for bad in ((), (0.5, 0.25), (0.0,), (1.5,)):
        with pytest.raises(ValueError):
            EvalConfig(bad)
    with pytest.raises(ValueError):
        EvalConfig(matching="segm")


def test_report_csv_layout(scene):
    rep = evaluate({scene.scene_id: list(scene.triples)}, [scene], [scene])
    text = report_csv({"gb_depth": rep})
    lines = text.splitlines()
    assert lines[0].startswith("# metric: recall")
    assert lines[1] == "config,iou_0.25,iou_0.5,iou_0.75,average"
    assert lines[2] == "gb_depth,1.000000,1.000000,1.000000,1.000000"
    assert per_scene_csv(rep).splitlines()[0] == "scene_id,triples,hits@0.25,hits@0.5,hits@0.75"
