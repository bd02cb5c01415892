import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_counts, brute_is, random_triple

from occlugrid.metrics import accuracy, aggregate, evaluate, evaluate_sample, image_similarity, mse, threshold

GT = np.array([[1.0, 0.0], [1.0, 1.0]])
PRED = np.array([[0.7, 0.2], [0.4, 0.9]])
FULL = np.ones((2, 2))


def test_two_by_two_example():
    acc = accuracy(PRED, GT, FULL)
    assert acc == {"occ": 2 / 3, "free": 1.0, "overall": 0.75}
    assert mse(PRED, GT, FULL)["overall"] == 0.125
    assert accuracy(GT, GT, FULL) == {"occ": 1.0, "free": 1.0, "overall": 1.0}
    assert mse(GT, GT, FULL)["overall"] == 0.0


def test_empty_mask_absent():
    z = np.zeros((2, 2))
    assert accuracy(PRED, GT, z) == {"occ": None, "free": None, "overall": None}
    assert image_similarity(threshold(PRED), GT, z)["overall"] is None


def test_constant_half_mse():
    m = mse(np.full((3, 3), 0.5), np.zeros((3, 3)), np.ones((3, 3)))
    assert m == {"occ": None, "free": 0.25, "overall": 0.25}


def test_threshold_tie_is_occupied():
    assert threshold(np.array([0.5, 0.4999999]))[0] == 1.0
    assert threshold(np.array([0.5, 0.4999999]))[1] == 0.0


def test_is_displaced_cell():
    g = np.zeros((7, 7))
    p = np.zeros((7, 7))
    g[3, 2] = 1
    p[3, 4] = 1
    sims = image_similarity(p, g, np.ones((7, 7)))
    assert sims["occ"] == 4.0


def test_is_cap():
    g = np.zeros((5, 6))
    g[1, 1] = 1
    sims = image_similarity(np.zeros((5, 6)), g, np.ones((5, 6)))
    assert sims["occ"] == 2 * (5 + 6)


def test_brute_force_oracles():
    rng = np.random.default_rng(2024)
    for _ in range(50):
        pred, gt, mask = random_triple(rng)
        acc, err = accuracy(pred, gt, mask), mse(pred, gt, mask)
        ref = brute_counts(pred, gt, mask)
        for k in ("occ", "free", "overall"):
            assert acc[k] == ref[k][0]
            assert err[k] == ref[k][1]
        ours = image_similarity(threshold(pred), gt, mask)
        theirs = brute_is(threshold(pred), gt, mask)
        for k in ours:
            assert (ours[k] is None) == (theirs[k] is None)
            if ours[k] is not None:
                assert abs(ours[k] - theirs[k]) <= 1e-9


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31))
def test_is_identity_and_symmetry(seed):
    rng = np.random.default_rng(seed)
    _, a, mask = random_triple(rng)
    b = (rng.random(a.shape) < 0.3).astype(float)
    assert all(v in (None, 0.0) for v in image_similarity(a, a, mask).values())
    assert image_similarity(a, b, mask) == image_similarity(b, a, mask)


def test_aggregate_single_and_disjoint():
    rng = np.random.default_rng(5)
    p, g, m = random_triple(rng)
    one = evaluate_sample(p, g, m)
    agg = aggregate([one])
    assert agg.to_json() == one.to_json()
    m1 = np.zeros_like(m)
    m1[:4] = 1
    m2 = 1 - m1
    r = aggregate([evaluate_sample(p, g, m1), evaluate_sample(p, g, m2)])
    assert r.overall.count == m1.sum() + m2.sum()
    assert r.occ.count + r.free.count == r.overall.count


def test_pooling_equals_concatenated_grid():
    rng = np.random.default_rng(6)
    triples = [random_triple(rng) for _ in range(4)]
    rep = evaluate(*zip(*triples))
    cat = [np.concatenate(x) for x in zip(*triples)]
    acc, err = accuracy(*cat), mse(*cat)
    for k in ("occ", "free", "overall"):
        assert math.isclose(rep[k].accuracy, acc[k], rel_tol=1e-12)
        assert math.isclose(rep[k].mse, err[k], rel_tol=1e-12)
    per = [image_similarity(threshold(p), g, m)["overall"] for p, g, m in triples]
    assert math.isclose(rep.overall.is_score, np.mean(per), rel_tol=1e-12)


def test_report_schema():
    js = evaluate_sample(PRED, GT, FULL).to_json()
    assert set(js) == {"occ", "free", "overall", "n_samples"}
    for k in ("occ", "free", "overall"):
        assert set(js[k]) == {"accuracy", "mse", "is", "count"}
    scaled = evaluate_sample(PRED, GT, FULL).to_json(table_scale=True)
    assert scaled["overall"]["is"] == js["overall"]["is"] / 100


def test_shape_mismatch():
    with pytest.raises(ValueError):
        accuracy(np.zeros((2, 2)), np.zeros((2, 3)), np.ones((2, 2)))


def test_all_cells_mode():
    none = np.zeros((2, 2))
    r = evaluate_sample(PRED, GT, none, all_cells=True)
    assert r.overall.count == 4 and r.overall.accuracy == 0.75
