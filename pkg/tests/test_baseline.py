import math

import numpy as np
import pytest
import torch
from fdcheck import max_rel_error, numeric_grads
from tinyscene import TINY

from occlugrid.baseline import ALPHABET, AnnotatedOgm, AnnotationError, annotate, baseline_forward, init_baseline_params
from occlugrid.estimator import OgmAnnotator
from occlugrid.grid import EgoFrame, MaskOgm, Ogm, ego_cell_centers
from occlugrid.model import NetConfig, loss_terms
from occlugrid.nn import value_and_grad
from occlugrid.scene import AgentRecord, SceneSample
from occlugrid.vectors import Polyline, VectorClass


def sample_with_agents(agents, mask=None):
    traj = Polyline.from_points("t", VectorClass.TRAJECTORY, [[0, 0], [0, 1]])
    m = np.zeros((70, 60)) if mask is None else mask
    return SceneSample((traj,), MaskOgm(m), Ogm(np.zeros((70, 60))), EgoFrame(0, 0, math.pi / 2), "s", 0, tuple(agents))


def test_alphabet():
    assert len(ALPHABET) == 12
    with pytest.raises(AnnotationError):
        AnnotatedOgm(np.full((2, 2), 0.55))
    with pytest.raises(AnnotationError):
        AnnotatedOgm(np.full((2, 2), 3.0))


def test_empty_scene_all_zero():
    assert np.all(annotate(sample_with_agents([])).cells == 0)


def test_static_vehicle_current_overwrites_history():
    poses = tuple((k, 5.0, 20.0, 0.0) for k in range(-10, 1))
    a = AgentRecord("v", "car", 4.0, 2.0, True, False, poses)
    out = annotate(sample_with_agents([a])).cells
    fp = a.footprint_at(0).contains(ego_cell_centers(EgoFrame(0, 0, math.pi / 2), sample_with_agents([]).grid))
    assert np.all(out[fp] == 1) and np.all(out[~fp] == 0)


def test_moving_vehicle_trail_oracle():
    # a 1 m x 1 m vehicle moving +1 m/frame along a row: one cell per pose
    poses = tuple((k, 10.0 + k, 30.0, 0.0) for k in range(-10, 1))
    a = AgentRecord("v", "car", 0.9, 0.9, True, False, poses)
    out = annotate(sample_with_agents([a])).cells
    row = 60 - 30
    for k in range(-9, 1):
        col = 30 + 10 + k
        assert out[row, col] == (1.0 if k == 0 else round((10 + k) / 10, 1))
    assert out[row, 30] == 0.0  # pose k=-10 is older than the recency scale
    assert np.count_nonzero(out) == 10


def test_hidden_vehicles_and_mask():
    poses = ((0, 5.0, 20.0, 0.0),)
    hidden = AgentRecord("h", "car", 4.0, 2.0, False, False, poses)
    mask = np.zeros((70, 60))
    mask[:5] = 1
    out = annotate(sample_with_agents([hidden], mask)).cells
    assert np.all(out[:5] == 2) and np.all(out[5:] == 0)
    assert np.array_equal(AnnotatedOgm(out).mask, mask)


def test_annotator_on_synthetic(synth16):
    arr = OgmAnnotator().fit_transform(synth16[:4])
    assert arr.shape == (4, 70, 60)
    for a, s in zip(arr, synth16[:4]):
        assert np.array_equal(a == 2, s.mask.cells == 1)
        assert set(np.round(np.unique(a), 1)) <= set(ALPHABET)


def test_forward_shape_range_determinism(synth16):
    cfg = NetConfig(d_model=32, heads=4, encoder_layers=1, decoder_blocks=1)
    x = OgmAnnotator().transform(synth16[:2])
    with torch.no_grad():
        a = baseline_forward(x, init_baseline_params(cfg, 1), cfg)
        b = baseline_forward(x, init_baseline_params(cfg, 1), cfg)
    assert a.shape == (2, 70, 60) and torch.all((a > 0) & (a < 1)) and torch.equal(a, b)


def test_tiny_gradient_check(rng):
    P = init_baseline_params(TINY, 0)
    cells = torch.tensor(rng.choice(ALPHABET, size=(1, 8, 8)), dtype=torch.float64)
    gt = torch.tensor(rng.random((1, 8, 8)) < 0.3, dtype=torch.float64)
    mask = (cells == 2).double()
    f = lambda: loss_terms(baseline_forward(cells, P, TINY), gt, mask, 1.0, 0.1)[0]
    _, g = value_and_grad(f, P)
    num = numeric_grads(f, dict(P.items()), 1e-4)
    assert max_rel_error(g, num) <= 1e-3
