import math

import numpy as np
import pytest
import torch
from fdcheck import max_rel_error, numeric_grads
from tinyscene import TINY, tiny_sample

from occlugrid.model import (
    ABLATIONS, NetConfig, NetConfigError, batch_polylines, decode, embed_vectors, encode_polyline, forward,
    forward_batch, init_params, interaction_encoder, loss_terms, select_polylines, vector_features,
)
from occlugrid.nn import value_and_grad
from occlugrid.scene import SceneSample
from occlugrid.vectors import VectorClass

F64 = torch.float64


def rand_feats(rng, *shape):
    return torch.tensor(rng.normal(size=(*shape, 10)), dtype=F64)


@pytest.fixture(scope="module")
def tiny_params():
    return init_params(TINY, seed=0)


def test_config_validation():
    with pytest.raises(NetConfigError):
        NetConfig(d_model=30, heads=8)
    with pytest.raises(NetConfigError):
        NetConfig(patch=7)
    with pytest.raises(NetConfigError):
        NetConfig(alpha=-1)
    with pytest.raises(NetConfigError):
        NetConfig(include_traj=False)
    assert NetConfig().n_patches == 42
    assert NetConfig().with_ablation("traj+occ").ablation == "traj+occ"
    assert set(ABLATIONS) == {"traj", "traj+occ", "traj+env", "all"}


def test_vector_features_layout():
    rows = np.array([[1.0, 2.0, 3.0, 4.0, 2, -3, 1, 0]])
    f = vector_features(rows)
    assert f.shape == (1, 10)
    assert f[0, 4:7].tolist() == [0, 0, 1]


def test_embed_single_vector(tiny_params, rng):
    P = tiny_params
    x = rand_feats(rng, 1)
    out = embed_vectors(x, P)
    assert out.shape == (1, 16)
    mlp = linear_mlp(x, P)
    assert torch.allclose(out - mlp, P["vec.pos"][0:1], atol=1e-14)


def linear_mlp(x, P):
    h = torch.relu(x @ P["vec.mlp1.W"] + P["vec.mlp1.b"])
    return h @ P["vec.mlp2.W"] + P["vec.mlp2.b"]


def test_embed_identical_vectors_differ_by_position(tiny_params, rng):
    P = tiny_params
    x = rand_feats(rng, 1).expand(2, 10)
    out = embed_vectors(x, P)
    assert torch.allclose(out[1] - out[0], P["vec.pos"][1] - P["vec.pos"][0], atol=1e-14)
    for m in (1, 5, 8):
        assert embed_vectors(rand_feats(rng, m), P).shape == (m, 16)
    with pytest.raises(ValueError):
        embed_vectors(rand_feats(rng, 9), P)


def test_encode_polyline_basics(tiny_params, rng):
    P = tiny_params
    e = embed_vectors(rand_feats(rng, 3), P)
    h = encode_polyline(e, P, 2)
    assert h.shape == (16,)
    assert torch.equal(h, encode_polyline(e, P, 2))
    dup = torch.cat([e, e[:1]])
    assert not torch.allclose(encode_polyline(dup, P, 2), h)


def test_encode_polyline_token_gradient(rng):
    P = init_params(TINY, seed=1)
    e = embed_vectors(rand_feats(rng, 4), P).detach()
    f = lambda: (encode_polyline(e, P, 2) ** 2).sum()
    _, g = value_and_grad(f, P)
    num = numeric_grads(f, {"poly.token": P["poly.token"]}, 1e-6)
    assert max_rel_error({"poly.token": g["poly.token"]}, num) <= 1e-5


def test_encode_polyline_mask_locality(tiny_params, rng):
    P = tiny_params
    e = embed_vectors(rand_feats(rng, 3), P)
    padded = torch.cat([e, torch.randn(2, 16, dtype=F64) * 100])
    vm = torch.tensor([True, True, True, False, False])
    assert (encode_polyline(padded, P, 2, vm) - encode_polyline(e, P, 2)).abs().max() <= 1e-12


def test_interaction_encoder_properties(tiny_params, rng):
    P = tiny_params
    x = torch.tensor(rng.normal(size=(1, 5, 16)), dtype=F64)
    types = torch.tensor([[0, 1, 2, 0, 2]])
    out = interaction_encoder(x, types, P, TINY)
    assert interaction_encoder(x[:, :1], types[:, :1], P, TINY).shape == (1, 1, 16)
    perm = torch.randperm(5)
    assert (interaction_encoder(x[:, perm], types[:, perm], P, TINY) - out[:, perm]).abs().max() <= 1e-6
    xp = torch.cat([x, torch.randn(1, 1, 16, dtype=F64)], dim=1)
    tp = torch.cat([types, torch.tensor([[1]])], dim=1)
    pm = torch.tensor([[True] * 5 + [False]])
    assert (interaction_encoder(xp, tp, P, TINY, pm)[:, :5] - out).abs().max() <= 1e-6


def test_decode_shape_range_determinism():
    cfg = NetConfig(d_model=32, heads=4, encoder_layers=1, decoder_blocks=2, precision="float64")
    enc = torch.tensor(np.random.default_rng(0).normal(size=(2, 4, 32)), dtype=F64)
    a = decode(enc, init_params(cfg, 5), cfg)
    b = decode(enc, init_params(cfg, 5), cfg)
    assert a.shape == (2, 70, 60)
    assert torch.all((a > 0) & (a < 1))
    assert torch.equal(a, b)
    assert not torch.equal(a, decode(enc, init_params(cfg, 6), cfg))


def test_loss_hand_values():
    gt = torch.zeros(1, 4, 4, dtype=F64)
    gt[0, 1, 1] = gt[0, 2, 3] = 1
    pred = torch.full((1, 4, 4), 0.5, dtype=F64)
    pred[gt == 1] = 0.25
    mask = torch.ones_like(gt)
    _, _, _, l_occ = loss_terms(pred, gt, mask, 1.0, 0.1)
    assert float(l_occ) == 1.5
    assert float(loss_terms(pred, torch.zeros_like(gt), mask, 1.0, 0.1)[3]) == 0.0
    total, lg, lm, lo = loss_terms(gt.clone(), gt, mask, 1.0, 0.1)
    assert float(lg) <= 1e-6 and float(lm) <= 1e-6 and float(lo) == 0.0


def test_loss_algebra_and_mask_invariance(rng):
    gt = torch.tensor(rng.random((3, 6, 6)) < 0.3, dtype=F64)
    mask = torch.tensor(rng.random((3, 6, 6)) < 0.5, dtype=F64)
    pred = torch.tensor(rng.uniform(0.01, 0.99, (3, 6, 6)), dtype=F64)
    for a, b in [(1.0, 0.1), (0.3, 2.5), (0.0, 0.0)]:
        total, lg, lm, lo = loss_terms(pred, gt, mask, a, b)
        assert float(total) == float(lg + a * lm + b * lo)
    pert = pred.clone()
    pert[mask == 0] = torch.tensor(rng.uniform(0.01, 0.99, int((mask == 0).sum())), dtype=F64)
    assert float(loss_terms(pert, gt, mask, 1, 0.1)[2]) == float(loss_terms(pred, gt, mask, 1, 0.1)[2])
    # L_occ is linear with slope -1 on occupied cells
    idx = tuple(torch.nonzero(gt[0] == 1)[0].tolist())
    bumped = pred.clone()
    bumped[(0, *idx)] += 0.125
    diff = float(loss_terms(bumped, gt, mask, 1, 0.1)[3] - loss_terms(pred, gt, mask, 1, 0.1)[3])
    assert math.isclose(diff, -0.125 / 3, rel_tol=1e-12)


def test_forward_on_synthetic_sample(synth16):
    cfg = NetConfig(d_model=32, heads=4, encoder_layers=2, decoder_blocks=1)
    P = init_params(cfg, 0)
    with torch.no_grad():
        a = forward(synth16[0], P, cfg)
        b = forward(synth16[0], P, cfg)
    assert a.shape == (70, 60) and torch.all(torch.isfinite(a)) and torch.equal(a, b)
    traj = cfg.with_ablation("traj")
    chosen = select_polylines(synth16[0], traj)
    assert chosen and all(p.type == VectorClass.TRAJECTORY for p in chosen)
    with torch.no_grad():
        c = forward(synth16[0], init_params(traj, 0), traj)
    assert c.shape == (70, 60) and not torch.equal(a, c)


@pytest.mark.parametrize("precision,tol", [("float32", 1e-4), ("float64", 1e-9)])
def test_polyline_permutation_invariance(synth16, precision, tol):
    cfg = NetConfig(d_model=32, heads=4, encoder_layers=2, decoder_blocks=1, precision=precision)
    P = init_params(cfg, 3)
    s = synth16[1]
    order = np.random.default_rng(0).permutation(len(s.polylines))
    shuffled = SceneSample(tuple(s.polylines[i] for i in order), s.mask, s.ground_truth, s.frame, s.sample_id)
    with torch.no_grad():
        assert (forward(s, P, cfg) - forward(shuffled, P, cfg)).abs().max() <= tol


def test_padded_polyline_locality(synth16):
    cfg = NetConfig(d_model=32, heads=4, encoder_layers=2, decoder_blocks=1)
    P = init_params(cfg, 0)
    with torch.no_grad():
        a = forward_batch(batch_polylines(synth16[:1], cfg), P, cfg)
        b = forward_batch(batch_polylines(synth16[:1], cfg, extra_padding=3), P, cfg)
    assert (a - b).abs().max() <= 1e-6


def test_batched_matches_single(synth16):
    cfg = NetConfig(d_model=32, heads=4, encoder_layers=1, decoder_blocks=1, precision="float64")
    P = init_params(cfg, 0)
    with torch.no_grad():
        batch = forward_batch(batch_polylines(synth16[:3], cfg), P, cfg)
        for i in range(3):
            assert (batch[i] - forward(synth16[i], P, cfg)).abs().max() <= 1e-10


def test_limits_enforced(rng):
    s = tiny_sample(rng, n_vectors=(3, 9, 2))
    with pytest.raises(ValueError):
        select_polylines(s, TINY)
    few = NetConfig(**{**TINY.to_dict(), "max_polylines": 2})
    with pytest.raises(ValueError):
        select_polylines(tiny_sample(rng), few)


def test_tiny_gradient_spot_check(rng):
    """A few entries per tensor; the exhaustive check lives in the acceptance suite."""
    sample = tiny_sample(rng)
    P = init_params(TINY, seed=2)
    batch = batch_polylines([sample], TINY)
    gt = torch.tensor(sample.ground_truth.cells[None], dtype=F64)
    mask = torch.tensor(sample.mask.cells[None], dtype=F64)
    f = lambda: loss_terms(forward_batch(batch, P, TINY), gt, mask, 1.0, 0.1)[0]
    _, g = value_and_grad(f, P)
    with torch.no_grad():
        for name in ("vec.mlp1.W", "poly.token", "type.emb", "enc1.ffn.fc2.W", "dec.query_pos", "dec.head.b"):
            t = P[name].view(-1)
            for i in (0, t.numel() // 2, t.numel() - 1):
                orig = t[i].item()
                t[i] = orig + 1e-5
                up = float(f())
                t[i] = orig - 1e-5
                down = float(f())
                t[i] = orig
                num = (up - down) / 2e-5
                ana = float(g[name].view(-1)[i])
                assert abs(ana - num) <= 1e-6 * max(1.0, abs(num))
