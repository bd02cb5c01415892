import math

import numpy as np
import pytest
import torch
from fdcheck import max_rel_error, numeric_grads

from occlugrid.nn import (
    AdamState, CheckpointError, ConfigHashMismatch, ModelParams, ShapeError, adam_step, bce,
    config_hash, cross_attn, ffn, layer_norm, linear, load_checkpoint, mhsa, save_checkpoint, value_and_grad,
)
from occlugrid.nn.ops import register_attention, register_ffn


def attn_params(d=4, seed=0):
    P = ModelParams(seed, "float64")
    register_attention(P, "a", d)
    return P


def test_linear_identity():
    x = torch.randn(5, 3, dtype=torch.float64)
    assert torch.equal(linear(x, torch.eye(3, dtype=torch.float64), torch.zeros(1, 3, dtype=torch.float64)), x)
    with pytest.raises(ShapeError):
        linear(x, torch.eye(4, dtype=torch.float64))


def test_layer_norm_constant_row():
    x = torch.full((2, 6), 3.5, dtype=torch.float64)
    y = layer_norm(x, torch.ones(1, 6, dtype=torch.float64), torch.zeros(1, 6, dtype=torch.float64))
    assert torch.all(y == 0)


def test_layer_norm_moments():
    x = torch.randn(4, 16, dtype=torch.float64) * 3 + 1
    y = layer_norm(x, torch.ones(1, 16, dtype=torch.float64), torch.zeros(1, 16, dtype=torch.float64))
    assert torch.allclose(y.mean(-1), torch.zeros(4, dtype=torch.float64), atol=1e-12)
    assert torch.allclose(y.var(-1, unbiased=False), torch.ones(4, dtype=torch.float64), atol=1e-4)


def test_linear_gradient_fd():
    g = torch.Generator().manual_seed(0)
    x = torch.randn(4, 3, dtype=torch.float64, generator=g)
    W = torch.randn(3, 5, dtype=torch.float64, generator=g, requires_grad=True)
    b = torch.randn(1, 5, dtype=torch.float64, generator=g, requires_grad=True)
    f = lambda: torch.tanh(linear(x, W, b)).sum()
    gw, gb = torch.autograd.grad(f(), [W, b])
    num = numeric_grads(f, {"W": W, "b": b}, 1e-5)
    assert max_rel_error({"W": gw, "b": gb}, num) <= 1e-6


def test_ffn_shape_and_grad():
    P = ModelParams(1, "float64")
    register_ffn(P, "f", 4, 8)
    x = torch.randn(3, 4, dtype=torch.float64)
    assert ffn(x, P, "f").shape == (3, 4)
    out, grads = value_and_grad(lambda: (ffn(x, P, "f") ** 2).sum(), P)
    num = numeric_grads(lambda: (ffn(x, P, "f") ** 2).sum(), dict(P.items()), 1e-6)
    assert max_rel_error(grads, num) <= 1e-5


def test_mhsa_single_token():
    P = attn_params()
    x = torch.randn(1, 4, dtype=torch.float64)
    v = linear(x, P["a.v.W"], P["a.v.b"])
    expect = linear(v, P["a.o.W"], P["a.o.b"])
    assert torch.allclose(mhsa(x, P, "a", 2), expect, atol=1e-15)


def test_mhsa_permutation_equivariance():
    P = attn_params(8)
    x = torch.randn(6, 8, dtype=torch.float64)
    perm = torch.randperm(6)
    assert torch.allclose(mhsa(x[perm], P, "a", 4), mhsa(x, P, "a", 4)[perm], atol=1e-12)


def test_mhsa_gradient_fd():
    P = attn_params(4, seed=3)
    x = torch.randn(3, 4, dtype=torch.float64, generator=torch.Generator().manual_seed(5), requires_grad=True)
    f = lambda: (mhsa(x, P, "a", 2) ** 2).sum()
    _, grads = value_and_grad(f, P)
    grads["x"] = torch.autograd.grad(f(), x)[0]
    num = numeric_grads(f, {**dict(P.items()), "x": x}, 1e-6)
    assert max_rel_error(grads, num) <= 1e-5


def test_cross_attn_single_key():
    P = attn_params()
    q = torch.randn(5, 4, dtype=torch.float64)
    kv = torch.randn(1, 4, dtype=torch.float64)
    v = linear(linear(kv, P["a.v.W"], P["a.v.b"]), P["a.o.W"], P["a.o.b"])
    assert torch.allclose(cross_attn(q, kv, P, "a", 2), v.expand(5, 4), atol=1e-15)


def test_cross_attn_kv_permutation_invariance():
    P = attn_params(8, seed=2)
    q = torch.randn(4, 8, dtype=torch.float64)
    kv = torch.randn(7, 8, dtype=torch.float64)
    perm = torch.randperm(7)
    assert (cross_attn(q, kv[perm], P, "a", 2) - cross_attn(q, kv, P, "a", 2)).abs().max() <= 1e-6


def test_cross_attn_gradient_fd():
    P = attn_params(4, seed=4)
    gen = torch.Generator().manual_seed(9)
    q = torch.randn(2, 4, dtype=torch.float64, generator=gen)
    kv = torch.randn(3, 4, dtype=torch.float64, generator=gen)
    mask = torch.tensor([True, False, True])
    f = lambda: (cross_attn(q, kv, P, "a", 2, mask) ** 2).sum()
    _, grads = value_and_grad(f, P)
    assert max_rel_error(grads, numeric_grads(f, dict(P.items()), 1e-6)) <= 1e-5


def test_masked_keys_get_zero_weight():
    P = attn_params(4)
    q = torch.randn(3, 4, dtype=torch.float64)
    kv = torch.randn(5, 4, dtype=torch.float64)
    mask = torch.tensor([True, True, False, True, False])
    base = cross_attn(q, kv, P, "a", 2, mask)
    kv2 = kv.clone()
    kv2[~mask] = 1e6 * torch.randn(2, 4, dtype=torch.float64)
    assert torch.equal(cross_attn(q, kv2, P, "a", 2, mask), base)
    with pytest.raises(ValueError):
        cross_attn(q, kv, P, "a", 2, torch.zeros(5, dtype=torch.bool))


def test_bce_examples():
    t = torch.tensor([[1.0, 0.0], [0.0, 1.0]], dtype=torch.float64)
    assert float(bce(t.clone(), t)) <= 1e-6
    half = torch.full((2, 2), 0.5, dtype=torch.float64)
    assert math.isclose(float(bce(half, t)), math.log(2), rel_tol=1e-12)
    assert float(bce(half, t, weight=torch.zeros_like(t))) == 0.0
    w = torch.tensor([[1.0, 0.0], [0.0, 0.0]], dtype=torch.float64)
    p = torch.tensor([[0.8, 0.3], [0.1, 0.6]], dtype=torch.float64)
    assert math.isclose(float(bce(p, t, weight=w)), -math.log(0.8), rel_tol=1e-12)


def test_bce_empty_support_has_finite_gradient():
    p = torch.full((2, 2), 0.3, dtype=torch.float64, requires_grad=True)
    loss = bce(p, torch.zeros(2, 2, dtype=torch.float64), weight=torch.zeros(2, 2, dtype=torch.float64))
    (g,) = torch.autograd.grad(loss, p)
    assert torch.all(g == 0)


def quad_params(x0):
    P = ModelParams(0, "float64")
    P.add("x", 1, 1, init="zeros")
    with torch.no_grad():
        P["x"].fill_(x0)
    return P


def test_adam_zero_gradient():
    P = quad_params(1.5)
    st = AdamState.zeros_like(P)
    adam_step(P, {"x": torch.zeros(1, 1, dtype=torch.float64)}, st, lr=0.1)
    assert P["x"].item() == 1.5 and st.step == 1


def test_adam_constant_gradient_step():
    P = quad_params(0.0)
    st = AdamState.zeros_like(P)
    prev = 0.0
    for _ in range(200):
        adam_step(P, {"x": torch.full((1, 1), -3.0, dtype=torch.float64)}, st, lr=1e-3)
        cur = P["x"].item()
        step, prev = cur - prev, cur
    assert math.isclose(step, 1e-3, rel_tol=1e-6)


def test_adam_quadratic_convergence():
    P = quad_params(3.0)
    st = AdamState.zeros_like(P)
    for n in range(1, 2001):
        _, g = value_and_grad(lambda: ((P["x"] - 1.0) ** 2).sum(), P)
        adam_step(P, g, st, lr=1e-2)
        if abs(P["x"].item() - 1.0) < 1e-4:
            break
    assert abs(P["x"].item() - 1.0) < 1e-4 and n <= 2000


def test_adam_closed_form_first_step():
    # the first bias-corrected step is lr * g / (|g| + eps)
    P = quad_params(0.0)
    st = AdamState.zeros_like(P)
    adam_step(P, {"x": torch.full((1, 1), 0.25, dtype=torch.float64)}, st, lr=0.01)
    assert math.isclose(P["x"].item(), -0.01 * 0.25 / (0.25 + 1e-8), rel_tol=1e-12)


def test_param_init_is_per_name():
    A = ModelParams(7, "float64")
    A.linear("l1", 4, 3)
    B = ModelParams(7, "float64")
    B.linear("other", 5, 5)
    B.linear("l1", 4, 3)
    assert torch.equal(A["l1.W"], B["l1.W"])
    assert torch.all(A["l1.b"] == 0)
    assert A["l1.W"].abs().max().item() <= 0.5
    C = ModelParams(8, "float64")
    C.linear("l1", 4, 3)
    assert not torch.equal(A["l1.W"], C["l1.W"])
    with pytest.raises(KeyError):
        A.linear("l1", 4, 3)


def test_flat_round_trip():
    P = attn_params(4)
    v = P.flat()
    P.set_flat(v * 2)
    assert np.array_equal(P.flat(), v * 2)
    assert len(v) == P.n_params == 4 * (16 + 4)


def test_unused_parameter_gets_zero_grad():
    P = attn_params(4)
    P.add("unused", 2, 2)
    _, g = value_and_grad(lambda: mhsa(torch.ones(2, 4, dtype=torch.float64), P, "a", 2).sum(), P)
    assert torch.all(g["unused"] == 0)


def test_checkpoint_round_trip(tmp_path):
    P = attn_params(4)
    arrays = P.numpy()
    m = {k: v * 0.5 for k, v in arrays.items()}
    v = {k: v**2 for k, v in arrays.items()}
    h = config_hash({"kind": "x", "net": {"d": 4}})
    save_checkpoint(tmp_path / "c.ckpt", arrays, m, v, {"epoch": 3}, h)
    meta, p2, m2, v2, h2 = load_checkpoint(tmp_path / "c.ckpt", h)
    assert meta["epoch"] == 3 and h2 == h
    for k in arrays:
        assert np.array_equal(p2[k], arrays[k]) and np.array_equal(m2[k], m[k]) and np.array_equal(v2[k], v[k])
    with pytest.raises(ConfigHashMismatch):
        load_checkpoint(tmp_path / "c.ckpt", config_hash({"kind": "y"}))
    raw = (tmp_path / "c.ckpt").read_bytes()
    (tmp_path / "bad.ckpt").write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "bad.ckpt")
    (tmp_path / "cut.ckpt").write_bytes(raw[:-10])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "cut.ckpt")


def test_checkpoint_layout(tmp_path):
    arrays = {"w": np.array([[1.0, 2.0]])}
    save_checkpoint(tmp_path / "c.ckpt", arrays, arrays, arrays, {}, b"\0" * 32)
    raw = (tmp_path / "c.ckpt").read_bytes()
    assert raw[:4] == b"OCGC"
    assert np.frombuffer(raw[-16:], "<f8").tolist() == [1.0, 2.0]


def test_config_hash_canonical():
    assert config_hash({"a": 1, "b": [1, 2]}) == config_hash({"b": [1, 2], "a": 1})
    assert len(config_hash({"a": 1})) == 32
