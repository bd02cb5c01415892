"""Fused differentiable building blocks over batched (..., n, d) tensors."""
from __future__ import annotations

import math

import torch

LN_EPS = 1e-5
BCE_CLAMP = 1e-7


class ShapeError(ValueError):
    pass


def linear(x, W, b=None):
    if x.shape[-1] != W.shape[0]:
        raise ShapeError(f"linear: input {tuple(x.shape)} incompatible with weight {tuple(W.shape)}")
    y = x @ W
    return y if b is None else y + b.reshape(-1)


def layer_norm(x, gain, bias, eps=LN_EPS):
    if x.shape[-1] != gain.shape[-1]:
        raise ShapeError(f"layer_norm: input {tuple(x.shape)} incompatible with gain {tuple(gain.shape)}")
    mu = x.mean(dim=-1, keepdim=True)
    var = ((x - mu) ** 2).mean(dim=-1, keepdim=True)
    return (x - mu) / torch.sqrt(var + eps) * gain.reshape(-1) + bias.reshape(-1)


def ffn(x, P, prefix):
    h = torch.relu(linear(x, P[f"{prefix}.fc1.W"], P[f"{prefix}.fc1.b"]))
    return linear(h, P[f"{prefix}.fc2.W"], P[f"{prefix}.fc2.b"])


def register_attention(P, prefix, d):
    for k in ("q", "k", "v", "o"):
        P.linear(f"{prefix}.{k}", d, d)


def register_ffn(P, prefix, d, hidden):
    P.linear(f"{prefix}.fc1", d, hidden)
    P.linear(f"{prefix}.fc2", hidden, d)


def attention(q_in, kv_in, P, prefix, heads, key_mask=None):
    """Multi-head scaled dot-product attention.

    q_in: (..., nq, d); kv_in: (..., nk, d); key_mask: (..., nk) bool, True = attend.
    Masked keys get exactly zero weight.
    """
    d = q_in.shape[-1]
    if kv_in.shape[-1] != d:
        raise ShapeError(f"attention: query width {d} != key width {kv_in.shape[-1]}")
    if d % heads:
        raise ShapeError(f"attention: heads={heads} does not divide d={d}")
    dh = d // heads
    lead = q_in.shape[:-2]
    nq, nk = q_in.shape[-2], kv_in.shape[-2]

    def split(t, n):
        return t.reshape(*lead, n, heads, dh).transpose(-3, -2)

    q = split(linear(q_in, P[f"{prefix}.q.W"], P[f"{prefix}.q.b"]), nq)
    k = split(linear(kv_in, P[f"{prefix}.k.W"], P[f"{prefix}.k.b"]), nk)
    v = split(linear(kv_in, P[f"{prefix}.v.W"], P[f"{prefix}.v.b"]), nk)
    scores = q @ k.transpose(-1, -2) / math.sqrt(dh)
    if key_mask is not None:
        if key_mask.shape[-1] != nk:
            raise ShapeError(f"attention: key mask {tuple(key_mask.shape)} does not match {nk} keys")
        if not bool(key_mask.any(dim=-1).all()):
            raise ValueError("attention: a query row has every key masked")
        m = key_mask.unsqueeze(-2).unsqueeze(-2)
        scores = scores.masked_fill(~m, float("-inf"))
    w = torch.softmax(scores, dim=-1)
    out = (w @ v).transpose(-3, -2).reshape(*lead, nq, d)
    return linear(out, P[f"{prefix}.o.W"], P[f"{prefix}.o.b"])


def mhsa(x, P, prefix, heads, key_mask=None):
    return attention(x, x, P, prefix, heads, key_mask)


def cross_attn(q, kv, P, prefix, heads, kv_mask=None):
    return attention(q, kv, P, prefix, heads, kv_mask)


def bce(pred, target, weight=None, dims=None):
    """Mean binary cross-entropy over the weighted elements; 0 when no weight.

    With ``dims`` the reduction runs over those axes only, one value per
    remaining index.
    """
    if pred.shape != target.shape or (weight is not None and weight.shape != pred.shape):
        raise ShapeError(f"bce: shapes {tuple(pred.shape)}, {tuple(target.shape)} differ")
    p = pred.clamp(BCE_CLAMP, 1 - BCE_CLAMP)
    loss = -(target * torch.log(p) + (1 - target) * torch.log1p(-p))
    dims = tuple(range(pred.dim())) if dims is None else tuple(dims)
    if weight is None:
        return loss.mean(dim=dims)
    total = weight.sum(dim=dims)
    num = (loss * weight).sum(dim=dims)
    return torch.where(total > 0, num / total.clamp_min(torch.finfo(total.dtype).tiny), torch.zeros_like(num))
