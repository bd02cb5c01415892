"""Image-based baseline: an annotated input OGM through a patch transformer."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .grid import check_patch, ego_cell_centers, patchify_array, unpatchify_array
from .model import NetConfig, add_encoder, encoder_stack
from .nn import ModelParams, cross_attn, ffn, layer_norm, linear, mhsa
from .nn.ops import register_attention, register_ffn

ALPHABET = np.round(np.concatenate([np.arange(0, 11) / 10.0, [2.0]]), 1)
OCCLUDED = 2.0


class AnnotationError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class AnnotatedOgm:
    """Cells in {0, 0.1, ..., 0.9, 1, 2}: history recency, current occupancy, occlusion."""

    cells: np.ndarray

    def __post_init__(self):
        cells = np.array(self.cells, dtype=np.float64, copy=True)
        check_alphabet(cells)
        cells.setflags(write=False)
        object.__setattr__(self, "cells", cells)

    @property
    def mask(self):
        return (self.cells == OCCLUDED).astype(np.float64)


def check_alphabet(cells):
    if not np.all(np.isin(np.round(cells, 10), ALPHABET)) or not np.allclose(cells, np.round(cells, 1)):
        raise AnnotationError("annotated OGM holds values outside {0, 0.1, ..., 1, 2}")


def annotate(sample) -> AnnotatedOgm:
    """Stamp visible vehicles' past footprints, current footprints, then occlusion."""
    centers = ego_cell_centers(sample.frame, sample.grid)
    out = np.zeros(sample.grid.shape)
    visible = [a for a in sample.agents if a.visible]
    for k in range(9, 0, -1):
        value = (10 - k) / 10.0
        for agent in visible:
            fp = agent.footprint_at(-k)
            if fp is not None:
                out[fp.contains(centers)] = value
    for agent in visible:
        fp = agent.footprint_at(0)
        if fp is not None:
            out[fp.contains(centers)] = 1.0
    out[sample.mask.cells == 1] = OCCLUDED
    return AnnotatedOgm(out)


def init_baseline_params(cfg: NetConfig, seed: int = 0) -> ModelParams:
    d = cfg.d_model
    pp = cfg.patch * cfg.patch
    P = ModelParams(seed, cfg.precision)
    P.linear("bl.patch", pp, d)
    P.add("bl.pos", cfg.n_patches, d, fan_in=d)
    add_encoder(P, "blenc", cfg)
    P.add("bl.cls", 1, d, fan_in=d)
    for j in range(cfg.decoder_blocks):
        register_attention(P, f"bldec{j}.sa", d)
        P.layer_norm(f"bldec{j}.sa_ln", d)
        register_attention(P, f"bldec{j}.ca", d)
        P.layer_norm(f"bldec{j}.ca_ln", d)
        register_ffn(P, f"bldec{j}.ffn", d, cfg.ffn_mult * d)
        P.layer_norm(f"bldec{j}.ffn_ln", d)
    P.linear("bl.head", d, pp)
    return P


def baseline_forward(cells, P, cfg: NetConfig):
    """(B, H, W) annotated grids -> (B, H, W) occupancy probabilities."""
    x = torch.as_tensor(cells, dtype=P["bl.pos"].dtype)
    if x.dim() == 2:
        x = x[None]
    check_patch(x.shape[-2], x.shape[-1], cfg.patch)
    B = x.shape[0]
    tokens = linear(patchify_array(x, cfg.patch), P["bl.patch.W"], P["bl.patch.b"]) + P["bl.pos"]
    enc = encoder_stack(tokens, P, "blenc", cfg)
    memory = torch.cat([P["bl.cls"].expand(B, 1, -1), enc], dim=1)
    y = enc
    for j in range(cfg.decoder_blocks):
        y = layer_norm(y + mhsa(y, P, f"bldec{j}.sa", cfg.heads), P[f"bldec{j}.sa_ln.g"], P[f"bldec{j}.sa_ln.b"])
        y = layer_norm(y + cross_attn(y, memory, P, f"bldec{j}.ca", cfg.heads), P[f"bldec{j}.ca_ln.g"], P[f"bldec{j}.ca_ln.b"])
        y = layer_norm(y + ffn(y, P, f"bldec{j}.ffn"), P[f"bldec{j}.ffn_ln.g"], P[f"bldec{j}.ffn_ln.b"])
    logits = linear(y, P["bl.head.W"], P["bl.head.b"])
    return unpatchify_array(torch.sigmoid(logits), cfg.patch, x.shape[-2], x.shape[-1])
