"""Vector-input occlusion network: polylines in, occupancy probabilities out."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np
import torch

from .grid import check_patch, unpatchify_array
from .nn import ModelParams, attention, bce, cross_attn, ffn, layer_norm, linear, mhsa
from .nn.ops import register_attention, register_ffn
from .vectors import VectorClass

N_INPUT = 10  # 4 coords, 3-way class one-hot, 3 attribute slots
COORD_SCALE = 0.05
ATTR_SCALE = (0.1, 0.2, 1.0)

ABLATIONS = {
    "traj": (True, False, False),
    "traj+occ": (True, False, True),
    "traj+env": (True, True, False),
    "all": (True, True, True),
}


class NetConfigError(ValueError):
    pass


@dataclass(frozen=True)
class NetConfig:
    d_model: int = 128
    heads: int = 8
    encoder_layers: int = 6
    decoder_blocks: int = 3
    patch: int = 10
    height: int = 70
    width: int = 60
    alpha: float = 1.0
    beta: float = 0.1
    ffn_mult: int = 4
    max_polylines: int = 64
    max_vectors: int = 96
    include_traj: bool = True
    include_env: bool = True
    include_occ: bool = True
    precision: str = "float32"

    def __post_init__(self):
        if self.d_model % self.heads:
            raise NetConfigError(f"heads={self.heads} must divide d_model={self.d_model}")
        try:
            check_patch(self.height, self.width, self.patch)
        except ValueError as exc:
            raise NetConfigError(str(exc)) from exc
        if self.alpha < 0 or self.beta < 0:
            raise NetConfigError("loss weights must be non-negative")
        if not self.include_traj:
            raise NetConfigError("trajectory polylines cannot be excluded")
        if self.precision not in ("float32", "float64"):
            raise NetConfigError(f"unknown precision {self.precision!r}")

    @property
    def n_patches(self) -> int:
        return (self.height // self.patch) * (self.width // self.patch)

    @property
    def include(self):
        return {VectorClass.TRAJECTORY: self.include_traj, VectorClass.SCENE_CONTEXT: self.include_env,
                VectorClass.OCCLUSION: self.include_occ}

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise NetConfigError(f"unknown NetConfig fields: {sorted(unknown)}")
        return cls(**d)

    def with_ablation(self, name):
        if name not in ABLATIONS:
            raise NetConfigError(f"unknown ablation {name!r}; choose from {sorted(ABLATIONS)}")
        t, e, o = ABLATIONS[name]
        return type(self)(**{**self.to_dict(), "include_traj": t, "include_env": e, "include_occ": o})

    @property
    def ablation(self):
        for name, flags in ABLATIONS.items():
            if flags == (self.include_traj, self.include_env, self.include_occ):
                return name
        return "custom"


class PolylineBatch:
    """Padded tensors for a batch of samples.

    features (B, P, V, 10), vector_mask (B, P, V), polyline_mask (B, P), types (B, P).
    """

    def __init__(self, features, vector_mask, polyline_mask, types):
        self.features = features
        self.vector_mask = vector_mask
        self.polyline_mask = polyline_mask
        self.types = types

    def to(self, dtype):
        return PolylineBatch(self.features.to(dtype), self.vector_mask, self.polyline_mask, self.types)


def vector_features(rows: np.ndarray) -> np.ndarray:
    """Raw (m, 8) vector rows -> (m, 10) network inputs."""
    rows = np.asarray(rows, dtype=np.float64)
    onehot = np.eye(3)[rows[:, 4].astype(int)]
    attrs = rows[:, 5:8] * np.asarray(ATTR_SCALE)
    return np.column_stack([rows[:, :4] * COORD_SCALE, onehot, attrs])


def select_polylines(sample, cfg: NetConfig):
    inc = cfg.include
    chosen = [p for p in sample.polylines if inc[p.type]]
    if not chosen:
        raise ValueError(f"sample {sample.sample_id!r} has no polylines after filtering")
    if len(chosen) > cfg.max_polylines:
        raise ValueError(f"sample {sample.sample_id!r} has {len(chosen)} polylines, limit {cfg.max_polylines}")
    for p in chosen:
        if len(p) > cfg.max_vectors:
            raise ValueError(f"polyline {p.id!r} has {len(p)} vectors, limit {cfg.max_vectors}")
    return chosen


def batch_polylines(samples, cfg: NetConfig, extra_padding: int = 0) -> PolylineBatch:
    per = [select_polylines(s, cfg) for s in samples]
    P = max(len(x) for x in per) + extra_padding
    V = max(len(p) for x in per for p in x)
    B = len(samples)
    feats = np.zeros((B, P, V, N_INPUT))
    vmask = np.zeros((B, P, V), dtype=bool)
    pmask = np.zeros((B, P), dtype=bool)
    types = np.zeros((B, P), dtype=np.int64)
    for b, lines in enumerate(per):
        for i, p in enumerate(lines):
            m = len(p)
            feats[b, i, :m] = vector_features(p.features)
            vmask[b, i, :m] = True
            pmask[b, i] = True
            types[b, i] = int(p.type)
    return PolylineBatch(torch.tensor(feats, dtype=torch.float64), torch.tensor(vmask), torch.tensor(pmask),
                         torch.tensor(types))


def init_params(cfg: NetConfig, seed: int = 0) -> ModelParams:
    d = cfg.d_model
    P = ModelParams(seed, cfg.precision)
    P.linear("vec.mlp1", N_INPUT, d)
    P.linear("vec.mlp2", d, d)
    P.add("vec.pos", cfg.max_vectors, d, fan_in=d)
    P.add("poly.token", 1, d, fan_in=d)
    register_attention(P, "poly.attn", d)
    P.layer_norm("poly.ln", d)
    P.add("type.emb", 3, d, fan_in=d)
    add_encoder(P, "enc", cfg)
    pp = cfg.patch * cfg.patch
    P.add("dec.query_pos", cfg.n_patches, pp, fan_in=pp)
    P.linear("dec.proj", pp, d)
    register_attention(P, "dec.sa0.attn", d)
    P.layer_norm("dec.sa0.ln", d)
    for j in range(cfg.decoder_blocks):
        register_attention(P, f"dec{j}.ca", d)
        P.layer_norm(f"dec{j}.ca_ln", d)
        register_attention(P, f"dec{j}.sa", d)
        P.layer_norm(f"dec{j}.sa_ln", d)
    P.linear("dec.head", d, pp)
    return P


def add_encoder(P: ModelParams, prefix, cfg: NetConfig):
    d = cfg.d_model
    for i in range(cfg.encoder_layers):
        register_attention(P, f"{prefix}{i}.attn", d)
        P.layer_norm(f"{prefix}{i}.ln1", d)
        register_ffn(P, f"{prefix}{i}.ffn", d, cfg.ffn_mult * d)
        P.layer_norm(f"{prefix}{i}.ln2", d)


def encoder_stack(x, P, prefix, cfg: NetConfig, key_mask=None):
    """Post-norm transformer encoder layers: LN(x + MSA(x)), LN(x + FFN(x))."""
    for i in range(cfg.encoder_layers):
        x = layer_norm(x + mhsa(x, P, f"{prefix}{i}.attn", cfg.heads, key_mask), P[f"{prefix}{i}.ln1.g"], P[f"{prefix}{i}.ln1.b"])
        x = layer_norm(x + ffn(x, P, f"{prefix}{i}.ffn"), P[f"{prefix}{i}.ln2.g"], P[f"{prefix}{i}.ln2.b"])
    return x


def embed_vectors(features, P, positions=None):
    """(..., m, 10) -> (..., m, d): two-layer MLP plus within-polyline position embedding.

    ``positions`` overrides the default 0..m-1 indices (used for packed rows).
    """
    m = features.shape[-2]
    h = torch.relu(linear(features, P["vec.mlp1.W"], P["vec.mlp1.b"]))
    h = linear(h, P["vec.mlp2.W"], P["vec.mlp2.b"])
    table = P["vec.pos"]
    if positions is None:
        if m > table.shape[0]:
            raise ValueError(f"{m} vectors exceed the position table ({table.shape[0]})")
        return h + table[:m]
    return h + table[positions]


def encode_polyline(embedded, P, heads, vector_mask=None):
    """Aggregate (..., m, d) vector embeddings onto the learnable token -> (..., d).

    Only the token row of the attention layer is returned, so only the token
    issues a query.
    """
    lead = embedded.shape[:-2]
    tok = P["poly.token"].expand(*lead, 1, embedded.shape[-1])
    x = torch.cat([tok, embedded], dim=-2)
    mask = None
    if vector_mask is not None:
        mask = torch.cat([torch.ones(*lead, 1, dtype=torch.bool), vector_mask], dim=-1)
    y = layer_norm(tok + attention(tok, x, P, "poly.attn", heads, mask), P["poly.ln.g"], P["poly.ln.b"])
    return y[..., 0, :]


def interaction_encoder(feats, types, P, cfg: NetConfig, polyline_mask=None):
    if polyline_mask is not None and not bool(polyline_mask.any(dim=-1).all()):
        raise ValueError("interaction encoder: a sample has only padded polylines")
    x = feats + P["type.emb"][types]
    return encoder_stack(x, P, "enc", cfg, polyline_mask)


def decode_logits(encoded, P, cfg: NetConfig, polyline_mask=None):
    """(B, n, d) encoded polylines -> (B, N_p, p*p) logits."""
    B = encoded.shape[0]
    q = P["dec.query_pos"].expand(B, -1, -1)  # zero-content queries plus positions
    x = linear(q, P["dec.proj.W"], P["dec.proj.b"])
    x = layer_norm(x + mhsa(x, P, "dec.sa0.attn", cfg.heads), P["dec.sa0.ln.g"], P["dec.sa0.ln.b"])
    for j in range(cfg.decoder_blocks):
        x = layer_norm(x + cross_attn(x, encoded, P, f"dec{j}.ca", cfg.heads, polyline_mask),
                       P[f"dec{j}.ca_ln.g"], P[f"dec{j}.ca_ln.b"])
        x = layer_norm(x + mhsa(x, P, f"dec{j}.sa", cfg.heads), P[f"dec{j}.sa_ln.g"], P[f"dec{j}.sa_ln.b"])
    return linear(x, P["dec.head.W"], P["dec.head.b"])


def decode(encoded, P, cfg: NetConfig, polyline_mask=None):
    logits = decode_logits(encoded, P, cfg, polyline_mask)
    return unpatchify_array(torch.sigmoid(logits), cfg.patch, cfg.height, cfg.width)


def forward_batch(batch: PolylineBatch, P, cfg: NetConfig):
    """PolylineBatch -> (B, H, W) occupancy probabilities."""
    dtype = P["vec.pos"].dtype
    B, NP, V, _ = batch.features.shape
    vm = batch.vector_mask
    # the vector MLP is row-wise, so run it on real vectors only
    packed = batch.features[vm].to(dtype)
    pos = torch.arange(V).expand(B, NP, V)[vm]
    rows = embed_vectors(packed, P, positions=pos)
    idx = vm.nonzero(as_tuple=True)
    emb = torch.zeros(B, NP, V, cfg.d_model, dtype=dtype).index_put(idx, rows)
    h = encode_polyline(emb, P, cfg.heads, vm)
    enc = interaction_encoder(h, batch.types, P, cfg, batch.polyline_mask)
    return decode(enc, P, cfg, batch.polyline_mask)


def forward(sample, P, cfg: NetConfig):
    return forward_batch(batch_polylines([sample], cfg), P, cfg)[0]


def loss_terms(pred, gt, mask, alpha, beta):
    """Batch-mean (total, global, mask, occ) losses for (B, H, W) tensors."""
    if pred.shape != gt.shape or gt.shape != mask.shape:
        raise ValueError(f"loss: shapes {tuple(pred.shape)}, {tuple(gt.shape)}, {tuple(mask.shape)} differ")
    if pred.dim() == 2:
        pred, gt, mask = pred[None], gt[None], mask[None]
    dims = (-2, -1)
    l_global = bce(pred, gt, dims=dims).mean()
    l_mask = bce(pred, gt, weight=mask, dims=dims).mean()
    l_occ = ((gt - pred) * gt).sum(dim=dims).mean()
    total = l_global + alpha * l_mask + beta * l_occ
    return total, l_global, l_mask, l_occ
