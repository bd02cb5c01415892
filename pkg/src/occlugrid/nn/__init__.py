from .checkpoint import CheckpointError, ConfigHashMismatch, config_hash, load_checkpoint, save_checkpoint
from .ops import ShapeError, attention, bce, cross_attn, ffn, layer_norm, linear, mhsa
from .optim import AdamState, adam_step
from .params import ModelParams, name_rng, value_and_grad

__all__ = [
    "AdamState",
    "CheckpointError",
    "ConfigHashMismatch",
    "ModelParams",
    "ShapeError",
    "adam_step",
    "attention",
    "bce",
    "config_hash",
    "cross_attn",
    "ffn",
    "layer_norm",
    "linear",
    "load_checkpoint",
    "mhsa",
    "name_rng",
    "save_checkpoint",
    "value_and_grad",
]
