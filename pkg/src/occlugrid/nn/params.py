"""Named parameter registry with per-name deterministic initialization."""
from __future__ import annotations

import zlib
from collections import OrderedDict

import numpy as np
import torch

DTYPES = {"float32": torch.float32, "float64": torch.float64}


def name_rng(seed: int, name: str) -> np.random.Generator:
    # one stream per (seed, name): registering a parameter never reshuffles the others
    return np.random.default_rng([int(seed) & 0xFFFFFFFFFFFFFFFF, zlib.crc32(name.encode())])


class ModelParams:
    """Ordered mapping of parameter name to a 2-D tensor."""

    def __init__(self, seed: int = 0, dtype: str = "float32"):
        self.seed = int(seed)
        self.dtype = dtype
        self._tensors: "OrderedDict[str, torch.Tensor]" = OrderedDict()

    def add(self, name, rows, cols, init="uniform", fan_in=None):
        if name in self._tensors:
            raise KeyError(f"duplicate parameter name {name!r}")
        if init == "uniform":
            bound = 1.0 / np.sqrt(fan_in if fan_in is not None else rows)
            values = name_rng(self.seed, name).uniform(-bound, bound, size=(rows, cols))
        elif init == "zeros":
            values = np.zeros((rows, cols))
        elif init == "ones":
            values = np.ones((rows, cols))
        else:
            raise ValueError(f"unknown init {init!r}")
        self._tensors[name] = torch.tensor(values, dtype=DTYPES[self.dtype], requires_grad=True)
        return self._tensors[name]

    def linear(self, name, d_in, d_out):
        self.add(f"{name}.W", d_in, d_out, fan_in=d_in)
        self.add(f"{name}.b", 1, d_out, init="zeros")

    def layer_norm(self, name, d):
        self.add(f"{name}.g", 1, d, init="ones")
        self.add(f"{name}.b", 1, d, init="zeros")

    def __getitem__(self, name) -> torch.Tensor:
        return self._tensors[name]

    def __contains__(self, name):
        return name in self._tensors

    def __iter__(self):
        return iter(self._tensors)

    def __len__(self):
        return len(self._tensors)

    def items(self):
        return self._tensors.items()

    def names(self):
        return list(self._tensors)

    @property
    def n_params(self) -> int:
        return sum(t.numel() for t in self._tensors.values())

    def offsets(self):
        """name -> (start, stop) into the flat parameter vector."""
        out, pos = {}, 0
        for name, t in self._tensors.items():
            out[name] = (pos, pos + t.numel())
            pos += t.numel()
        return out

    def flat(self) -> np.ndarray:
        return np.concatenate([t.detach().cpu().numpy().ravel().astype(np.float64) for t in self._tensors.values()])

    def set_flat(self, vec):
        vec = np.asarray(vec, dtype=np.float64)
        for name, (a, b) in self.offsets().items():
            t = self._tensors[name]
            with torch.no_grad():
                t.copy_(torch.tensor(vec[a:b].reshape(t.shape), dtype=t.dtype))

    def numpy(self):
        return OrderedDict((k, v.detach().cpu().numpy().astype(np.float64)) for k, v in self._tensors.items())

    def load_numpy(self, arrays):
        missing = set(self._tensors) ^ set(arrays)
        if missing:
            raise KeyError(f"parameter set mismatch: {sorted(missing)}")
        for name, arr in arrays.items():
            t = self._tensors[name]
            if tuple(arr.shape) != tuple(t.shape):
                raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {tuple(t.shape)}")
            with torch.no_grad():
                t.copy_(torch.tensor(arr, dtype=t.dtype))

    def grads_like_zero(self):
        return OrderedDict((k, torch.zeros_like(v)) for k, v in self._tensors.items())


def value_and_grad(fn, params: ModelParams):
    """Run ``fn()`` and backpropagate; unused parameters get exact zero gradients."""
    for t in params._tensors.values():
        t.grad = None
    out = fn()
    value = out[0] if isinstance(out, tuple) else out
    tensors = list(params._tensors.values())
    grads = torch.autograd.grad(value, tensors, allow_unused=True)
    named = OrderedDict()
    for (name, t), g in zip(params._tensors.items(), grads):
        named[name] = torch.zeros_like(t) if g is None else g
    return out, named
