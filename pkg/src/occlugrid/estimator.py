"""scikit-learn compatible estimators around the vector model and the image baseline."""
from __future__ import annotations

import logging

import numpy as np
import torch
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from . import metrics
from .baseline import OCCLUDED, annotate, baseline_forward, check_alphabet, init_baseline_params
from .model import NetConfig, batch_polylines, forward_batch, init_params, loss_terms
from .nn import AdamState, adam_step, config_hash, load_checkpoint, save_checkpoint, value_and_grad
from .nn.params import DTYPES
from .scene import SceneSample

log = logging.getLogger(__name__)

NET_FIELDS = ("d_model", "heads", "encoder_layers", "decoder_blocks", "patch", "alpha", "beta", "ffn_mult", "precision")


def check_samples(X):
    if isinstance(X, SceneSample):
        X = [X]
    X = list(X)
    if not X:
        raise ValueError("expected at least one SceneSample")
    for s in X:
        if not isinstance(s, SceneSample):
            raise TypeError(f"expected SceneSample, got {type(s).__name__}")
    shapes = {s.mask.cells.shape for s in X}
    if len(shapes) != 1:
        raise ValueError(f"samples have mixed grid shapes: {sorted(shapes)}")
    return X


def check_grids(y, n=None, shape=None, name="y", binary=False):
    arr = np.asarray(y, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise ValueError(f"{name} must be (n, H, W), got shape {arr.shape}")
    if n is not None and arr.shape[0] != n:
        raise ValueError(f"{name} has {arr.shape[0]} grids, expected {n}")
    if shape is not None and arr.shape[1:] != tuple(shape):
        raise ValueError(f"{name} grids are {arr.shape[1:]}, expected {tuple(shape)}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite values")
    if binary and not np.all((arr == 0) | (arr == 1)):
        raise ValueError(f"{name} must be binary")
    return arr


def ground_truth_stack(samples):
    return np.stack([s.ground_truth.cells for s in check_samples(samples)])


def mask_stack(samples):
    return np.stack([s.mask.cells for s in check_samples(samples)])


class _GridEstimator(BaseEstimator):
    """Shared Adam training loop; subclasses provide inputs and the forward pass."""

    kind = ""

    def _net_config(self) -> NetConfig:
        raise NotImplementedError

    def _init_params(self, cfg):
        raise NotImplementedError

    def _prepare(self, X):
        """-> (inputs, mask array, default ground truth or None, n)."""
        raise NotImplementedError

    def _forward(self, inputs, idx):
        raise NotImplementedError

    def _check_fitted(self):
        if not hasattr(self, "params_"):
            raise NotFittedError(f"{type(self).__name__} is not fitted yet")

    @property
    def config_(self) -> dict:
        return {"kind": self.kind, "net": self._net_config().to_dict()}

    def init_state(self):
        cfg = self._net_config()
        self.net_config_ = cfg
        self.params_ = self._init_params(cfg)
        self.opt_state_ = AdamState.zeros_like(self.params_)
        self.epoch_ = 0
        self.history_ = []
        return self

    def fit(self, X, y=None, eval_set=None, callback=None):
        """Train until ``epochs`` total epochs have run.

        With ``warm_start`` a fitted estimator continues from ``epoch_``.
        ``eval_set`` is an (X, y) pair scored after every epoch; ``callback``
        receives (estimator, epoch record) and may write checkpoints.
        """
        previous = torch.get_num_threads()
        if self.threads:
            torch.set_num_threads(int(self.threads))
        try:
            return self._fit(X, y, eval_set, callback)
        finally:
            torch.set_num_threads(previous)

    def _fit(self, X, y, eval_set, callback):
        inputs, mask, gt_default, n = self._prepare(X)
        gt = gt_default if y is None else check_grids(y, n, mask.shape[1:], binary=True)
        if gt is None:
            raise ValueError("ground truth y is required")
        if not (self.warm_start and hasattr(self, "params_")):
            self.init_state()
        cfg = self.net_config_
        dtype = DTYPES[cfg.precision]
        gt_t = torch.tensor(gt, dtype=dtype)
        mask_t = torch.tensor(mask, dtype=dtype)
        while self.epoch_ < self.epochs:
            order = np.random.default_rng([self.seed, self.epoch_]).permutation(n)
            sums = np.zeros(4)
            for start in range(0, n, self.batch_size):
                idx = order[start:start + self.batch_size]
                ti = torch.as_tensor(idx)

                def step():
                    pred = self._forward(inputs, idx)
                    return loss_terms(pred, gt_t[ti], mask_t[ti], cfg.alpha, cfg.beta)

                terms, grads = value_and_grad(step, self.params_)
                adam_step(self.params_, grads, self.opt_state_, lr=self.lr)
                sums += np.array([float(t.detach()) for t in terms]) * len(idx)
            self.epoch_ += 1
            rec = dict(zip(("epoch", "loss", "l_global", "l_mask", "l_occ"), [self.epoch_, *(sums / n).tolist()]))
            if eval_set is not None:
                rep = self.evaluate(*eval_set)
                rec.update(acc=rep.overall.accuracy, mse=rep.overall.mse, is_score=rep.overall.is_score)
            self.history_.append(rec)
            log.info("epoch %d loss %.5f", self.epoch_, rec["loss"])
            if callback is not None:
                callback(self, rec)
        return self

    def predict_proba(self, X):
        self._check_fitted()
        inputs, _, _, n = self._prepare(X)
        out = []
        with torch.no_grad():
            for start in range(0, n, self.batch_size):
                idx = np.arange(start, min(n, start + self.batch_size))
                out.append(self._forward(inputs, idx).double().numpy())
        return np.concatenate(out)

    def predict(self, X):
        return metrics.threshold(self.predict_proba(X))

    def evaluate(self, X, y=None, all_cells=False) -> metrics.MetricReport:
        _, mask, gt_default, n = self._prepare(X)
        gt = gt_default if y is None else check_grids(y, n, mask.shape[1:], binary=True)
        if gt is None:
            raise ValueError("ground truth y is required")
        pred = self.predict_proba(X)
        return metrics.evaluate(pred, gt, mask, all_cells=all_cells)

    def score(self, X, y=None):
        """Overall accuracy on occluded cells."""
        acc = self.evaluate(X, y).overall.accuracy
        return float("nan") if acc is None else acc

    # checkpoints

    def save(self, path, extra=None):
        self._check_fitted()
        meta = {"config": self.config_, "epoch": self.epoch_, "adam_step": self.opt_state_.step,
                "history": self.history_, "estimator": {k: v for k, v in self.get_params().items() if k != "warm_start"}, **(extra or {})}
        save_checkpoint(path, self.params_.numpy(),
                        {k: v.double().numpy() for k, v in self.opt_state_.m.items()},
                        {k: v.double().numpy() for k, v in self.opt_state_.v.items()},
                        meta, config_hash(self.config_))

    def load(self, path, strict=True):
        """Restore parameters and optimizer state; refuses a different network config."""
        expect = config_hash(self.config_) if strict else None
        meta, params, m, v, _ = load_checkpoint(path, expect)
        self.init_state()
        self.params_.load_numpy(params)
        dtype = DTYPES[self.net_config_.precision]
        for k in self.opt_state_.m:
            self.opt_state_.m[k] = torch.tensor(m[k], dtype=dtype)
            self.opt_state_.v[k] = torch.tensor(v[k], dtype=dtype)
        self.opt_state_.step = int(meta["adam_step"])
        self.epoch_ = int(meta["epoch"])
        self.history_ = list(meta.get("history", []))
        return self


class VectorOcclusionModel(_GridEstimator):
    """Occlusion inference from vectorized scenes.

    ``fit`` takes a list of SceneSample; ground truth and occlusion masks come
    from the samples unless ``y`` overrides the ground truth.
    """

    kind = "vector"

    def __init__(self, d_model=128, heads=8, encoder_layers=6, decoder_blocks=3, patch=10, alpha=1.0, beta=0.1,
                 ffn_mult=4, max_polylines=64, max_vectors=96, include_env=True, include_occ=True,
                 precision="float32", lr=1e-4, epochs=10, batch_size=16, seed=0, threads=None, warm_start=False):
        self.d_model = d_model
        self.heads = heads
        self.encoder_layers = encoder_layers
        self.decoder_blocks = decoder_blocks
        self.patch = patch
        self.alpha = alpha
        self.beta = beta
        self.ffn_mult = ffn_mult
        self.max_polylines = max_polylines
        self.max_vectors = max_vectors
        self.include_env = include_env
        self.include_occ = include_occ
        self.precision = precision
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed
        self.threads = threads
        self.warm_start = warm_start

    @classmethod
    def from_config(cls, cfg: NetConfig, **kw):
        net = {k: getattr(cfg, k) for k in NET_FIELDS}
        return cls(**net, max_polylines=cfg.max_polylines, max_vectors=cfg.max_vectors,
                   include_env=cfg.include_env, include_occ=cfg.include_occ, **kw)

    def _net_config(self):
        shape = getattr(self, "grid_shape_", (70, 60))
        return NetConfig(**{k: getattr(self, k) for k in NET_FIELDS}, height=shape[0], width=shape[1],
                         max_polylines=self.max_polylines, max_vectors=self.max_vectors,
                         include_env=self.include_env, include_occ=self.include_occ)

    def _init_params(self, cfg):
        return init_params(cfg, self.seed)

    def _prepare(self, X):
        X = check_samples(X)
        self.grid_shape_ = X[0].mask.cells.shape
        if hasattr(self, "net_config_") and (self.net_config_.height, self.net_config_.width) != self.grid_shape_:
            raise ValueError(f"model grid {self.net_config_.height}x{self.net_config_.width} "
                             f"does not match data grid {self.grid_shape_}")
        return X, mask_stack(X), ground_truth_stack(X), len(X)

    def _forward(self, inputs, idx):
        batch = batch_polylines([inputs[i] for i in idx], self.net_config_)
        return forward_batch(batch, self.params_, self.net_config_)


class OgmAnnotator(TransformerMixin, BaseEstimator):
    """SceneSample list -> (n, H, W) annotated input grids for the baseline."""

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        return np.stack([annotate(s).cells for s in check_samples(X)])


class PatchTransformerOgm(_GridEstimator):
    """Baseline over annotated grids; occlusion mask is read from cells valued 2."""

    kind = "baseline"

    def __init__(self, d_model=128, heads=8, encoder_layers=6, decoder_blocks=3, patch=10, alpha=1.0, beta=0.1,
                 ffn_mult=4, precision="float32", lr=1e-4, epochs=10, batch_size=16, seed=0, threads=None,
                 warm_start=False):
        self.d_model = d_model
        self.heads = heads
        self.encoder_layers = encoder_layers
        self.decoder_blocks = decoder_blocks
        self.patch = patch
        self.alpha = alpha
        self.beta = beta
        self.ffn_mult = ffn_mult
        self.precision = precision
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed
        self.threads = threads
        self.warm_start = warm_start

    @classmethod
    def from_config(cls, cfg: NetConfig, **kw):
        return cls(**{k: getattr(cfg, k) for k in NET_FIELDS}, **kw)

    def _net_config(self):
        shape = getattr(self, "grid_shape_", (70, 60))
        return NetConfig(**{k: getattr(self, k) for k in NET_FIELDS}, height=shape[0], width=shape[1])

    def _init_params(self, cfg):
        return init_baseline_params(cfg, self.seed)

    def _prepare(self, X):
        if isinstance(X, (list, tuple)) and X and isinstance(X[0], SceneSample):
            gt = ground_truth_stack(X)
            X = OgmAnnotator().transform(X)
        else:
            gt = None
        arr = check_grids(X, name="X")
        check_alphabet(arr)
        self.grid_shape_ = arr.shape[1:]
        if hasattr(self, "net_config_") and (self.net_config_.height, self.net_config_.width) != self.grid_shape_:
            raise ValueError(f"model grid {self.net_config_.height}x{self.net_config_.width} "
                             f"does not match data grid {self.grid_shape_}")
        return arr, (arr == OCCLUDED).astype(np.float64), gt, arr.shape[0]

    def _forward(self, inputs, idx):
        return baseline_forward(inputs[idx], self.params_, self.net_config_)


def estimator_for(kind: str, cfg: NetConfig, **kw):
    if kind == "vector":
        return VectorOcclusionModel.from_config(cfg, **kw)
    if kind == "baseline":
        return PatchTransformerOgm.from_config(cfg, **kw)
    raise ValueError(f"unknown model kind {kind!r}")
