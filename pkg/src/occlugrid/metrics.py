"""Per-class occupancy metrics restricted to occluded cells.

Classes: ``occ`` (ground truth occupied), ``free`` (ground truth free) and
``overall``. A class with no supporting cells is reported as ``None``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.ndimage import distance_transform_cdt

CLASSES = ("occ", "free", "overall")
THRESHOLD = 0.5


def _arrays(pred, gt, mask):
    p = np.asarray(getattr(pred, "cells", pred), dtype=np.float64)
    g = np.asarray(getattr(gt, "cells", gt), dtype=np.float64)
    m = np.asarray(getattr(mask, "cells", mask), dtype=np.float64)
    if not (p.shape == g.shape == m.shape):
        raise ValueError(f"metric inputs differ in shape: {p.shape}, {g.shape}, {m.shape}")
    return p, g, m == 1


def _supports(g, m):
    return {"occ": m & (g == 1), "free": m & (g == 0), "overall": m}


def threshold(pred):
    # exactly 0.5 counts as occupied
    return (np.asarray(getattr(pred, "cells", pred)) >= THRESHOLD).astype(np.float64)


def accuracy(pred, gt, mask):
    p, g, m = _arrays(pred, gt, mask)
    correct = threshold(p) == g
    return {k: (float(correct[s].sum() / s.sum()) if s.any() else None) for k, s in _supports(g, m).items()}


def squared_error_sum(pred, gt) -> Fraction:
    """Exact sum of (p - g)^2 over paired float values."""
    num, shift = 0, 0  # running sum is num / 2**shift
    for p, g in zip(np.ravel(pred).tolist(), np.ravel(gt).tolist()):
        a, b = p.as_integer_ratio()  # b is a power of two
        ga, gb = g.as_integer_ratio()
        d = a * gb - ga * b
        s = 2 * ((b * gb).bit_length() - 1)
        if s > shift:
            num <<= s - shift
            shift = s
        num += (d * d) << (shift - s)
    return Fraction(num, 1 << shift)


def mse(pred, gt, mask):
    """Mean squared error, correctly rounded from the exact rational value."""
    p, g, m = _arrays(pred, gt, mask)
    out = {}
    for k, s in _supports(g, m).items():
        out[k] = float(squared_error_sum(p[s], g[s]) / int(s.sum())) if s.any() else None
    return out


def _nearest_l1(src, dst, cap):
    """Mean over src cells of the Manhattan distance to the nearest dst cell."""
    if not src.any():
        return None
    if not dst.any():
        return float(cap)
    dist = distance_transform_cdt(~dst, metric="taxicab")
    return float(dist[src].mean())


def image_similarity(pred_bin, gt_bin, mask):
    """Symmetric nearest-same-class-cell distance between two binary maps."""
    a, b, m = _arrays(pred_bin, gt_bin, mask)
    cap = a.shape[0] + a.shape[1]
    out = {}
    for name, value in (("occ", 1.0), ("free", 0.0)):
        ca, cb = m & (a == value), m & (b == value)
        if not ca.any() and not cb.any():
            out[name] = None
        elif not ca.any() or not cb.any():
            out[name] = 2.0 * cap
        else:
            out[name] = _nearest_l1(ca, cb, cap) + _nearest_l1(cb, ca, cap)
    present = [v for v in out.values() if v is not None]
    out["overall"] = float(np.mean(present)) if present else None
    return out


@dataclass
class ClassStats:
    count: int = 0
    correct: int = 0
    sq_err: Fraction = Fraction(0)
    is_values: list = field(default_factory=list)

    @property
    def accuracy(self):
        return self.correct / self.count if self.count else None

    @property
    def mse(self):
        return float(self.sq_err / self.count) if self.count else None

    @property
    def is_score(self):
        return float(np.mean(self.is_values)) if self.is_values else None

    def to_json(self):
        return {"accuracy": self.accuracy, "mse": self.mse, "is": self.is_score, "count": self.count}


@dataclass
class MetricReport:
    occ: ClassStats = field(default_factory=ClassStats)
    free: ClassStats = field(default_factory=ClassStats)
    overall: ClassStats = field(default_factory=ClassStats)
    n_samples: int = 0

    def __getitem__(self, name) -> ClassStats:
        if name not in CLASSES:
            raise KeyError(name)
        return getattr(self, name)

    def to_json(self, table_scale=False):
        out = {k: self[k].to_json() for k in CLASSES}
        if table_scale:
            for k in CLASSES:
                if out[k]["is"] is not None:
                    out[k]["is"] /= 100.0
        out["n_samples"] = self.n_samples
        return out

    def dumps(self, table_scale=False):
        return json.dumps(self.to_json(table_scale), indent=2, sort_keys=True)


def evaluate_sample(pred, gt, mask, all_cells=False) -> MetricReport:
    p, g, m = _arrays(pred, gt, mask)
    if all_cells:
        m = np.ones_like(m)
    correct = threshold(p) == g
    rep = MetricReport(n_samples=1)
    sims = image_similarity(threshold(p), g, m.astype(np.float64))
    for k, s in _supports(g, m).items():
        st = rep[k]
        st.count = int(s.sum())
        st.correct = int(correct[s].sum())
        if k != "overall":
            st.sq_err = squared_error_sum(p[s], g[s])
        if sims[k] is not None:
            st.is_values.append(sims[k])
    rep.overall.sq_err = rep.occ.sq_err + rep.free.sq_err
    return rep


def aggregate(reports) -> MetricReport:
    """Pool accuracy/MSE numerators and denominators; average IS over samples."""
    reports = list(reports)
    if not reports:
        raise ValueError("cannot aggregate an empty set of reports")
    out = MetricReport()
    for r in reports:
        out.n_samples += r.n_samples
        for k in CLASSES:
            dst, src = out[k], r[k]
            dst.count += src.count
            dst.correct += src.correct
            dst.sq_err += src.sq_err
            dst.is_values.extend(src.is_values)
    return out


def evaluate(preds, gts, masks, all_cells=False) -> MetricReport:
    return aggregate(evaluate_sample(p, g, m, all_cells) for p, g, m in zip(preds, gts, masks))
