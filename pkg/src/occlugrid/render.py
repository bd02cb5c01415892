"""Plain-text PGM (P2) rendering of grid panels, one pixel per cell."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .metrics import threshold

MASK_GRAY = 128


def to_pgm(gray: np.ndarray) -> bytes:
    g = np.asarray(gray, dtype=np.int64)
    if g.ndim != 2 or g.min() < 0 or g.max() > 255:
        raise ValueError("gray image must be 2-D with values in 0..255")
    lines = ["P2", f"{g.shape[1]} {g.shape[0]}", "255"]
    lines += [" ".join(str(v) for v in row) for row in g.tolist()]
    return ("\n".join(lines) + "\n").encode("ascii")


def probability_gray(cells) -> np.ndarray:
    """0 -> white (255), 1 -> black (0)."""
    p = np.clip(np.asarray(getattr(cells, "cells", cells), dtype=np.float64), 0.0, 1.0)
    return np.rint(255.0 * (1.0 - p)).astype(np.int64)


def mask_gray(mask) -> np.ndarray:
    m = np.asarray(getattr(mask, "cells", mask))
    return np.where(m == 1, MASK_GRAY, 255).astype(np.int64)


def render_panels(mask, prob, gt):
    """The four comparison panels as PGM bytes keyed by panel name."""
    return {
        "mask": to_pgm(mask_gray(mask)),
        "probability": to_pgm(probability_gray(prob)),
        "threshold": to_pgm(probability_gray(threshold(getattr(prob, "cells", prob)))),
        "gt": to_pgm(probability_gray(gt)),
    }


def write_panels(out_dir, mask, prob, gt, prefix=""):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, data in render_panels(mask, prob, gt).items():
        path = out / f"{prefix}{name}.pgm"
        path.write_bytes(data)
        paths.append(path)
    return paths
