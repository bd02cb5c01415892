"""Occupancy grid types, ego-centric cell geometry, patching and text I/O."""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DEFAULT_HEIGHT = 70
DEFAULT_WIDTH = 60
DEFAULT_RESOLUTION = 1.0
DEFAULT_ANCHOR = (60, 30)


class GridConfigError(ValueError):
    """Invalid grid or patch configuration."""


class OgmParseError(ValueError):
    """Base class for OGM file parse failures."""


class OgmHeaderError(OgmParseError):
    pass


class OgmRangeError(OgmParseError):
    pass


class OgmLengthError(OgmParseError):
    pass


def _frozen(values, dtype) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Ogm:
    """H x W occupancy probabilities; row 0 is the far (forward) edge."""

    cells: np.ndarray
    resolution: float = DEFAULT_RESOLUTION

    def __post_init__(self):
        cells = _frozen(self.cells, np.float64)
        if cells.ndim != 2 or cells.size == 0:
            raise GridConfigError(f"cells must be a non-empty 2-D array, got shape {cells.shape}")
        if not np.all(np.isfinite(cells)) or cells.min() < 0.0 or cells.max() > 1.0:
            raise GridConfigError("occupancy values must lie in [0, 1]")
        object.__setattr__(self, "cells", cells)

    @property
    def height(self) -> int:
        return self.cells.shape[0]

    @property
    def width(self) -> int:
        return self.cells.shape[1]

    @classmethod
    def zeros(cls, height=DEFAULT_HEIGHT, width=DEFAULT_WIDTH, resolution=DEFAULT_RESOLUTION):
        return cls(np.zeros((height, width)), resolution)

    def __eq__(self, other):
        if not isinstance(other, Ogm) or type(other) is not type(self):
            return NotImplemented
        return self.resolution == other.resolution and np.array_equal(self.cells, other.cells)

    __hash__ = None


@dataclass(frozen=True, eq=False)
class MaskOgm(Ogm):
    """Binary occlusion indicator: 1 = occluded, 0 = visible."""

    def __post_init__(self):
        super().__post_init__()
        if not np.all((self.cells == 0.0) | (self.cells == 1.0)):
            raise GridConfigError("mask cells must be 0 or 1")


@dataclass(frozen=True)
class GridSpec:
    height: int = DEFAULT_HEIGHT
    width: int = DEFAULT_WIDTH
    resolution: float = DEFAULT_RESOLUTION

    @property
    def shape(self):
        return (self.height, self.width)


@dataclass(frozen=True)
class EgoFrame:
    """Ego pose in world coordinates and the grid cell its center occupies.

    Ego-frame coordinates put the ego center at the origin with +y along the
    heading and +x to the right, so rows decrease as y grows.
    """

    x: float
    y: float
    heading: float
    anchor: tuple = DEFAULT_ANCHOR

    def __post_init__(self):
        if not math.isfinite(self.heading):
            raise GridConfigError("ego heading must be finite")
        object.__setattr__(self, "anchor", (int(self.anchor[0]), int(self.anchor[1])))

    def to_ego(self, points) -> np.ndarray:
        """World (..., 2) points to ego-frame coordinates."""
        pts = np.asarray(points, dtype=np.float64)
        dx = pts[..., 0] - self.x
        dy = pts[..., 1] - self.y
        c, s = math.cos(self.heading), math.sin(self.heading)
        fwd = dx * c + dy * s
        right = dx * s - dy * c
        return np.stack([right, fwd], axis=-1)

    def to_world(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=np.float64)
        right, fwd = pts[..., 0], pts[..., 1]
        c, s = math.cos(self.heading), math.sin(self.heading)
        return np.stack([self.x + fwd * c + right * s, self.y + fwd * s - right * c], axis=-1)

    def heading_to_ego(self, heading):
        """World heading to ego-frame heading (measured from +x, forward is pi/2)."""
        return np.asarray(heading) - self.heading + math.pi / 2

    def check_anchor(self, grid: GridSpec):
        r, c = self.anchor
        if not (0 <= r < grid.height and 0 <= c < grid.width):
            raise GridConfigError(f"anchor {self.anchor} outside {grid.height}x{grid.width} grid")


def ego_cell_centers(frame: EgoFrame, grid: GridSpec) -> np.ndarray:
    """Ego-frame coordinates of every cell center, shape (H, W, 2)."""
    r0, c0 = frame.anchor
    rows = np.arange(grid.height)
    cols = np.arange(grid.width)
    xs = (cols - c0) * grid.resolution
    ys = (r0 - rows) * grid.resolution
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx, gy], axis=-1)


def grid_rect(frame: EgoFrame, grid: GridSpec):
    """Ego-frame bounds (xmin, ymin, xmax, ymax) of the grid."""
    r0, c0 = frame.anchor
    res = grid.resolution
    return (
        (-c0 - 0.5) * res,
        (r0 - grid.height + 0.5) * res,
        (grid.width - c0 - 0.5) * res,
        (r0 + 0.5) * res,
    )


def cell_center(rc, frame: EgoFrame, grid: GridSpec) -> np.ndarray:
    """World coordinates of a cell center."""
    r, c = rc
    r0, c0 = frame.anchor
    local = np.array([(c - c0) * grid.resolution, (r0 - r) * grid.resolution])
    return frame.to_world(local)


def ego_to_cell(points, frame: EgoFrame, grid: GridSpec):
    """Vectorized ego-frame -> (rows, cols, inside) lookup."""
    pts = np.asarray(points, dtype=np.float64)
    r0, c0 = frame.anchor
    cols = np.floor(pts[..., 0] / grid.resolution + c0 + 0.5).astype(np.int64)
    rows = np.floor(r0 - pts[..., 1] / grid.resolution + 0.5).astype(np.int64)
    inside = (rows >= 0) & (rows < grid.height) & (cols >= 0) & (cols < grid.width)
    return rows, cols, inside


def world_to_cell(point, frame: EgoFrame, grid: GridSpec = GridSpec()):
    """Cell (row, col) whose square contains a world point, or None."""
    local = frame.to_ego(point)
    rows, cols, inside = ego_to_cell(local, frame, grid)
    if not bool(inside):
        return None
    return int(rows), int(cols)


@dataclass(frozen=True)
class PatchGrid:
    patch: int
    height: int
    width: int
    patches: np.ndarray

    @property
    def n_patches(self) -> int:
        return self.patches.shape[0]


def check_patch(height: int, width: int, p: int):
    if p <= 0 or height % p or width % p:
        raise GridConfigError(f"patch side p={p} must divide H={height} and W={width}")


def patchify_array(arr, p: int):
    """(..., H, W) -> (..., N_p, p*p); patches and their contents row-major."""
    *lead, h, w = arr.shape
    check_patch(h, w, p)
    x = arr.reshape(*lead, h // p, p, w // p, p)
    x = np.swapaxes(x, -3, -2) if isinstance(x, np.ndarray) else x.transpose(-3, -2)
    return x.reshape(*lead, (h // p) * (w // p), p * p)


def unpatchify_array(patches, p: int, height: int, width: int):
    *lead, n, pp = patches.shape
    check_patch(height, width, p)
    if n != (height // p) * (width // p) or pp != p * p:
        raise GridConfigError(f"patch array {patches.shape} does not fit {height}x{width} with p={p}")
    x = patches.reshape(*lead, height // p, width // p, p, p)
    x = np.swapaxes(x, -3, -2) if isinstance(x, np.ndarray) else x.transpose(-3, -2)
    return x.reshape(*lead, height, width)


def patchify(m: Ogm, p: int) -> PatchGrid:
    return PatchGrid(p, m.height, m.width, _frozen(patchify_array(m.cells, p), np.float64))


def unpatchify(pg: PatchGrid, resolution: float = DEFAULT_RESOLUTION) -> Ogm:
    return Ogm(unpatchify_array(np.asarray(pg.patches), pg.patch, pg.height, pg.width), resolution)


# text format: header line, then H rows of W floats

def format_ogm(m: Ogm) -> str:
    tag = "MASK" if isinstance(m, MaskOgm) else "OGM"
    lines = [f"{tag} v1 H={m.height} W={m.width} RES={m.resolution!r}"]
    for row in m.cells:
        lines.append(" ".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


def parse_ogm(text: str) -> Ogm:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise OgmHeaderError("empty OGM file")
    fields = lines[0].split()
    if len(fields) != 5 or fields[0] not in ("OGM", "MASK") or fields[1] != "v1":
        raise OgmHeaderError(f"malformed header: {lines[0]!r}")
    try:
        kv = dict(f.split("=", 1) for f in fields[2:])
        h, w, res = int(kv["H"]), int(kv["W"]), float(kv["RES"])
    except (KeyError, ValueError) as exc:
        raise OgmHeaderError(f"malformed header: {lines[0]!r}") from exc
    if h <= 0 or w <= 0 or not res > 0:
        raise OgmHeaderError(f"non-positive dimensions in header: {lines[0]!r}")
    rows = lines[1:]
    if len(rows) != h:
        raise OgmLengthError(f"header declares H={h} but file has {len(rows)} rows")
    cells = np.empty((h, w))
    for i, row in enumerate(rows):
        vals = row.split()
        if len(vals) != w:
            raise OgmLengthError(f"row {i} has {len(vals)} values, expected W={w}")
        try:
            cells[i] = [float(v) for v in vals]
        except ValueError as exc:
            raise OgmParseError(f"non-numeric value in row {i}") from exc
    if not np.all(np.isfinite(cells)) or cells.min() < 0 or cells.max() > 1:
        raise OgmRangeError("cell value outside [0, 1]")
    if fields[0] == "MASK":
        if not np.all((cells == 0) | (cells == 1)):
            raise OgmRangeError("mask cell value not in {0, 1}")
        return MaskOgm(cells, res)
    return Ogm(cells, res)


def save_ogm(m: Ogm, path):
    Path(path).write_text(format_ogm(m))


def load_ogm(path) -> Ogm:
    return parse_ogm(Path(path).read_text())
