"""Exact 2-D visibility from a point sensor among rectangular occluders.

All functions are frame-agnostic: sensor, occluders, query points and the
clip rectangle only need to share one Cartesian frame.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import EgoFrame, GridSpec, MaskOgm, ego_cell_centers, grid_rect
from .vectors import Polyline, VectorClass


class DegenerateViewpointError(ValueError):
    """The sensor sits strictly inside an occluder."""


class DegenerateOccluderError(ValueError):
    pass


@dataclass(frozen=True)
class Footprint:
    center: tuple
    heading: float
    length: float
    width: float
    vehicle_id: str = ""

    def __post_init__(self):
        if not (self.length > 0 and self.width > 0):
            raise DegenerateOccluderError(
                f"footprint {self.vehicle_id!r} needs positive size, got {self.length}x{self.width}"
            )
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))

    @property
    def axes(self):
        c, s = math.cos(self.heading), math.sin(self.heading)
        return np.array([c, s]), np.array([-s, c])

    def corners(self) -> np.ndarray:
        """Vertices in CCW order: front-right, front-left, rear-left, rear-right."""
        u, v = self.axes
        hl, hw = self.length / 2, self.width / 2
        c = np.asarray(self.center)
        return np.array([c + hl * u - hw * v, c + hl * u + hw * v, c - hl * u + hw * v, c - hl * u - hw * v])

    def to_local(self, points) -> np.ndarray:
        u, v = self.axes
        d = np.asarray(points, dtype=np.float64) - np.asarray(self.center)
        return np.stack([d @ u, d @ v], axis=-1)

    def contains(self, points, strict=False) -> np.ndarray:
        loc = self.to_local(points)
        hl, hw = self.length / 2, self.width / 2
        if strict:
            return (np.abs(loc[..., 0]) < hl) & (np.abs(loc[..., 1]) < hw)
        return (np.abs(loc[..., 0]) <= hl) & (np.abs(loc[..., 1]) <= hw)


@dataclass(frozen=True)
class ShadowPolygon:
    occluder_id: str
    vertices: np.ndarray  # (k, 2), CCW; empty when fully clipped

    @property
    def is_empty(self) -> bool:
        return len(self.vertices) < 3


def _check_sensor(sensor, occluders):
    for occ in occluders:
        if bool(occ.contains(np.asarray(sensor, dtype=np.float64), strict=True)):
            raise DegenerateViewpointError(f"sensor {tuple(sensor)} lies inside occluder {occ.vehicle_id!r}")


def segments_blocked(sensor, points, occ: Footprint) -> np.ndarray:
    """True where the open segment sensor->point meets the occluder's interior."""
    p0 = occ.to_local(np.asarray(sensor, dtype=np.float64))
    p1 = occ.to_local(points)
    d = p1 - p0
    lo = np.zeros(p1.shape[:-1])
    hi = np.ones(p1.shape[:-1])
    for axis, half in ((0, occ.length / 2), (1, occ.width / 2)):
        da = d[..., axis]
        start = p0[axis]
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (-half - start) / da
            t2 = (half - start) / da
        par = da == 0
        inside_slab = abs(start) < half
        a = np.where(par, -np.inf if inside_slab else np.inf, np.minimum(t1, t2))
        b = np.where(par, np.inf if inside_slab else -np.inf, np.maximum(t1, t2))
        lo = np.maximum(lo, a)
        hi = np.minimum(hi, b)
    return lo < hi


def points_visible(sensor, points, occluders) -> np.ndarray:
    """Visibility of many points. A point inside an occluder ignores that occluder."""
    _check_sensor(sensor, occluders)
    pts = np.asarray(points, dtype=np.float64)
    hidden = np.zeros(pts.shape[:-1], dtype=bool)
    for occ in occluders:
        hidden |= segments_blocked(sensor, pts, occ) & ~occ.contains(pts)
    return ~hidden


def cell_visible(sensor, cell_center, occluders) -> bool:
    return bool(points_visible(sensor, np.asarray(cell_center, dtype=np.float64), occluders))


def compute_mask(frame: EgoFrame, occluders, grid: GridSpec = GridSpec()) -> MaskOgm:
    """Occlusion mask in the ego frame; ``occluders`` must be ego-frame footprints."""
    centers = ego_cell_centers(frame, grid)
    vis = points_visible((0.0, 0.0), centers, occluders)
    return MaskOgm((~vis).astype(np.float64), grid.resolution)


# polygons

def signed_area(poly) -> float:
    p = np.asarray(poly, dtype=np.float64)
    if len(p) < 3:
        return 0.0
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _dedupe(poly, tol=1e-12):
    out = []
    for v in poly:
        if not out or np.max(np.abs(np.asarray(v) - out[-1])) > tol:
            out.append(np.asarray(v, dtype=np.float64))
    if len(out) > 1 and np.max(np.abs(out[0] - out[-1])) <= tol:
        out.pop()
    return out


def clip_polygon_rect(poly, rect):
    """Sutherland-Hodgman clip of a polygon to (xmin, ymin, xmax, ymax)."""
    xmin, ymin, xmax, ymax = rect
    planes = [
        (lambda p: p[0] >= xmin, 0, xmin),
        (lambda p: p[0] <= xmax, 0, xmax),
        (lambda p: p[1] >= ymin, 1, ymin),
        (lambda p: p[1] <= ymax, 1, ymax),
    ]
    out = [np.asarray(v, dtype=np.float64) for v in poly]
    for inside, axis, value in planes:
        if not out:
            break
        src, out = out, []
        prev = src[-1]
        for cur in src:
            cin, pin = inside(cur), inside(prev)
            if cin != pin:
                t = (value - prev[axis]) / (cur[axis] - prev[axis])
                hit = prev + t * (cur - prev)
                hit[axis] = value
                out.append(hit)
            if cin:
                out.append(cur)
            prev = cur
    out = _dedupe(out)
    return out if len(out) >= 3 and abs(signed_area(out)) > 1e-12 else []


def points_in_polygon(points, poly) -> np.ndarray:
    """Even-odd rule membership of (..., 2) points."""
    pts = np.asarray(points, dtype=np.float64)
    x, y = pts[..., 0], pts[..., 1]
    inside = np.zeros(pts.shape[:-1], dtype=bool)
    verts = np.asarray(poly, dtype=np.float64)
    for (x1, y1), (x2, y2) in zip(verts, np.roll(verts, -1, axis=0)):
        crosses = (y1 > y) != (y2 > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (x < xint)
    return inside


def shadow_polygon(sensor, occluder: Footprint, rect, arc_step=math.radians(10.0)) -> ShadowPolygon:
    """Region hidden behind one occluder, clipped to ``rect``.

    Bounded by the two tangent rays, the occluder's back-facing edges and the
    clip rectangle.
    """
    if occluder.length * occluder.width <= 0:
        raise DegenerateOccluderError(f"zero-area occluder {occluder.vehicle_id!r}")
    s = np.asarray(sensor, dtype=np.float64)
    _check_sensor(s, [occluder])
    corners = occluder.corners()
    n = len(corners)
    # an edge is back-facing when the sensor is on its interior (left) side
    back = []
    for i in range(n):
        e = corners[(i + 1) % n] - corners[i]
        w = s - corners[i]
        back.append(e[0] * w[1] - e[1] * w[0] > 0)
    if not any(back) or all(back):
        raise DegenerateViewpointError("sensor on the occluder boundary")
    start = next(i for i in range(n) if back[i] and not back[i - 1])
    chain = [corners[start]]
    i = start
    while back[i]:
        chain.append(corners[(i + 1) % n])
        i = (i + 1) % n

    ref = np.asarray(occluder.center) - s
    ref /= np.linalg.norm(ref)

    def rel_angle(p):
        d = p - s
        return math.atan2(ref[0] * d[1] - ref[1] * d[0], ref @ d)

    xmin, ymin, xmax, ymax = rect
    diag = math.hypot(xmax - xmin, ymax - ymin)
    reach = 4.0 * (np.linalg.norm(np.asarray(occluder.center) - s) + diag)
    a0, a1 = rel_angle(chain[0]), rel_angle(chain[-1])
    base = math.atan2(ref[1], ref[0])
    steps = max(1, int(math.ceil(abs(a1 - a0) / arc_step)))
    far = [s + reach * np.array([math.cos(base + a), math.sin(base + a)]) for a in np.linspace(a1, a0, steps + 1)]
    poly = chain + far
    if signed_area(poly) < 0:
        poly = poly[::-1]
    clipped = clip_polygon_rect(poly, rect)
    if clipped and signed_area(clipped) < 0:
        clipped = clipped[::-1]
    verts = np.array(clipped, dtype=np.float64).reshape(-1, 2)
    verts.setflags(write=False)
    return ShadowPolygon(occluder.vehicle_id, verts)


def rasterize_shadows(shadows, frame: EgoFrame, grid: GridSpec = GridSpec()) -> np.ndarray:
    centers = ego_cell_centers(frame, grid)
    out = np.zeros(grid.shape, dtype=bool)
    for sh in shadows:
        if not sh.is_empty:
            out |= points_in_polygon(centers, sh.vertices)
    return out


def occlusion_polylines(shadows, step: float = 5.0):
    """Resample each shadow boundary into a closed loop of occlusion vectors."""
    if not step > 0:
        raise ValueError(f"step must be positive, got {step}")
    lines = []
    for k, sh in enumerate(shadows):
        if sh.is_empty:
            continue
        verts = np.asarray(sh.vertices)
        pts = [verts[0]]
        for a, b in zip(verts, np.roll(verts, -1, axis=0)):
            length = float(np.hypot(*(b - a)))
            if length == 0:
                continue
            m = int(math.ceil(length / step - 1e-9))
            for j in range(1, m + 1):
                pts.append(b if j == m else a + (b - a) * (j / m))
        pts[-1] = pts[0]
        lines.append(Polyline.from_points(f"occ:{sh.occluder_id or k}", VectorClass.OCCLUSION, pts, source=sh.occluder_id))
    return lines


def shadows_for_frame(occluders, frame: EgoFrame, grid: GridSpec = GridSpec()):
    rect = grid_rect(frame, grid)
    return [shadow_polygon((0.0, 0.0), occ, rect) for occ in occluders]
