"""Scene samples: track ingestion, ego selection, vectorization, synthetic intersections."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .grid import EgoFrame, GridSpec, MaskOgm, Ogm, ego_cell_centers, ego_to_cell, grid_rect
from .vectors import AGENT_TYPES, ROAD_TYPES, Polyline, VectorClass
from .visibility import Footprint, compute_mask, occlusion_polylines, points_visible, shadow_polygon

FRAME_MS = 100
REQUIRED_COLUMNS = ("track_id", "frame_id", "timestamp_ms", "agent_type", "x", "y", "psi_rad", "length", "width")


class TrackParseError(ValueError):
    pass


class MissingColumnError(TrackParseError):
    pass


class UnknownRoadTypeError(ValueError):
    pass


class SceneError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Track:
    track_id: str
    agent_type: str
    frame: np.ndarray
    timestamp_ms: np.ndarray
    x: np.ndarray
    y: np.ndarray
    heading: np.ndarray
    length: np.ndarray
    width: np.ndarray

    def __len__(self):
        return len(self.frame)

    def index_at(self, t_ms):
        i = int(np.searchsorted(self.timestamp_ms, t_ms))
        if i < len(self) and abs(int(self.timestamp_ms[i]) - t_ms) <= 1:
            return i
        if i > 0 and abs(int(self.timestamp_ms[i - 1]) - t_ms) <= 1:
            return i - 1
        return None

    def footprint(self, i) -> Footprint:
        return Footprint((self.x[i], self.y[i]), float(self.heading[i]), float(self.length[i]), float(self.width[i]), self.track_id)

    def __eq__(self, other):
        if not isinstance(other, Track):
            return NotImplemented
        return (self.track_id, self.agent_type) == (other.track_id, other.agent_type) and all(
            np.array_equal(getattr(self, f), getattr(other, f))
            for f in ("frame", "timestamp_ms", "x", "y", "heading", "length", "width")
        )


@dataclass(frozen=True)
class TrackTable:
    tracks: dict

    def __len__(self):
        return len(self.tracks)

    def __getitem__(self, track_id) -> Track:
        return self.tracks[track_id]

    def present_at(self, t_ms):
        """(track, row index) for every track observed at ``t_ms``."""
        out = []
        for tid in sorted(self.tracks):
            i = self.tracks[tid].index_at(t_ms)
            if i is not None:
                out.append((self.tracks[tid], i))
        return out


def _make_track(tid, rows) -> Track:
    rows = sorted(rows, key=lambda r: r[0])
    arr = np.array([r[:7] for r in rows], dtype=np.float64)
    frames = arr[:, 0].astype(np.int64)
    ts = arr[:, 1].astype(np.int64)
    if len(ts) > 1:
        dt = np.diff(ts)
        if np.any(dt <= 0):
            raise TrackParseError(f"track {tid}: timestamps not strictly increasing")
        spacing = dt / np.diff(frames)
        if np.any(np.abs(spacing - FRAME_MS) > 1):
            raise TrackParseError(f"track {tid}: frames are not sampled at 10 Hz")
    return Track(tid, rows[0][7], frames, ts, arr[:, 2], arr[:, 3], arr[:, 4], arr[:, 5], arr[:, 6])


def parse_tracks(data) -> TrackTable:
    """Parse INTERACTION-style track CSV (bytes or str)."""
    text = data.decode("utf-8") if isinstance(data, (bytes, bytearray)) else data
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None:
        raise TrackParseError("missing header row")
    header = [h.strip() for h in reader.fieldnames]
    for col in REQUIRED_COLUMNS:
        if col not in header:
            raise MissingColumnError(f"missing required column {col!r}")
    reader.fieldnames = header
    grouped = {}
    for lineno, row in enumerate(reader, start=2):
        try:
            rec = (
                int(row["frame_id"]),
                int(float(row["timestamp_ms"])),
                float(row["x"]),
                float(row["y"]),
                float(row["psi_rad"]),
                float(row["length"]),
                float(row["width"]),
                row["agent_type"].strip(),
            )
        except (TypeError, ValueError) as exc:
            raise TrackParseError(f"line {lineno}: non-numeric field ({exc})") from exc
        if not all(math.isfinite(v) for v in rec[2:7]):
            raise TrackParseError(f"line {lineno}: non-finite coordinate")
        grouped.setdefault(row["track_id"].strip(), []).append(rec)
    tracks = {}
    for tid, rows in grouped.items():
        frames = [r[0] for r in rows]
        if len(set(frames)) != len(frames):
            raise TrackParseError(f"track {tid}: duplicate frame ids")
        tracks[tid] = _make_track(tid, rows)
    return TrackTable(tracks)


def tracks_to_csv(table: TrackTable) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REQUIRED_COLUMNS)
    for tid in sorted(table.tracks):
        tr = table.tracks[tid]
        for i in range(len(tr)):
            w.writerow([tid, int(tr.frame[i]), int(tr.timestamp_ms[i]), tr.agent_type,
                        repr(float(tr.x[i])), repr(float(tr.y[i])), repr(float(tr.heading[i])),
                        repr(float(tr.length[i])), repr(float(tr.width[i]))])
    return buf.getvalue()


def select_egos(tracks: TrackTable, min_presence: float = 1.0):
    """(track id, t_ms) pairs where the track has been continuously present for ``min_presence`` s."""
    if not min_presence > 0:
        raise ValueError("min_presence must be positive")
    need = int(round(min_presence * 1000))
    out = []
    for tid in sorted(tracks.tracks):
        tr = tracks.tracks[tid]
        run_start = 0
        for i in range(len(tr)):
            if i > 0 and tr.frame[i] - tr.frame[i - 1] != 1:
                run_start = i
            if tr.timestamp_ms[i] - tr.timestamp_ms[run_start] >= need - 1:
                out.append((tid, int(tr.timestamp_ms[i])))
    return out


# map vectorization

def _clip_segment(p, q, normals, offsets):
    """Cyrus-Beck parametric clip of p->q against {x : n.x <= o}."""
    d = q - p
    t0, t1 = 0.0, 1.0
    for n, o in zip(normals, offsets):
        denom = float(n @ d)
        num = float(o - n @ p)
        if denom == 0.0:
            if num < 0:
                return None
        elif denom > 0:
            t1 = min(t1, num / denom)
        else:
            t0 = max(t0, num / denom)
        if t0 > t1:
            return None
    return t0, t1


def convex_halfplanes(poly):
    """Outward normals/offsets of a CCW convex polygon."""
    poly = np.asarray(poly, dtype=np.float64)
    normals, offsets = [], []
    for a, b in zip(poly, np.roll(poly, -1, axis=0)):
        e = b - a
        n = np.array([e[1], -e[0]])
        normals.append(n)
        offsets.append(float(n @ a))
    return normals, offsets


def clip_polyline(points, poly):
    """Split a polyline into the runs lying inside a convex CCW polygon."""
    pts = np.asarray(points, dtype=np.float64)
    normals, offsets = convex_halfplanes(poly)
    runs, cur = [], []
    for p, q in zip(pts[:-1], pts[1:]):
        hit = _clip_segment(p, q, normals, offsets)
        if hit is None:
            if cur:
                runs.append(cur)
                cur = []
            continue
        t0, t1 = hit
        a, b = p + t0 * (q - p), p + t1 * (q - p)
        if cur and (t0 > 0 or np.max(np.abs(cur[-1] - a)) > 1e-9):
            runs.append(cur)
            cur = []
        if not cur:
            cur = [a]
        cur.append(b)
        if t1 < 1:
            runs.append(cur)
            cur = []
    if cur:
        runs.append(cur)
    out = []
    for run in runs:
        arr = np.array(run)
        if np.sum(np.hypot(*np.diff(arr, axis=0).T)) > 1e-9:
            out.append(arr)
    return out


def resample(points, step):
    """Points at equal arc-length spacing no larger than ``step``."""
    pts = np.asarray(points, dtype=np.float64)
    seg = np.hypot(*np.diff(pts, axis=0).T)
    s = np.concatenate([[0.0], np.cumsum(seg)])
    n = max(1, int(math.ceil(s[-1] / step - 1e-9)))
    q = np.linspace(0.0, s[-1], n + 1)
    return np.column_stack([np.interp(q, s, pts[:, 0]), np.interp(q, s, pts[:, 1])])


def rect_polygon(rect):
    xmin, ymin, xmax, ymax = rect
    return np.array([[xmin, ymin], [xmax, ymin], [xmax, ymax], [xmin, ymax]])


def vectorize_map(map_json, frame: EgoFrame, grid: GridSpec = GridSpec(), step: float = 5.0):
    lines = []
    box = rect_polygon(grid_rect(frame, grid))
    for elem in map_json.get("polylines", []):
        rtype = elem.get("road_type")
        if rtype not in ROAD_TYPES:
            raise UnknownRoadTypeError(f"unknown road type {rtype!r} in map element {elem.get('id')!r}")
        pts = np.asarray(elem["points"], dtype=np.float64).reshape(-1, 2)
        if len(pts) < 2:
            continue
        runs = clip_polyline(frame.to_ego(pts), box)
        for k, run in enumerate(runs):
            pid = f"map:{elem['id']}" if len(runs) == 1 else f"map:{elem['id']}#{k}"
            lines.append(Polyline.from_points(pid, VectorClass.SCENE_CONTEXT, resample(run, step),
                                              attrs=(0.0, float(ROAD_TYPES[rtype]), 0.0), source=str(elem["id"])))
    return lines


# samples

@dataclass(frozen=True)
class SceneConfig:
    grid: GridSpec = GridSpec()
    anchor: tuple = (60, 30)
    history: int = 10
    occlusion_step: float = 5.0
    map_step: float = 5.0
    include_ego_trajectory: bool = True


@dataclass(frozen=True)
class AgentRecord:
    """Footprint history of one vehicle in the ego frame; ``poses`` rows are (k, x, y, heading), k <= 0."""

    track_id: str
    agent_type: str
    length: float
    width: float
    visible: bool
    is_ego: bool
    poses: tuple

    def footprint_at(self, k=0):
        for kk, x, y, h in self.poses:
            if kk == k:
                return Footprint((x, y), h, self.length, self.width, self.track_id)
        return None

    def to_json(self):
        return {"track_id": self.track_id, "agent_type": self.agent_type, "length": self.length, "width": self.width,
                "visible": self.visible, "is_ego": self.is_ego, "poses": [list(p) for p in self.poses]}

    @classmethod
    def from_json(cls, d):
        return cls(d["track_id"], d["agent_type"], d["length"], d["width"], d["visible"], d["is_ego"],
                   tuple(tuple(p) for p in d["poses"]))


@dataclass(frozen=True, eq=False)
class SceneSample:
    polylines: tuple
    mask: MaskOgm
    ground_truth: Ogm
    frame: EgoFrame
    sample_id: str = ""
    timestamp: int = 0
    agents: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if self.mask.cells.shape != self.ground_truth.cells.shape:
            raise SceneError("mask and ground truth dims differ")
        if not np.all((self.ground_truth.cells == 0) | (self.ground_truth.cells == 1)):
            raise SceneError("ground truth must be binary")
        if not any(p.type == VectorClass.TRAJECTORY for p in self.polylines):
            raise SceneError("sample needs at least one trajectory polyline")
        object.__setattr__(self, "polylines", tuple(self.polylines))
        object.__setattr__(self, "agents", tuple(self.agents))

    @property
    def grid(self) -> GridSpec:
        return GridSpec(self.mask.height, self.mask.width, self.mask.resolution)

    def to_json(self):
        return {
            "id": self.sample_id,
            "timestamp_ms": self.timestamp,
            "frame": {"x": self.frame.x, "y": self.frame.y, "heading": self.frame.heading, "anchor": list(self.frame.anchor)},
            "polylines": [p.to_json() for p in self.polylines],
            "mask": _ogm_json(self.mask, "MASK"),
            "ground_truth": _ogm_json(self.ground_truth, "OGM"),
            "agents": [a.to_json() for a in self.agents],
        }

    @classmethod
    def from_json(cls, d):
        fr = d["frame"]
        return cls(
            polylines=tuple(Polyline.from_json(p) for p in d["polylines"]),
            mask=_ogm_from_json(d["mask"], MaskOgm),
            ground_truth=_ogm_from_json(d["ground_truth"], Ogm),
            frame=EgoFrame(fr["x"], fr["y"], fr["heading"], tuple(fr["anchor"])),
            sample_id=d.get("id", ""),
            timestamp=d.get("timestamp_ms", 0),
            agents=tuple(AgentRecord.from_json(a) for a in d.get("agents", [])),
        )

    def __eq__(self, other):
        if not isinstance(other, SceneSample):
            return NotImplemented
        return self.to_json() == other.to_json()

    __hash__ = None


def _ogm_json(m, tag):
    return {"kind": tag, "height": m.height, "width": m.width, "resolution": m.resolution, "cells": m.cells.ravel().tolist()}


def _ogm_from_json(d, cls):
    return cls(np.asarray(d["cells"], dtype=np.float64).reshape(d["height"], d["width"]), d["resolution"])


def write_dataset(path, samples):
    with open(path, "w") as fh:
        for s in samples:
            fh.write(json.dumps(s.to_json(), separators=(",", ":")) + "\n")


def read_dataset(path):
    with open(path) as fh:
        return [SceneSample.from_json(json.loads(line)) for line in fh if line.strip()]


def _ego_footprint(tr: Track, i, frame: EgoFrame) -> Footprint:
    c = frame.to_ego((tr.x[i], tr.y[i]))
    return Footprint(tuple(c), float(frame.heading_to_ego(tr.heading[i])), float(tr.length[i]), float(tr.width[i]), tr.track_id)


def _in_grid(fp: Footprint, frame, grid):
    pts = np.vstack([fp.corners(), [fp.center]])
    return bool(np.any(ego_to_cell(pts, frame, grid)[2]))


def build_sample(tracks: TrackTable, map_json, ego_id, t_ms, cfg: SceneConfig = SceneConfig(), sample_id=None) -> SceneSample:
    grid = cfg.grid
    if ego_id not in tracks.tracks:
        raise SceneError(f"unknown ego track {ego_id!r}")
    ego = tracks[ego_id]
    ie = ego.index_at(t_ms)
    if ie is None:
        raise SceneError(f"ego {ego_id!r} missing at t={t_ms} ms")
    frame = EgoFrame(float(ego.x[ie]), float(ego.y[ie]), float(ego.heading[ie]), cfg.anchor)
    frame.check_anchor(grid)

    present = tracks.present_at(t_ms)
    fps = {tr.track_id: _ego_footprint(tr, i, frame) for tr, i in present}
    others = [fps[tid] for tid in fps if tid != ego_id]
    mask = compute_mask(frame, others, grid).cells.copy()

    visible = {ego_id: True}
    for fp in others:
        probes = np.vstack([fp.corners(), [fp.center]])
        visible[fp.vehicle_id] = _in_grid(fp, frame, grid) and bool(np.any(points_visible((0.0, 0.0), probes, others)))

    centers = ego_cell_centers(frame, grid)
    gt = np.zeros(grid.shape)
    for tid, fp in fps.items():
        inside = fp.contains(centers)
        gt[inside] = 1.0
        # observed vehicles are known in full; unobserved ones stay hidden
        mask[inside] = 0.0 if visible[tid] else 1.0

    polylines, agents = [], []
    for tr, i in present:
        tid = tr.track_id
        poses = []
        for k in range(-cfg.history, 1):
            j = tr.index_at(t_ms + k * FRAME_MS)
            if j is not None:
                c = frame.to_ego((tr.x[j], tr.y[j]))
                poses.append((k, float(c[0]), float(c[1]), float(frame.heading_to_ego(tr.heading[j]))))
        # keep only the contiguous run ending at t
        run = []
        for p in reversed(poses):
            if run and run[-1][0] != p[0] + 1:
                break
            run.append(p)
        run.reverse()
        agents.append(AgentRecord(tid, tr.agent_type, float(tr.length[i]), float(tr.width[i]),
                                  bool(visible[tid]), tid == ego_id, tuple(run)))
        if tid == ego_id and not cfg.include_ego_trajectory:
            continue
        if not visible[tid]:
            continue
        pts = np.array([[p[1], p[2]] for p in run])
        ks = np.array([p[0] for p in run], dtype=np.float64)
        code = float(AGENT_TYPES.get(tr.agent_type, 0))
        attrs = np.column_stack([ks[1:] if len(ks) > 1 else ks, np.full(max(1, len(ks) - 1), code), np.zeros(max(1, len(ks) - 1))])
        polylines.append(Polyline.from_points(f"traj:{tid}", VectorClass.TRAJECTORY, pts, attrs, source=tid))

    polylines.extend(vectorize_map(map_json or {}, frame, grid, cfg.map_step))
    rect = grid_rect(frame, grid)
    shadows = [shadow_polygon((0.0, 0.0), fps[tid], rect) for tid in fps if tid != ego_id and visible[tid]]
    polylines.extend(occlusion_polylines(shadows, cfg.occlusion_step))

    return SceneSample(
        polylines=tuple(polylines),
        mask=MaskOgm(mask, grid.resolution),
        ground_truth=Ogm(gt, grid.resolution),
        frame=frame,
        sample_id=sample_id if sample_id is not None else f"{ego_id}@{t_ms}",
        timestamp=int(t_ms),
        agents=tuple(agents),
    )


# synthetic intersections

@dataclass(frozen=True)
class SynthConfig:
    scene: SceneConfig = SceneConfig()
    min_vehicles: int = 2
    max_vehicles: int = 8
    speed_range: tuple = (3.0, 12.0)
    arm_length: float = 80.0
    lane_width: float = 3.5
    lanes_per_direction: int = 2
    truck_prob: float = 0.25
    platoon_prob: float = 0.8
    spawn_window: tuple = (20.0, 15.0)
    max_platoon: int = 4
    platoon_gap: tuple = (1.5, 5.0)
    hidden_ego_prob: float = 0.5
    history_frames: int = 11
    max_retries: int = 100


def _rot(v, ang):
    c, s = math.cos(ang), math.sin(ang)
    return np.array([c * v[0] - s * v[1], s * v[0] + c * v[1]])


_ARMS = [np.array([1.0, 0.0]), np.array([0.0, 1.0]), np.array([-1.0, 0.0]), np.array([0.0, -1.0])]


def intersection_map(cfg: SynthConfig = SynthConfig()):
    """Four-arm intersection centred on the origin, right-hand traffic."""
    half = cfg.lane_width * cfg.lanes_per_direction
    far = cfg.arm_length
    r = 3.0
    elems = []
    for a, u in enumerate(_ARMS):
        left = _rot(u, math.pi / 2)
        for side, sgn in (("l", 1), ("r", -1)):
            elems.append({"id": f"curb{a}{side}", "road_type": "curb",
                          "points": [(u * (half + r) + sgn * half * left).tolist(), (u * far + sgn * half * left).tolist()]})
        elems.append({"id": f"divider{a}", "road_type": "lane_boundary", "points": [(u * half).tolist(), (u * far).tolist()]})
        for k in range(1, cfg.lanes_per_direction):
            for sgn in (1, -1):
                off = sgn * k * cfg.lane_width * left
                elems.append({"id": f"lane{a}{'lr'[sgn < 0]}{k}", "road_type": "lane_boundary",
                              "points": [(u * half + off).tolist(), (u * far + off).tolist()]})
        elems.append({"id": f"crosswalk{a}", "road_type": "crosswalk",
                      "points": [(u * (half + 2) + half * left).tolist(), (u * (half + 2) - half * left).tolist()]})
        # rounded corner between this arm's left curb and the next arm's right curb
        nxt = _ARMS[(a + 1) % 4]
        center = (half + r) * (u + nxt)
        ang0 = math.atan2(-nxt[1], -nxt[0])
        arc = [(center + r * np.array([math.cos(ang0 - s), math.sin(ang0 - s)])).tolist()
               for s in np.linspace(0, math.pi / 2, 7)]
        elems.append({"id": f"corner{a}", "road_type": "curb", "points": arc})
    return {"polylines": elems}


def _route(cfg: SynthConfig, arm_in, turn, lane):
    """Dense centerline of a route: turn in {-1: right, 0: straight, 1: left}."""
    half = cfg.lane_width * cfg.lanes_per_direction
    u_in = _ARMS[arm_in]
    arm_out = {0: (arm_in + 2) % 4, 1: (arm_in + 3) % 4, -1: (arm_in + 1) % 4}[turn]
    u_out = _ARMS[arm_out]
    off = (lane + 0.5) * cfg.lane_width
    right_in = _rot(-u_in, -math.pi / 2)
    right_out = _rot(u_out, -math.pi / 2)
    start = u_in * cfg.arm_length + right_in * off
    entry = u_in * half + right_in * off
    exit_ = u_out * half + right_out * off
    end = u_out * cfg.arm_length + right_out * off
    if turn == 0:
        mid = [entry, exit_]
    else:
        # control point where the two lane lines cross
        t = np.linalg.solve(np.column_stack([-u_in, u_out]), exit_ - entry)
        ctrl = entry - t[0] * u_in
        ts = np.linspace(0, 1, 17)[:, None]
        mid = list((1 - ts) ** 2 * entry + 2 * (1 - ts) * ts * ctrl + ts**2 * exit_)
    pts = np.array([start, *mid, end])
    return resample(pts, 0.5)


class _Path:
    def __init__(self, pts):
        self.pts = pts
        seg = np.hypot(*np.diff(pts, axis=0).T)
        self.s = np.concatenate([[0.0], np.cumsum(seg)])
        self.length = float(self.s[-1])

    def pose(self, s):
        x = np.interp(s, self.s, self.pts[:, 0])
        y = np.interp(s, self.s, self.pts[:, 1])
        ds = 0.5
        x2 = np.interp(np.minimum(s + ds, self.length), self.s, self.pts[:, 0]) - np.interp(np.maximum(s - ds, 0), self.s, self.pts[:, 0])
        y2 = np.interp(np.minimum(s + ds, self.length), self.s, self.pts[:, 1]) - np.interp(np.maximum(s - ds, 0), self.s, self.pts[:, 1])
        return x, y, np.arctan2(y2, x2)


def _boxes_overlap(a: Footprint, b: Footprint, margin=0.3):
    """Separating-axis test on footprints inflated by ``margin``."""
    ca, cb = a.corners(), b.corners()
    for fp in (a, b):
        for axis in fp.axes:
            pa, pb = ca @ axis, cb @ axis
            if pa.max() + margin < pb.min() or pb.max() + margin < pa.min():
                return False
    return True


def synth_tracks(rng: np.random.Generator, cfg: SynthConfig = SynthConfig()) -> TrackTable:
    # skewed toward busy scenes; occlusion needs company
    span = cfg.max_vehicles - cfg.min_vehicles
    n_target = cfg.min_vehicles + int(round(span * math.sqrt(rng.random())))
    nf = cfg.history_frames + 1
    times = np.arange(nf) * FRAME_MS / 1000.0
    t_now = times[-1]
    vehicles = []  # (type, length, width, xs, ys, hs)
    attempts = 0
    while len(vehicles) < n_target and attempts < 200:
        attempts += 1
        arm = int(rng.integers(4))
        turn = int(rng.choice([-1, 0, 0, 1]))
        lane = {-1: cfg.lanes_per_direction - 1, 1: 0}.get(turn, int(rng.integers(cfg.lanes_per_direction)))
        path = _Path(_route(cfg, arm, turn, lane))
        speed = float(rng.uniform(*cfg.speed_range))
        size = 1
        if rng.random() < cfg.platoon_prob:
            size = int(rng.integers(2, cfg.max_platoon + 1))
        size = min(size, n_target - len(vehicles))
        # leaders cluster around the junction box where paths interact
        s_lead = float(rng.uniform(cfg.arm_length - cfg.spawn_window[0], cfg.arm_length + cfg.spawn_window[1]))
        group, s = [], s_lead
        for _ in range(size):
            if rng.random() < cfg.truck_prob:
                kind, length, width = "truck", float(rng.uniform(7.0, 10.0)), float(rng.uniform(2.4, 2.6))
            else:
                kind, length, width = "car", float(rng.uniform(4.0, 5.0)), float(rng.uniform(1.7, 2.0))
            if group:
                s -= 0.5 * (group[-1][1] + length) + float(rng.uniform(*cfg.platoon_gap))
            s_hist = s - speed * (t_now - times)
            if s_hist[0] < 0 or s_hist[-1] > path.length:
                break
            xs, ys, hs = path.pose(s_hist)
            group.append((kind, length, width, xs, ys, hs))
        if not group:
            continue
        ok = True
        for cand in group:
            for other in vehicles:
                for f in range(nf):
                    fa = Footprint((cand[3][f], cand[4][f]), cand[5][f], cand[1], cand[2])
                    fb = Footprint((other[3][f], other[4][f]), other[5][f], other[1], other[2])
                    if _boxes_overlap(fa, fb):
                        ok = False
                        break
                if not ok:
                    break
            if not ok:
                break
        if ok:
            vehicles.extend(group)
    tracks = {}
    for k, (kind, length, width, xs, ys, hs) in enumerate(vehicles):
        tid = str(k + 1)
        tracks[tid] = Track(tid, kind, np.arange(nf, dtype=np.int64), (np.arange(nf) * FRAME_MS).astype(np.int64),
                            np.asarray(xs, dtype=np.float64), np.asarray(ys, dtype=np.float64), np.asarray(hs, dtype=np.float64),
                            np.full(nf, length), np.full(nf, width))
    return TrackTable(tracks)


def _view_summary(table: TrackTable, ego_id, scfg: SceneConfig):
    """(any other vehicle centred in the ego grid, any in-grid vehicle fully hidden)."""
    tr = table[ego_id]
    frame = EgoFrame(float(tr.x[-1]), float(tr.y[-1]), float(tr.heading[-1]), scfg.anchor)
    others = [_ego_footprint(o, len(o) - 1, frame) for oid, o in sorted(table.tracks.items()) if oid != ego_id]
    if not others:
        return False, False
    centers = np.array([fp.center for fp in others])
    if not np.any(ego_to_cell(centers, frame, scfg.grid)[2]):
        return False, False
    hidden = any(
        _in_grid(fp, frame, scfg.grid)
        and not np.any(points_visible((0.0, 0.0), np.vstack([fp.corners(), [fp.center]]), others))
        for fp in others
    )
    return True, hidden


def synth_scene(seed: int, cfg: SynthConfig = SynthConfig()) -> SceneSample:
    """Deterministic synthetic intersection sample for ``seed``."""
    rng = np.random.default_rng(seed)
    map_json = intersection_map(cfg)
    for _ in range(cfg.max_retries):
        table = synth_tracks(rng, cfg)
        t_ms = cfg.history_frames * FRAME_MS
        candidates, hiding = [], []
        for tid in sorted(table.tracks, key=int):
            in_view, hidden = _view_summary(table, tid, cfg.scene)
            if in_view:
                candidates.append(tid)
                if hidden:
                    hiding.append(tid)
        if candidates:
            pool = hiding if hiding and rng.random() < cfg.hidden_ego_prob else candidates
            ego = pool[int(rng.integers(len(pool)))]
            return build_sample(table, map_json, ego, t_ms, cfg.scene, sample_id=f"synth:{seed}")
    raise SceneError(f"seed {seed}: no valid ego after {cfg.max_retries} retries")


def with_scene_config(cfg: SynthConfig, **kw) -> SynthConfig:
    return replace(cfg, scene=replace(cfg.scene, **kw))


def save_map(map_json, path):
    Path(path).write_text(json.dumps(map_json, indent=1))
