"""Vector and polyline containers shared by the scene and model code."""
from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

N_FIELDS = 8  # xs, ys, xe, ye, class, 3 attribute slots


class VectorClass(IntEnum):
    TRAJECTORY = 0
    SCENE_CONTEXT = 1
    OCCLUSION = 2


ROAD_TYPES = {"lane_boundary": 1, "curb": 2, "centerline": 3, "crosswalk": 4}
AGENT_TYPES = {"car": 1, "truck": 2, "bus": 3, "motorcycle": 4, "bicycle": 5}


@dataclass(frozen=True)
class Vector:
    start: tuple
    end: tuple
    cls: VectorClass
    attrs: tuple = (0.0, 0.0, 0.0)

    def as_row(self):
        return [*self.start, *self.end, float(self.cls), *self.attrs]


@dataclass(frozen=True, eq=False)
class Polyline:
    """Ordered vectors of one class; rows of ``features`` follow ``Vector.as_row``."""

    id: str
    type: VectorClass
    features: np.ndarray
    source: str = ""

    def __post_init__(self):
        feats = np.array(self.features, dtype=np.float64, copy=True).reshape(-1, N_FIELDS)
        if feats.shape[0] < 1:
            raise ValueError(f"polyline {self.id!r} has no vectors")
        if not np.all(np.isfinite(feats)):
            raise ValueError(f"polyline {self.id!r} has non-finite coordinates")
        if not np.all(feats[:, 4] == int(self.type)):
            raise ValueError(f"polyline {self.id!r} mixes vector classes")
        feats.setflags(write=False)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "type", VectorClass(self.type))

    def __len__(self):
        return self.features.shape[0]

    @property
    def vectors(self):
        return [
            Vector((r[0], r[1]), (r[2], r[3]), VectorClass(int(r[4])), (r[5], r[6], r[7]))
            for r in self.features.tolist()
        ]

    @classmethod
    def from_points(cls, id, type, points, attrs=None, source=""):
        """Chain consecutive points into head-to-tail vectors.

        ``attrs`` is either one 3-tuple for every vector or an (m, 3) array.
        """
        pts = np.asarray(points, dtype=np.float64)
        if len(pts) == 1:
            pts = np.vstack([pts, pts])
        m = len(pts) - 1
        a = np.zeros((m, 3)) if attrs is None else np.broadcast_to(np.asarray(attrs, dtype=np.float64), (m, 3))
        feats = np.column_stack([pts[:-1], pts[1:], np.full(m, float(type)), a])
        return cls(id, type, feats, source)

    def to_json(self):
        return {"id": self.id, "type": int(self.type), "source": self.source, "vectors": self.features.tolist()}

    @classmethod
    def from_json(cls, d):
        return cls(d["id"], VectorClass(d["type"]), np.asarray(d["vectors"], dtype=np.float64), d.get("source", ""))

    def __eq__(self, other):
        if not isinstance(other, Polyline):
            return NotImplemented
        return (self.id, self.type, self.source) == (other.id, other.type, other.source) and np.array_equal(
            self.features, other.features
        )

    __hash__ = None
