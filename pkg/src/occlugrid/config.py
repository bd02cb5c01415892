"""Run configuration (JSON) and data loading for the command line."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .model import NetConfig
from .scene import SceneConfig, build_sample, parse_tracks, read_dataset, select_egos, synth_scene


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    model: str = "vector"
    net: NetConfig = field(default_factory=NetConfig)
    data: dict = field(default_factory=lambda: {"kind": "synthetic", "seeds": [0, 32]})
    epochs: int = 20
    batch_size: int = 16
    lr: float = 1e-4
    eval_split: float = 0.5
    out_dir: str = "runs/default"
    seed: int = 0
    checkpoint_every: int = 5
    threads: int = 1

    def __post_init__(self):
        if self.model not in ("vector", "baseline"):
            raise ConfigError(f"model must be 'vector' or 'baseline', got {self.model!r}")
        if not 0 < self.eval_split < 1:
            raise ConfigError(f"eval_split must lie in (0, 1), got {self.eval_split}")
        if self.epochs < 1 or self.batch_size < 1 or self.checkpoint_every < 1:
            raise ConfigError("epochs, batch_size and checkpoint_every must be positive")
        if self.data.get("kind") not in ("synthetic", "dataset", "tracks"):
            raise ConfigError(f"unknown data kind {self.data.get('kind')!r}")

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        d = dict(d)
        if "net" in d:
            d["net"] = NetConfig.from_dict(d["net"])
        return cls(**d)

    @classmethod
    def load(cls, path):
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc

    def to_dict(self):
        d = asdict(self)
        d["net"] = self.net.to_dict()
        return d


def is_eval(key: int, fraction: float) -> bool:
    """Deterministic stride split; fraction 0.5 selects odd keys."""
    return math.floor((key + 1) * fraction) > math.floor(key * fraction)


def parse_seeds(text: str):
    """'a:b' (half-open range) or comma-separated integers."""
    text = text.strip()
    if not text:
        return []
    if ":" in text:
        a, b = text.split(":", 1)
        return list(range(int(a), int(b)))
    return [int(t) for t in text.split(",") if t.strip()]


def load_samples(data: dict, scene_cfg: SceneConfig = SceneConfig()):
    """(key, sample) pairs for a data source description."""
    kind = data.get("kind")
    if kind == "synthetic":
        seeds = data["seeds"]
        seeds = range(seeds[0], seeds[1]) if isinstance(seeds, list) and len(seeds) == 2 else parse_seeds(str(seeds))
        return [(s, synth_scene(s)) for s in seeds]
    if kind == "dataset":
        return list(enumerate(read_dataset(data["path"])))
    if kind == "tracks":
        tracks = parse_tracks(Path(data["csv"]).read_bytes())
        map_json = json.loads(Path(data["map"]).read_text()) if data.get("map") else {}
        pairs = select_egos(tracks, data.get("min_presence", 1.0))[:: int(data.get("stride", 1))]
        limit = data.get("limit")
        if limit is not None:
            pairs = pairs[: int(limit)]
        return [(i, build_sample(tracks, map_json, tid, t, scene_cfg)) for i, (tid, t) in enumerate(pairs)]
    raise ConfigError(f"unknown data kind {kind!r}")


def split(pairs, fraction):
    train = [s for k, s in pairs if not is_eval(k, fraction)]
    held = [s for k, s in pairs if is_eval(k, fraction)]
    return train, held
