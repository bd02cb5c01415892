"""Occluded-space occupancy inference from vectorized driving scenes."""
from .estimator import OgmAnnotator, PatchTransformerOgm, VectorOcclusionModel, estimator_for
from .grid import EgoFrame, GridSpec, MaskOgm, Ogm
from .metrics import MetricReport, evaluate
from .model import NetConfig
from .scene import SceneConfig, SceneSample, build_sample, synth_scene

__version__ = "0.1.0"

__all__ = [
    "EgoFrame",
    "GridSpec",
    "MaskOgm",
    "MetricReport",
    "NetConfig",
    "Ogm",
    "OgmAnnotator",
    "PatchTransformerOgm",
    "SceneConfig",
    "SceneSample",
    "VectorOcclusionModel",
    "build_sample",
    "estimator_for",
    "evaluate",
    "synth_scene",
]
