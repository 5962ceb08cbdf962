"""Deterministic 2D multi-lane driving world with pixel observations."""

from .track import Arc, Straight, Track, TrackError, bundled_track_names, load_track
from .world import (ACTION_NAMES, LEFT, NO_ACTION, RIGHT, Action, CarState, Probe,
                    SimConfig, StepEvents, World)
from .render import (FrameRing, RenderConfig, dequantize, hud_region, preprocess,
                     quantize, render, render_hwc)

__all__ = [
    "Arc", "Straight", "Track", "TrackError", "bundled_track_names", "load_track",
    "ACTION_NAMES", "LEFT", "NO_ACTION", "RIGHT", "Action", "CarState", "Probe",
    "SimConfig", "StepEvents", "World",
    "FrameRing", "RenderConfig", "dequantize", "hud_region", "preprocess",
    "quantize", "render", "render_hwc",
]
