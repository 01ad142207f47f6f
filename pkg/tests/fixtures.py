"""Shared desk-scale fixtures: the two-class overfit scene."""

from __future__ import annotations

from eventmixer.events import (
    MotionSpec,
    SceneConfig,
    SceneObject,
    SensorGeometry,
    synth_scene,
    window_events,
)
from eventmixer.graph import build_graph
from eventmixer.model import ModelConfig

GEOM = SensorGeometry(346, 260)

# two spatially separated objects, no noise: 8 windows of ~200 events
OVERFIT_SCENE = SceneConfig(
    geometry=GEOM,
    duration_ms=800.0,
    event_rate=2000.0,
    noise_rate=0.0,
    motion=MotionSpec("rotational", speed=0.5),
    objects=(
        SceneObject("disc", 1, (110, 130), radius=36),
        SceneObject("rect", 2, (235, 130), size=(70, 50)),
    ),
)

OVERFIT_SEED = 11


def overfit_graphs():
    events = synth_scene(OVERFIT_SCENE, OVERFIT_SEED)
    windows = window_events(events, 100_000, 10_000)
    return [build_graph(w, GEOM) for w in windows if len(w)]


def overfit_model_config(seed: int = 0) -> ModelConfig:
    return ModelConfig(n_classes=3, widths=(16, 24, 32, 48), k_set=(8, 12, 16, 24), seed=seed)
