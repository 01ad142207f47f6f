"""Asynchronous event streams: parsing, synthesis, and time windowing.

An event is a single brightness-change report from a dynamic vision
sensor: pixel location, microsecond timestamp, polarity, and (for
supervised data) a class label. Streams are kept in non-decreasing
timestamp order. Windowing slices a stream into fixed-duration windows,
keeping at most the ``n_max`` most recent events per window.

Event file format (UTF-8 text, one event per line)::

    x,y,t_us,polarity[,label]

``#``-prefixed lines are comments; an optional single header line can be
skipped with ``has_header=True``. Polarity is -1 or +1. Polarity is
carried through parsing and serialization but never used as a model
feature.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, DataError

US_PER_MS = 1_000
US_PER_S = 1_000_000


@dataclass(frozen=True, slots=True)
class SensorGeometry:
    """Pixel dimensions of the sensor array (width x height)."""

    width: int
    height: int

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise ConfigError(f"sensor geometry must be >= 1x1, got {self.width}x{self.height}")


@dataclass(frozen=True, slots=True)
class Event:
    """One asynchronous camera event."""

    x: int
    y: int
    t: int  # microseconds
    polarity: int  # -1 or +1
    label: int | None = None


@dataclass(slots=True)
class EventWindow:
    """Events of one time interval [t0, t0 + duration), capped at n_max.

    ``events`` stay ordered by (timestamp, ingestion order). When the raw
    window held more than n_max events, only the n_max most recent are
    retained (ties broken toward later ingestion) and ``truncated`` is set.
    """

    events: list[Event]
    t0: int
    duration: int
    truncated: bool = False

    def __len__(self) -> int:
        return len(self.events)


def parse_event_stream(
    lines: Iterable[str],
    geometry: SensorGeometry,
    has_header: bool = False,
) -> list[Event]:
    """Parse a line-oriented event stream, validating bounds and ordering."""
    events: list[Event] = []
    prev_t: int | None = None
    skip_header = has_header
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if skip_header:
            skip_header = False
            continue
        parts = line.split(",")
        if len(parts) not in (4, 5):
            raise DataError(f"line {lineno}: expected 4 or 5 fields, got {len(parts)}")
        try:
            x, y, t, polarity = (int(p) for p in parts[:4])
            label = int(parts[4]) if len(parts) == 5 else None
        except ValueError as exc:
            raise DataError(f"line {lineno}: {exc}") from None
        if not (0 <= x < geometry.width) or not (0 <= y < geometry.height):
            raise DataError(
                f"line {lineno}: coordinate ({x},{y}) outside "
                f"{geometry.width}x{geometry.height} sensor"
            )
        if t < 0:
            raise DataError(f"line {lineno}: negative timestamp {t}")
        if polarity not in (-1, 1):
            raise DataError(f"line {lineno}: polarity must be -1 or +1, got {polarity}")
        if label is not None and label < 0:
            raise DataError(f"line {lineno}: negative label {label}")
        if prev_t is not None and t < prev_t:
            raise DataError(f"line {lineno}: timestamp {t} decreases (previous {prev_t})")
        prev_t = t
        events.append(Event(x, y, t, polarity, label))
    return events


def parse_event_file(path, geometry: SensorGeometry, has_header: bool = False) -> list[Event]:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_event_stream(fh, geometry, has_header=has_header)


def serialize_events(events: Iterable[Event]) -> str:
    """Render events in the file format; inverse of parse_event_stream."""
    lines = []
    for e in events:
        if e.label is None:
            lines.append(f"{e.x},{e.y},{e.t},{e.polarity}")
        else:
            lines.append(f"{e.x},{e.y},{e.t},{e.polarity},{e.label}")
    return "\n".join(lines) + ("\n" if lines else "")


def window_events(
    stream: Sequence[Event],
    duration_us: int,
    n_max: int,
    stride_us: int | None = None,
) -> list[EventWindow]:
    """Slice a stream into windows of ``duration_us`` starting every ``stride_us``.

    Windows tile from the first event's timestamp. The default stride equals
    the duration (tumbling windows: each event lands in exactly one window);
    a smaller stride yields overlap. Windows that exceed ``n_max`` raw events
    keep only the n_max most recent. Empty windows inside the covered span
    are included; callers that build graphs skip them.
    """
    if duration_us <= 0:
        raise ConfigError(f"window duration must be > 0, got {duration_us}")
    if n_max < 1:
        raise ConfigError(f"n_max must be >= 1, got {n_max}")
    if stride_us is None:
        stride_us = duration_us
    if stride_us <= 0:
        raise ConfigError(f"stride must be > 0, got {stride_us}")
    if not stream:
        return []

    times = np.array([e.t for e in stream], dtype=np.int64)
    t_first = int(times[0])
    t_last = int(times[-1])
    windows: list[EventWindow] = []
    t0 = t_first
    while t0 <= t_last:
        lo = int(np.searchsorted(times, t0, side="left"))
        hi = int(np.searchsorted(times, t0 + duration_us, side="left"))
        chunk = list(stream[lo:hi])
        truncated = len(chunk) > n_max
        if truncated:
            chunk = chunk[-n_max:]
        windows.append(EventWindow(chunk, t0, duration_us, truncated))
        t0 += stride_us
    return windows


# ---------------------------------------------------------------------------
# Synthetic scenes
# ---------------------------------------------------------------------------

MOTION_KINDS = ("linear", "rotational", "partial_rotational")


@dataclass(frozen=True, slots=True)
class SceneObject:
    """A moving silhouette that fires events along its contour.

    ``shape`` is "disc" (needs radius) or "rect" (needs size=(w, h)).
    ``cls`` is the object's class id (>= 1; 0 is reserved for noise).
    """

    shape: str
    cls: int
    center: tuple[float, float]
    radius: float | None = None
    size: tuple[float, float] | None = None

    def __post_init__(self) -> None:
        if self.shape not in ("disc", "rect"):
            raise ConfigError(f"unknown object shape {self.shape!r}")
        if self.cls < 1:
            raise ConfigError(f"object class must be >= 1, got {self.cls}")
        if self.shape == "disc":
            if self.radius is None or self.radius <= 0:
                raise ConfigError("disc needs a positive radius")
        else:
            if self.size is None or self.size[0] <= 0 or self.size[1] <= 0:
                raise ConfigError("rect needs positive width and height")

    def perimeter(self) -> float:
        if self.shape == "disc":
            return 2.0 * math.pi * float(self.radius)
        w, h = self.size  # type: ignore[misc]
        return 2.0 * (w + h)

    def contour_point(self, u: float) -> tuple[float, float]:
        """Point on the contour at arc parameter u in [0, 1), object frame."""
        cx, cy = self.center
        if self.shape == "disc":
            phi = 2.0 * math.pi * u
            r = float(self.radius)
            return cx + r * math.cos(phi), cy + r * math.sin(phi)
        w, h = self.size  # type: ignore[misc]
        p = u * self.perimeter()
        if p < w:
            return cx - w / 2 + p, cy - h / 2
        p -= w
        if p < h:
            return cx + w / 2, cy - h / 2 + p
        p -= h
        if p < w:
            return cx + w / 2 - p, cy + h / 2
        p -= w
        return cx - w / 2, cy + h / 2 - p


@dataclass(frozen=True, slots=True)
class MotionSpec:
    """Rigid scene motion relative to the camera.

    linear: translation at ``speed`` px/s along ``direction_deg``.
    rotational: rotation about the image center at ``speed`` rad/s.
    partial_rotational: same, but the angle sweeps a triangle wave
    bounded by ``max_angle`` (back-and-forth partial rotation).
    """

    kind: str
    speed: float
    direction_deg: float = 45.0
    max_angle: float = math.pi / 2

    def __post_init__(self) -> None:
        if self.kind not in MOTION_KINDS:
            raise ConfigError(f"motion kind must be one of {MOTION_KINDS}, got {self.kind!r}")

    def apply(self, x: float, y: float, t_s: float, geometry: SensorGeometry) -> tuple[float, float]:
        if self.kind == "linear":
            ang = math.radians(self.direction_deg)
            return x + self.speed * t_s * math.cos(ang), y + self.speed * t_s * math.sin(ang)
        theta = self.speed * t_s
        if self.kind == "partial_rotational":
            # triangle wave in [0, max_angle]
            span = self.max_angle
            phase = math.fmod(abs(theta), 2.0 * span)
            theta = phase if phase <= span else 2.0 * span - phase
        cx = geometry.width / 2.0
        cy = geometry.height / 2.0
        c, s = math.cos(theta), math.sin(theta)
        dx, dy = x - cx, y - cy
        return cx + c * dx - s * dy, cy + s * dx + c * dy


@dataclass(frozen=True, slots=True)
class SceneConfig:
    """Full description of a synthetic scene.

    ``event_rate`` is the total contour event rate (events/s), split
    across objects proportionally to contour length. ``noise_rate``
    (events/s) fires uniformly over the sensor with label 0.
    """

    geometry: SensorGeometry
    duration_ms: float
    event_rate: float
    motion: MotionSpec
    objects: tuple[SceneObject, ...]
    noise_rate: float = 0.0

    def __post_init__(self) -> None:
        if self.duration_ms <= 0:
            raise ConfigError(f"duration must be > 0 ms, got {self.duration_ms}")
        if self.event_rate <= 0:
            raise ConfigError(f"event rate must be > 0, got {self.event_rate}")
        if self.noise_rate < 0:
            raise ConfigError(f"noise rate must be >= 0, got {self.noise_rate}")
        if not self.objects:
            raise ConfigError("scene needs at least one object")


def scene_config_from_dict(doc: dict) -> SceneConfig:
    """Build a SceneConfig from the documented JSON schema."""
    try:
        geometry = SensorGeometry(int(doc["width"]), int(doc["height"]))
        motion_doc = doc.get("motion", {})
        motion = MotionSpec(
            kind=motion_doc.get("kind", "linear"),
            speed=float(motion_doc.get("speed", 30.0)),
            direction_deg=float(motion_doc.get("direction_deg", 45.0)),
            max_angle=float(motion_doc.get("max_angle", math.pi / 2)),
        )
        objects = []
        for obj in doc["objects"]:
            objects.append(
                SceneObject(
                    shape=obj["shape"],
                    cls=int(obj["cls"]),
                    center=(float(obj["center"][0]), float(obj["center"][1])),
                    radius=float(obj["radius"]) if "radius" in obj else None,
                    size=tuple(float(v) for v in obj["size"]) if "size" in obj else None,
                )
            )
        return SceneConfig(
            geometry=geometry,
            duration_ms=float(doc["duration_ms"]),
            event_rate=float(doc["event_rate"]),
            noise_rate=float(doc.get("noise_rate", 0.0)),
            motion=motion,
            objects=tuple(objects),
        )
    except KeyError as exc:
        raise ConfigError(f"scene config missing field {exc}") from None


def load_scene_config(path) -> SceneConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return scene_config_from_dict(json.load(fh))


def synth_scene(config: SceneConfig, seed: int) -> list[Event]:
    """Generate a labeled event stream for a synthetic scene.

    Deterministic for a fixed (config, seed). Contour events carry the
    object's class; noise events carry label 0. Output is sorted by
    timestamp. Contour events that fall outside the sensor are dropped.
    """
    rng = np.random.default_rng(seed)
    geom = config.geometry
    dur_s = config.duration_ms / 1e3

    xs: list[np.ndarray] = []
    ys: list[np.ndarray] = []
    ts: list[np.ndarray] = []
    labels: list[np.ndarray] = []

    perims = np.array([obj.perimeter() for obj in config.objects])
    rates = config.event_rate * perims / perims.sum()
    for obj, rate in zip(config.objects, rates):
        n = int(rng.poisson(rate * dur_s))
        t_s = rng.uniform(0.0, dur_s, size=n)
        u = rng.uniform(0.0, 1.0, size=n)
        px = np.empty(n)
        py = np.empty(n)
        for i in range(n):
            ox, oy = obj.contour_point(float(u[i]))
            px[i], py[i] = config.motion.apply(ox, oy, float(t_s[i]), geom)
        xi = np.floor(px).astype(np.int64)
        yi = np.floor(py).astype(np.int64)
        keep = (xi >= 0) & (xi < geom.width) & (yi >= 0) & (yi < geom.height)
        xs.append(xi[keep])
        ys.append(yi[keep])
        ts.append((t_s[keep] * US_PER_S).astype(np.int64))
        labels.append(np.full(int(keep.sum()), obj.cls, dtype=np.int64))

    n_noise = int(rng.poisson(config.noise_rate * dur_s)) if config.noise_rate > 0 else 0
    if n_noise:
        xs.append(rng.integers(0, geom.width, size=n_noise))
        ys.append(rng.integers(0, geom.height, size=n_noise))
        ts.append((rng.uniform(0.0, dur_s, size=n_noise) * US_PER_S).astype(np.int64))
        labels.append(np.zeros(n_noise, dtype=np.int64))

    x = np.concatenate(xs) if xs else np.empty(0, dtype=np.int64)
    y = np.concatenate(ys) if ys else np.empty(0, dtype=np.int64)
    t = np.concatenate(ts) if ts else np.empty(0, dtype=np.int64)
    lab = np.concatenate(labels) if labels else np.empty(0, dtype=np.int64)
    pol = rng.choice(np.array([-1, 1], dtype=np.int64), size=len(t))

    order = np.argsort(t, kind="stable")
    return [
        Event(int(x[i]), int(y[i]), int(t[i]), int(pol[i]), int(lab[i]))
        for i in order
    ]
