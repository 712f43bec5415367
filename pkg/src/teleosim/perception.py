"""Simulated laser-pointer perception.

The neural detector of the real pipeline is replaced by exact geometry: the
emitter ray is cast against the scene's bounded planes and boxes, giving a
3D spot that is then low-pass smoothed (with a stale-input reset mirroring
the camera/depth timestamp-sync check) and fed to dwell-based selection:
holding the spot inside a small ball for long enough turns it into a goal,
or presses a virtual keyboard button when aimed at the keyboard area.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import RigidTransform

RAY_EPS = 1e-9
DEFAULT_SYNC_GAP = 0.033  # s, reset threshold between spot samples
DEFAULT_SPOT_CUTOFF_HZ = 5.0
DEFAULT_DWELL_RADIUS = 0.04  # m
DEFAULT_DWELL_TIME = 3.0  # s, environment goals
DEFAULT_KEY_DWELL_TIME = 1.0  # s, keyboard buttons
KEY_WIDTH = 0.105  # m
KEY_HEIGHT = 0.099  # m
KEY_LINEAR_SPEED = 0.025  # m/s commanded by direction buttons
KEY_ANGULAR_SPEED = 0.25  # rad/s commanded by yaw buttons


@dataclass
class Surface:
    """Bounded rectangle on a plane: point + unit normal + in-plane axes."""

    label: str
    point: np.ndarray
    normal: np.ndarray
    u_axis: np.ndarray  # in-plane unit axis; half extent along it
    half_u: float
    half_v: float

    def __post_init__(self):
        self.point = np.asarray(self.point, dtype=float).reshape(3)
        self.normal = np.asarray(self.normal, dtype=float).reshape(3)
        self.u_axis = np.asarray(self.u_axis, dtype=float).reshape(3)
        if abs(np.linalg.norm(self.normal) - 1.0) > 1e-9:
            raise ValueError(f"surface {self.label!r}: normal must be unit")
        if self.half_u <= 0 or self.half_v <= 0:
            raise ValueError(f"surface {self.label!r}: degenerate bounds")
        self.u_axis = self.u_axis - np.dot(self.u_axis, self.normal) * self.normal
        self.u_axis /= np.linalg.norm(self.u_axis)
        self.v_axis = np.cross(self.normal, self.u_axis)

    def local_uv(self, point: np.ndarray) -> tuple[float, float]:
        rel = np.asarray(point, dtype=float) - self.point
        return float(rel @ self.u_axis), float(rel @ self.v_axis)


@dataclass
class SceneBox:
    """Axis-aligned box in its own pose frame (yaw-only poses supported)."""

    label: str
    pose: RigidTransform
    half_extents: np.ndarray

    def __post_init__(self):
        self.half_extents = np.asarray(self.half_extents, dtype=float).reshape(3)
        if np.any(self.half_extents <= 0):
            raise ValueError(f"box {self.label!r}: degenerate extents")


@dataclass
class Scene:
    surfaces: list = field(default_factory=list)
    boxes: list = field(default_factory=list)


@dataclass
class LaserSpot:
    position: np.ndarray
    surface: str
    timestamp: float = 0.0

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).reshape(3)


def _ray_plane(origin, direction, surface: Surface):
    denom = float(direction @ surface.normal)
    if abs(denom) < RAY_EPS:
        return None
    t = float((surface.point - origin) @ surface.normal) / denom
    if t <= RAY_EPS:
        return None
    hit = origin + t * direction
    u, v = surface.local_uv(hit)
    if abs(u) > surface.half_u or abs(v) > surface.half_v:
        return None
    # snap exactly onto the plane so the on-surface invariant holds
    hit = hit - float((hit - surface.point) @ surface.normal) * surface.normal
    return t, hit


def _ray_box(origin, direction, box: SceneBox):
    inv = box.pose.inverse()
    o = inv.apply(origin)
    d = inv.rotate(direction)
    t_min, t_max = -np.inf, np.inf
    for axis in range(3):
        if abs(d[axis]) < RAY_EPS:
            if abs(o[axis]) > box.half_extents[axis]:
                return None
            continue
        t1 = (-box.half_extents[axis] - o[axis]) / d[axis]
        t2 = (box.half_extents[axis] - o[axis]) / d[axis]
        t_min = max(t_min, min(t1, t2))
        t_max = min(t_max, max(t1, t2))
    if t_max < max(t_min, RAY_EPS):
        return None
    t = t_min if t_min > RAY_EPS else t_max
    if t <= RAY_EPS:
        return None
    return t, origin + t * np.asarray(direction, dtype=float)


def laser_raycast(scene: Scene, emitter: RigidTransform, timestamp: float = 0.0):
    """Nearest hit of the emitter's forward (+x) ray, or None."""
    origin = emitter.translation
    direction = emitter.rotate([1.0, 0.0, 0.0])
    best = None
    for surface in scene.surfaces:
        hit = _ray_plane(origin, direction, surface)
        if hit and (best is None or hit[0] < best[0]):
            best = (hit[0], hit[1], surface.label)
    for box in scene.boxes:
        hit = _ray_box(origin, direction, box)
        if hit and (best is None or hit[0] < best[0]):
            best = (hit[0], hit[1], box.label)
    if best is None:
        return None
    return LaserSpot(position=best[1], surface=best[2], timestamp=timestamp)


@dataclass
class SpotFilter:
    """Per-axis low-pass over the spot stream; a timestamp gap larger than
    the sync tolerance resets the filter onto the new sample."""

    cutoff_hz: float = DEFAULT_SPOT_CUTOFF_HZ
    max_gap: float = DEFAULT_SYNC_GAP
    _value: np.ndarray | None = None
    _last_t: float | None = None

    def step(self, position: np.ndarray, timestamp: float) -> np.ndarray:
        position = np.asarray(position, dtype=float).reshape(3)
        if self._last_t is not None and timestamp < self._last_t:
            raise ValueError("spot timestamps must be monotone")
        stale = self._last_t is None or (timestamp - self._last_t) > self.max_gap
        if stale or self._value is None:
            self._value = position.copy()
        else:
            dt = timestamp - self._last_t
            tau = 1.0 / (2.0 * np.pi * self.cutoff_hz)
            alpha = 1.0 - np.exp(-dt / tau)
            self._value = self._value + alpha * (position - self._value)
        self._last_t = timestamp
        return self._value.copy()

    def reset(self):
        self._value = None
        self._last_t = None


@dataclass
class DwellState:
    """Rolling-anchor dwell detector: emits a goal once the spot stays
    within ``radius`` of the first sample of the current window for
    ``required`` seconds; leaving the ball re-anchors and restarts."""

    radius: float = DEFAULT_DWELL_RADIUS
    required: float = DEFAULT_DWELL_TIME
    anchor: np.ndarray | None = None
    anchor_time: float | None = None

    def __post_init__(self):
        if self.radius <= 0 or self.required <= 0:
            raise ValueError("dwell radius and required time must be > 0")
        self._elapsed = 0.0

    @property
    def elapsed(self) -> float:
        return 0.0 if self.anchor_time is None else self._elapsed

    def update(self, position: np.ndarray, timestamp: float):
        """Feed one spot sample; returns the goal position or None."""
        position = np.asarray(position, dtype=float).reshape(3)
        if self.anchor is None:
            self.anchor = position.copy()
            self.anchor_time = timestamp
            self._elapsed = 0.0
            return None
        if np.linalg.norm(position - self.anchor) > self.radius:
            self.anchor = position.copy()
            self.anchor_time = timestamp
            self._elapsed = 0.0
            return None
        self._elapsed = timestamp - self.anchor_time
        if self._elapsed >= self.required:
            goal = position.copy()
            self.reset()
            return goal
        return None

    def reset(self):
        self.anchor = None
        self.anchor_time = None
        self._elapsed = 0.0


def smooth_spot(filter_state: SpotFilter, position, timestamp: float) -> np.ndarray:
    return filter_state.step(position, timestamp)


def dwell_select(state: DwellState, position, timestamp: float):
    return state.update(position, timestamp)


@dataclass
class KeyboardButton:
    command: str
    center_u: float
    center_v: float
    width: float = KEY_WIDTH
    height: float = KEY_HEIGHT


@dataclass
class KeyboardLayout:
    """Paper keyboard on a scene surface; buttons live in the surface's
    (u, v) plane coordinates and must not overlap."""

    surface: str
    buttons: list

    def __post_init__(self):
        for i, a in enumerate(self.buttons):
            for b in self.buttons[i + 1 :]:
                if (
                    abs(a.center_u - b.center_u) < (a.width + b.width) / 2.0 - 1e-12
                    and abs(a.center_v - b.center_v) < (a.height + b.height) / 2.0 - 1e-12
                ):
                    raise ValueError(f"buttons {a.command!r} and {b.command!r} overlap")

    @staticmethod
    def grid(surface: str, commands, cols: int, origin_u: float = 0.0,
             origin_v: float = 0.0, pitch_u: float = KEY_WIDTH + 0.01,
             pitch_v: float = KEY_HEIGHT + 0.01) -> "KeyboardLayout":
        buttons = [
            KeyboardButton(
                command=c,
                center_u=origin_u + (i % cols) * pitch_u,
                center_v=origin_v - (i // cols) * pitch_v,
            )
            for i, c in enumerate(commands)
        ]
        return KeyboardLayout(surface=surface, buttons=buttons)

    def bounds(self):
        us = [b.center_u for b in self.buttons]
        vs = [b.center_v for b in self.buttons]
        bw = max(b.width for b in self.buttons) / 2.0
        bh = max(b.height for b in self.buttons) / 2.0
        return min(us) - bw, max(us) + bw, min(vs) - bh, max(vs) + bh

    def contains_uv(self, u: float, v: float) -> bool:
        lo_u, hi_u, lo_v, hi_v = self.bounds()
        return lo_u <= u <= hi_u and lo_v <= v <= hi_v


def keyboard_hit(spot: LaserSpot, layout: KeyboardLayout, scene: Scene):
    """Command id of the button strictly containing the spot, else None.

    A spot on a button boundary (shared edges included) counts as no press.
    """
    surface = next((s for s in scene.surfaces if s.label == layout.surface), None)
    if surface is None or spot.surface != layout.surface:
        return None
    u, v = surface.local_uv(spot.position)
    for button in layout.buttons:
        if (
            abs(u - button.center_u) < button.width / 2.0 - 1e-9
            and abs(v - button.center_v) < button.height / 2.0 - 1e-9
        ):
            return button.command
    return None
