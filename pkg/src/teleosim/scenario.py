"""Scenario configuration: robot, scene, objects, gains and thresholds.

A scenario file is YAML; every control parameter the stack exposes
(spring stiffness, deadzone, admittance diagonals, VTR thresholds, noise
magnitudes, dwell rules, reach box, controller gains) lives here so
missions are reproducible data, not code.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .geometry import RigidTransform, rot_z
from .kinematics import ChainModel, Joint, mobile_base_chain
from .perception import (
    DEFAULT_DWELL_RADIUS,
    DEFAULT_DWELL_TIME,
    DEFAULT_KEY_DWELL_TIME,
    DEFAULT_SPOT_CUTOFF_HZ,
    DEFAULT_SYNC_GAP,
    KeyboardLayout,
    Scene,
    SceneBox,
    Surface,
)
from .world import SimObject, World


class ScenarioError(ValueError):
    pass


@dataclass
class TpoConfig:
    k_cam: float = 1.8
    deadzone: float = 0.03
    cutoff_hz: float = 5.0
    admittance_m: float = 1.0
    admittance_d: float = 10.0
    admittance_k: float = 2.0
    cartesian_gain: tuple = (0.1, 0.1, 0.1)
    base_gain: tuple = (0.04, 0.04, 0.04)  # K_nu, base velocity per N


@dataclass
class VtrConfig:
    enabled: bool = True
    d: tuple = (0.25, 0.25, 0.25)
    delta: tuple = (0.1, 0.1, 0.1)
    disabled: tuple = (False, False, False)


@dataclass
class BimanualConfig:
    mu_s: float = 0.6
    k_margin: float = 1.4
    f_initial: float = 45.0
    coop_d: float = 2500.0
    coop_k: float = 200.0
    mass_samples: int = 100
    squeeze_rate: float = 120.0  # N/s regulation slew


@dataclass
class PerceptionConfig:
    spot_noise_sigma: float = 0.003
    force_noise_sigma: float = 0.1
    dwell_radius: float = DEFAULT_DWELL_RADIUS
    dwell_time: float = DEFAULT_DWELL_TIME
    keyboard_dwell_time: float = DEFAULT_KEY_DWELL_TIME
    cutoff_hz: float = DEFAULT_SPOT_CUTOFF_HZ
    sync_gap: float = DEFAULT_SYNC_GAP


@dataclass
class ControllerConfig:
    kp: float = 1.2
    ki: float = 0.0
    kd: float = 0.0
    max_linear: float = 0.25
    max_angular: float = 0.7


@dataclass
class Scenario:
    name: str
    world: World
    scene: Scene
    keyboard: KeyboardLayout | None
    initial_arm_q: dict
    initial_base_q: tuple
    objects: list
    tpo: TpoConfig
    vtr: VtrConfig
    bimanual: BimanualConfig
    perception: PerceptionConfig
    controllers: dict  # name -> ControllerConfig
    reach_box: dict  # axis -> (lo, hi) in the base frame
    goals: list = field(default_factory=list)
    goal_tolerance: float = 0.06
    seed: int = 0
    dt: float = 0.01

    def initial_state(self):
        state = self.world.initial_state(
            arm_q=self.initial_arm_q, base_q=self.initial_base_q
        )
        for obj in self.objects:
            state.objects[obj.name] = obj.copy()
        return state


def _simple_arm(name: str, mount, links, limits=None) -> ChainModel:
    """Shoulder yaw + pitch, then a pitch joint per extra link."""
    if len(links) < 2:
        raise ScenarioError(f"arm {name!r}: need at least two links")
    lim = limits or (-2.6, 2.6)
    joints = [
        Joint("sh_yaw", "revolute", [0.0, 0.0, 1.0],
              RigidTransform.from_translation(mount), lim, 3.0, link=f"{name}_shoulder"),
        Joint("sh_pitch", "revolute", [0.0, 1.0, 0.0],
              RigidTransform.identity(), lim, 3.0, link=f"{name}_upper"),
    ]
    for i, length in enumerate(links[:-1]):
        joints.append(
            Joint(f"pitch{i + 2}", "revolute", [0.0, 1.0, 0.0],
                  RigidTransform.from_translation([length, 0.0, 0.0]),
                  lim, 3.0, link=f"{name}_seg{i + 2}")
        )
    return ChainModel(name=name, joints=joints)


def _surface_from_dict(raw: dict) -> Surface:
    return Surface(
        label=raw["label"],
        point=raw["point"],
        normal=raw["normal"],
        u_axis=raw.get("u_axis", [1.0, 0.0, 0.0]),
        half_u=float(raw.get("half_u", 1.0)),
        half_v=float(raw.get("half_v", 1.0)),
    )


def _box_from_dict(raw: dict) -> SceneBox:
    pose = RigidTransform(rot_z(float(raw.get("yaw", 0.0))), raw.get("pos", [0, 0, 0]))
    return SceneBox(label=raw["label"], pose=pose, half_extents=raw["half_extents"])


def _dataclass_from(cls, raw: dict, what: str):
    known = set(cls.__dataclass_fields__)
    unknown = set(raw) - known
    if unknown:
        raise ScenarioError(f"unknown {what} keys: {sorted(unknown)}")
    kwargs = {
        k: tuple(v) if isinstance(v, list) else v for k, v in raw.items()
    }
    return cls(**kwargs)


def scenario_from_dict(raw: dict, name: str = "scenario") -> Scenario:
    robot = raw.get("robot", {})
    base = mobile_base_chain(
        pelvis_height=float(robot.get("pelvis_height", 0.6)),
        squat_limits=tuple(robot.get("squat_limits", (-0.25, 0.35))),
    )
    arms = {}
    ee_points = {}
    for arm_name, arm_raw in robot.get("arms", {}).items():
        links = [float(v) for v in arm_raw.get("links", (0.35, 0.3))]
        arms[arm_name] = _simple_arm(arm_name, arm_raw.get("mount", [0.0, 0.0, 0.0]), links)
        ee_points[arm_name] = np.array([links[-1], 0.0, 0.0])
    if not arms:
        raise ScenarioError("scenario defines no arms")

    world = World(
        base=base,
        arms=arms,
        ee_points=ee_points,
        camera_offset=robot.get("camera_offset", (0.1, 0.0, 0.5)),
        camera_pitch_limits=tuple(robot.get("camera_pitch_limits", (-1.2, 1.2))),
        mu_s=float(raw.get("bimanual", {}).get("mu_s", 0.6)),
    )

    scene_raw = raw.get("scene", {})
    scene = Scene(
        surfaces=[_surface_from_dict(s) for s in scene_raw.get("surfaces", [])],
        boxes=[_box_from_dict(b) for b in scene_raw.get("boxes", [])],
    )

    keyboard = None
    if "keyboard" in raw:
        kb = raw["keyboard"]
        keyboard = KeyboardLayout.grid(
            surface=kb["surface"],
            commands=kb["commands"],
            cols=int(kb.get("cols", 5)),
            origin_u=float(kb.get("origin_u", 0.0)),
            origin_v=float(kb.get("origin_v", 0.0)),
        )

    objects = [
        SimObject(
            name=o["name"],
            pose=RigidTransform(rot_z(float(o.get("yaw", 0.0))), o.get("pos", [0, 0, 0])),
            mass=float(o.get("mass", 1.0)),
            half_extents=o.get("half_extents", [0.1, 0.1, 0.1]),
            support_z=float(o.get("support_z", o.get("pos", [0, 0, 0])[2])),
        )
        for o in raw.get("objects", [])
    ]

    controllers = {"arm": ControllerConfig(), "base_planar": ControllerConfig(max_linear=0.5),
                   "base_yaw": ControllerConfig(), "squat": ControllerConfig(max_linear=0.2)}
    for cname, craw in raw.get("controllers", {}).items():
        controllers[cname] = _dataclass_from(ControllerConfig, craw, f"controller {cname!r}")

    reach_raw = raw.get("reach_box", {"x": (0.25, 0.95), "y": (-0.7, 0.7), "z": (0.1, 1.3)})
    reach_box = {axis: tuple(float(v) for v in pair) for axis, pair in reach_raw.items()}

    initial_arm_q = {
        arm_name: np.asarray(q, dtype=float)
        for arm_name, q in robot.get("initial_q", {}).items()
    }

    return Scenario(
        name=raw.get("name", name),
        world=world,
        scene=scene,
        keyboard=keyboard,
        initial_arm_q=initial_arm_q,
        initial_base_q=tuple(robot.get("initial_base", (0.0, 0.0, 0.0, 0.0))),
        objects=objects,
        tpo=_dataclass_from(TpoConfig, raw.get("tpo", {}), "tpo"),
        vtr=_dataclass_from(VtrConfig, raw.get("vtr", {}), "vtr"),
        bimanual=_dataclass_from(BimanualConfig, raw.get("bimanual", {}), "bimanual"),
        perception=_dataclass_from(PerceptionConfig, raw.get("perception", {}), "perception"),
        controllers=controllers,
        reach_box=reach_box,
        goals=[tuple(float(v) for v in g) for g in raw.get("goals", [])],
        goal_tolerance=float(raw.get("goal_tolerance", 0.06)),
        seed=int(raw.get("seed", 0)),
        dt=float(raw.get("dt", 0.01)),
    )


def load_scenario(path) -> Scenario:
    path = Path(path)
    if not path.exists():
        raise ScenarioError(f"scenario file not found: {path}")
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    if not isinstance(raw, dict):
        raise ScenarioError(f"scenario file {path} is not a mapping")
    return scenario_from_dict(raw, name=path.stem)
