"""Deterministic fixed-timestep world.

Quasi-static kinematics only: joints and base pose integrate commanded
velocities, grasped objects ride their grasp frame rigidly, and slipping is
the single piece of "dynamics" (an object whose friction budget cannot
carry its weight drops back onto its support). Sensing is the only place
noise enters, and always through an explicitly seeded generator.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bimanual import GRAVITY, EEForce, object_frame
from .geometry import RigidTransform, rot_z, wrap_angle
from .kinematics import ChainModel, JointState, forward_kinematics

DEFAULT_DT = 0.01  # s, shared by sim, controllers and BT ticks
HOLDS = "holds"
SLIPS = "slips"


@dataclass
class GripperState:
    position: float = 1.0  # 0 = closed, 1 = open
    effort: float = 0.0  # N squeeze on a held object
    target: float = 1.0
    rate: float = 2.5  # fraction of full travel per second


@dataclass
class SimObject:
    name: str
    pose: RigidTransform
    mass: float
    half_extents: np.ndarray
    support_z: float = 0.0  # resting height of the object center
    grasped: bool = False
    grasp_kind: str = ""  # "gripper" | "bimanual"
    grasp_offset: RigidTransform = field(default_factory=RigidTransform.identity)

    def __post_init__(self):
        self.half_extents = np.asarray(self.half_extents, dtype=float).reshape(3)

    def copy(self) -> "SimObject":
        return SimObject(
            name=self.name,
            pose=self.pose.copy(),
            mass=self.mass,
            half_extents=self.half_extents.copy(),
            support_z=self.support_z,
            grasped=self.grasped,
            grasp_kind=self.grasp_kind,
            grasp_offset=self.grasp_offset.copy(),
        )


@dataclass
class BimanualHold:
    """Squeeze bookkeeping for a two-arm grasp. The applied normal force is
    an actuator-regulated state slewing toward its setpoint, not a function
    of penetration (see the admittance law notes in bimanual.py)."""

    object_name: str
    squeeze: float
    setpoint: float
    rate: float = 120.0  # N/s regulation slew
    offset_b: np.ndarray = field(default_factory=lambda: np.zeros(3))
    slipped: bool = False

    def copy(self) -> "BimanualHold":
        return BimanualHold(
            object_name=self.object_name,
            squeeze=self.squeeze,
            setpoint=self.setpoint,
            rate=self.rate,
            offset_b=self.offset_b.copy(),
            slipped=self.slipped,
        )


@dataclass
class WorldState:
    clock: float = 0.0
    chains: dict = field(default_factory=dict)  # name -> JointState
    gripper: GripperState = field(default_factory=GripperState)
    objects: dict = field(default_factory=dict)  # name -> SimObject
    emitter_pose: RigidTransform = field(default_factory=RigidTransform.identity)
    camera_pitch: float = 0.0
    sensed_forces: EEForce = field(default_factory=EEForce)
    hold: BimanualHold | None = None
    slip_count: int = 0

    def copy(self) -> "WorldState":
        return WorldState(
            clock=self.clock,
            chains={k: v.copy() for k, v in self.chains.items()},
            gripper=GripperState(
                self.gripper.position, self.gripper.effort,
                self.gripper.target, self.gripper.rate,
            ),
            objects={k: v.copy() for k, v in self.objects.items()},
            emitter_pose=self.emitter_pose.copy(),
            camera_pitch=self.camera_pitch,
            sensed_forces=EEForce(self.sensed_forces.left.copy(),
                                  self.sensed_forces.right.copy()),
            hold=self.hold.copy() if self.hold else None,
            slip_count=self.slip_count,
        )


@dataclass
class Commands:
    """Per-step inputs drained from the command queue.

    base_linear is a world-frame velocity whose z component drives the
    pelvis squat; base_yaw_rate turns the base in place.
    """

    q_dot: dict = field(default_factory=dict)  # chain name -> N-vector
    base_linear: np.ndarray = field(default_factory=lambda: np.zeros(3))
    base_yaw_rate: float = 0.0
    gripper: str | None = None  # "open" | "close"
    camera_pitch_rate: float = 0.0

    def __post_init__(self):
        self.base_linear = np.asarray(self.base_linear, dtype=float).reshape(3)


class World:
    """Static description: kinematic chains, attachment points, camera."""

    def __init__(
        self,
        base: ChainModel,
        arms: dict[str, ChainModel],
        ee_points: dict[str, np.ndarray] | None = None,
        camera_offset: np.ndarray = (0.1, 0.0, 0.5),
        camera_pitch_limits: tuple[float, float] = (-1.2, 1.2),
        mu_s: float = 0.6,
        grasp_range: float = 0.12,
    ):
        self.base = base
        self.arms = arms
        self.ee_points = {
            name: np.asarray((ee_points or {}).get(name, np.zeros(3)), dtype=float)
            for name in arms
        }
        self.camera_offset = np.asarray(camera_offset, dtype=float)
        self.camera_pitch_limits = camera_pitch_limits
        self.mu_s = mu_s
        self.grasp_range = grasp_range

    def initial_state(self, arm_q: dict[str, np.ndarray] | None = None,
                      base_q=(0.0, 0.0, 0.0, 0.0)) -> WorldState:
        chains = {"base": JointState(np.asarray(base_q, dtype=float))}
        for name, model in self.arms.items():
            q = (arm_q or {}).get(name)
            chains[name] = JointState(np.zeros(model.n) if q is None else np.asarray(q, dtype=float))
        return WorldState(chains=chains)

    def pelvis_transform(self, state: WorldState) -> RigidTransform:
        return forward_kinematics(self.base, state.chains["base"])["pelvis"]

    def base_pose(self, state: WorldState) -> tuple[float, float, float, float]:
        q = state.chains["base"].q
        pelvis_z = self.pelvis_transform(state).translation[2]
        return float(q[0]), float(q[1]), float(q[2]), float(pelvis_z)

    def arm_fk(self, state: WorldState, side: str) -> dict[str, RigidTransform]:
        pelvis = self.pelvis_transform(state)
        fk = forward_kinematics(self.arms[side], state.chains[side])
        return {link: pelvis @ t for link, t in fk.items()}

    def ee_transform(self, state: WorldState, side: str) -> RigidTransform:
        model = self.arms[side]
        tip = self.arm_fk(state, side)[model.tip_link]
        return tip @ RigidTransform.from_translation(self.ee_points[side])

    def ee_position(self, state: WorldState, side: str) -> np.ndarray:
        return self.ee_transform(state, side).translation

    def camera_transform(self, state: WorldState) -> RigidTransform:
        pelvis = self.pelvis_transform(state)
        return pelvis @ RigidTransform.from_translation(self.camera_offset)

    def grasp_frame(self, state: WorldState) -> RigidTransform | None:
        """Midpoint frame of a bimanual hold, or the gripper EE frame."""
        if state.hold is not None:
            p_l = self.ee_position(state, "left")
            p_r = self.ee_position(state, "right")
            return RigidTransform(object_frame(p_l, p_r), (p_l + p_r) / 2.0)
        for obj in state.objects.values():
            if obj.grasped and obj.grasp_kind == "gripper":
                return self.ee_transform(state, "right")
        return None


def grasp_check(mass: float, f_nl: float, f_nr: float, mu_s: float,
                g: float = GRAVITY) -> str:
    """Coulomb friction budget: holds iff mu_s (f_Nl + f_Nr) >= m g."""
    if f_nl < 0 or f_nr < 0:
        raise ValueError("normal forces must be >= 0")
    return HOLDS if mu_s * (f_nl + f_nr) >= mass * g else SLIPS


def sense_forces(world: World, state: WorldState, sigma: float,
                 rng: np.random.Generator) -> EEForce:
    """Static contact model in the object frame b: each arm carries half the
    weight on z (equal contact heights), and the lateral components read
    +squeeze on the left arm, -squeeze on the right."""
    left = np.zeros(3)
    right = np.zeros(3)
    if state.hold is not None and not state.hold.slipped:
        obj = state.objects[state.hold.object_name]
        half_weight = obj.mass * GRAVITY / 2.0
        squeeze = state.hold.squeeze
        left[:] = (0.0, squeeze, half_weight)
        right[:] = (0.0, -squeeze, half_weight)
    if sigma > 0.0:
        left = left + rng.normal(0.0, sigma, size=3)
        right = right + rng.normal(0.0, sigma, size=3)
    return EEForce(left=left, right=right)


def gaze_ref(world: World, state: WorldState, goal: np.ndarray) -> float:
    """Camera pitch that centers the goal vertically (pinhole model)."""
    cam = world.camera_transform(state)
    rel = np.asarray(goal, dtype=float) - cam.translation
    horizontal = float(np.hypot(rel[0], rel[1]))
    pitch = float(np.arctan2(rel[2], horizontal)) if horizontal > 1e-12 else (
        np.pi / 2 if rel[2] > 0 else -np.pi / 2
    )
    lo, hi = world.camera_pitch_limits
    return float(np.clip(pitch, lo, hi))


def step(world: World, state: WorldState, dt: float, commands: Commands) -> WorldState:
    """Advance the world one fixed step (explicit Euler, limits clamped)."""
    if dt <= 0:
        raise ValueError("dt must be > 0")
    nxt = state.copy()
    nxt.clock = state.clock + dt

    # base: world-frame planar velocity, squat on z, yaw rate
    base_q = nxt.chains["base"].q
    base_q[0] += commands.base_linear[0] * dt
    base_q[1] += commands.base_linear[1] * dt
    base_q[2] = wrap_angle(base_q[2] + commands.base_yaw_rate * dt)
    base_q[3] += commands.base_linear[2] * dt
    nxt.chains["base"].q = world.base.clamp(base_q)

    for name, model in world.arms.items():
        q_dot = commands.q_dot.get(name)
        if q_dot is None:
            continue
        q_dot = model.clamp_velocity(np.asarray(q_dot, dtype=float))
        joint = nxt.chains[name]
        joint.q = model.clamp(joint.q + q_dot * dt)
        joint.q_dot = q_dot

    lo, hi = world.camera_pitch_limits
    nxt.camera_pitch = float(
        np.clip(nxt.camera_pitch + commands.camera_pitch_rate * dt, lo, hi)
    )

    # gripper travel
    if commands.gripper == "open":
        nxt.gripper.target = 1.0
    elif commands.gripper == "close":
        nxt.gripper.target = 0.0
    delta = np.clip(nxt.gripper.target - nxt.gripper.position,
                    -nxt.gripper.rate * dt, nxt.gripper.rate * dt)
    nxt.gripper.position = float(np.clip(nxt.gripper.position + delta, 0.0, 1.0))

    # squeeze regulation for a bimanual hold
    if nxt.hold is not None and not nxt.hold.slipped:
        err = nxt.hold.setpoint - nxt.hold.squeeze
        nxt.hold.squeeze += float(np.clip(err, -nxt.hold.rate * dt, nxt.hold.rate * dt))

    # grasped objects ride the grasp frame; slip drops them onto the support
    frame = world.grasp_frame(nxt)
    for obj in nxt.objects.values():
        if not obj.grasped:
            continue
        if obj.grasp_kind == "bimanual" and nxt.hold is not None:
            if grasp_check(obj.mass, nxt.hold.squeeze, nxt.hold.squeeze, world.mu_s) == SLIPS:
                _release(nxt, obj)
                continue
        if frame is not None:
            obj.pose = frame @ obj.grasp_offset
    return nxt


def _release(state: WorldState, obj: SimObject):
    obj.grasped = False
    obj.grasp_kind = ""
    dropped = obj.pose.copy()
    dropped.translation[2] = obj.support_z
    obj.pose = dropped
    state.slip_count += 1
    if state.hold is not None and state.hold.object_name == obj.name:
        state.hold.slipped = True
        state.hold.squeeze = 0.0
        state.hold.setpoint = 0.0


def start_bimanual_hold(world: World, state: WorldState, object_name: str,
                        initial_force: float) -> WorldState:
    """Grasp an object between the two arm end-effectors at the commanded
    initial squeeze; records the follower offset in the object frame."""
    nxt = state.copy()
    obj = nxt.objects[object_name]
    p_l = world.ee_position(nxt, "left")
    p_r = world.ee_position(nxt, "right")
    r_b = object_frame(p_l, p_r)
    frame = RigidTransform(r_b, (p_l + p_r) / 2.0)
    obj.grasped = True
    obj.grasp_kind = "bimanual"
    obj.grasp_offset = frame.inverse() @ obj.pose
    nxt.hold = BimanualHold(
        object_name=object_name,
        squeeze=initial_force,
        setpoint=initial_force,
        offset_b=r_b.T @ (p_r - p_l),
    )
    return nxt


# --- PID Cartesian reference generation -----------------------------------


@dataclass
class PidGains:
    kp: float = 1.2
    ki: float = 0.0
    kd: float = 0.0


class CartesianPid:
    """Per-axis PID on a position error, output clamped in norm."""

    def __init__(self, gains: PidGains, v_max: float, dims: int = 3):
        self.gains = gains
        self.v_max = v_max
        self.integral = np.zeros(dims)
        self.prev_error: np.ndarray | None = None

    def compute(self, error: np.ndarray, dt: float) -> np.ndarray:
        error = np.atleast_1d(np.asarray(error, dtype=float))
        self.integral += error * dt
        derivative = np.zeros_like(error)
        if self.prev_error is not None and dt > 0:
            derivative = (error - self.prev_error) / dt
        self.prev_error = error.copy()
        out = (
            self.gains.kp * error
            + self.gains.ki * self.integral
            + self.gains.kd * derivative
        )
        norm = np.linalg.norm(out)
        if norm > self.v_max > 0:
            out = out * (self.v_max / norm)
        return out

    def reset(self):
        self.integral = np.zeros_like(self.integral)
        self.prev_error = None
