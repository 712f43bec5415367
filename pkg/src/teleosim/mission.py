"""Mission runner: one fixed-timestep loop wiring every subsystem together.

Per 10 ms tick, in a fixed order so replays are bit-identical:

1. drain operator events (trace file entries or live wire commands),
2. perception: cast the laser, smooth the spot, arbitrate keyboard vs
   environment dwell, publish the goal on the blackboard,
3. tick the behavior tree (action modules start/abort Cartesian
   controllers),
4. run the virtual-force pipeline (admittance per chain, manipulability
   splitting, mirroring) and the bimanual transport pipeline,
5. integrate the world, sense forces, compute feedback, append the log.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import bimanual as bm
from .bt import ActionParams, Blackboard, BtError, Environment, Status, parse_tree, tick
from .feedback import FeedbackFrame, map_feedback
from .geometry import RigidTransform, rot_z, wrap_angle
from .kinematics import dls_ik_step, point_jacobian
from .perception import (
    DwellState,
    SpotFilter,
    keyboard_hit,
    laser_raycast,
    smooth_spot,
)
from .scenario import Scenario
from .tpo import (
    AdmittanceParams,
    CartesianGain,
    ControlPoint,
    LowPass,
    TrackerInput,
    VirtualForce,
    cartesian_ref,
    mirror_force,
    postural_step,
    reset_reference,
    virtual_force,
)
from .vtr import BaseGain, VtrThresholds, VtrWeights, vtr, vtr_weight
from .world import (
    CartesianPid,
    Commands,
    PidGains,
    World,
    WorldState,
    gaze_ref,
    sense_forces,
    start_bimanual_hold,
    step,
)


@dataclass
class TraceEvent:
    t: float
    kind: str
    data: dict


def load_trace(path) -> list[TraceEvent]:
    events = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{line_no}: bad trace line: {exc}") from None
            events.append(TraceEvent(float(raw["t"]), raw["kind"],
                                      {k: v for k, v in raw.items() if k not in ("t", "kind")}))
    for a, b in zip(events, events[1:]):
        if b.t < a.t:
            raise ValueError(f"trace timestamps must be monotone ({a.t} then {b.t})")
    return events


def dump_trace(events: list[TraceEvent], path):
    with open(path, "w") as fh:
        for ev in events:
            fh.write(json.dumps({"t": ev.t, "kind": ev.kind, **ev.data},
                                sort_keys=True) + "\n")


def emitter_pose_from(pos, direction) -> RigidTransform:
    """Pose whose +x axis points along ``direction``."""
    d = np.asarray(direction, dtype=float)
    norm = np.linalg.norm(d)
    if norm < 1e-12:
        raise ValueError("emitter direction must be non-zero")
    x = d / norm
    up = np.array([0.0, 0.0, 1.0])
    if abs(x @ up) > 0.999:
        up = np.array([0.0, 1.0, 0.0])
    y = np.cross(up, x)
    y /= np.linalg.norm(y)
    z = np.cross(x, y)
    return RigidTransform(np.column_stack([x, y, z]), np.asarray(pos, dtype=float))


# --- operator input channels ------------------------------------------------


@dataclass
class Channel:
    side: str
    control_point: str  # "left_ee" | "right_ee" | "base" | "squat" | "yaw"
    active: bool = False
    tracker: TrackerInput | None = None
    direct_force: np.ndarray | None = None
    last_force: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def current_force(self) -> np.ndarray:
        if not self.active:
            return np.zeros(3)
        if self.direct_force is not None:
            return self.direct_force.copy()
        if self.tracker is not None:
            return virtual_force(self.tracker)
        return np.zeros(3)


# --- BT action modules -------------------------------------------------------


class MotionTask:
    """Base of the PID Cartesian controllers behind the action modules."""

    kind = "task"

    def __init__(self, runner: "MissionRunner", params: ActionParams, cfg):
        self.runner = runner
        self.params = params
        self.cfg = cfg
        self.status = Status.RUNNING
        self.latched_target: np.ndarray | None = None

    def resolve_goal(self) -> np.ndarray | None:
        return self.runner.resolve_frame(self.params.goal_frame)

    def offset_world(self) -> np.ndarray:
        # goal offsets are expressed in the robot base frame
        yaw = self.runner.base_yaw()
        return rot_z(yaw) @ np.asarray(self.params.final_goal_distance, dtype=float)

    def target(self) -> np.ndarray | None:
        if self.params.command_mode == "Reach":
            if self.latched_target is None:
                goal = self.resolve_goal()
                if goal is None:
                    return None
                self.latched_target = goal + self.offset_world()
            return self.latched_target
        goal = self.resolve_goal()
        return None if goal is None else goal + self.offset_world()

    def start(self):
        self.status = Status.RUNNING
        self.latched_target = None

    def abort(self):
        self.status = Status.RUNNING

    def step(self, commands: Commands):  # pragma: no cover - overridden
        raise NotImplementedError


class ArmTracking(MotionTask):
    def __init__(self, runner, params, cfg, side: str):
        super().__init__(runner, params, cfg)
        self.side = side
        self.kind = f"arm_{side}"
        self.pid = CartesianPid(PidGains(cfg.kp, cfg.ki, cfg.kd), cfg.max_linear)

    def start(self):
        super().start()
        if self.params.command_mode == "Reach" and self.params.goal_frame in (
            f"{self.side}_ee", "own",
        ):
            # relative move: offset in the end-effector frame
            ee = self.runner.world.ee_transform(self.runner.state, self.side)
            self.latched_target = ee.apply(self.params.final_goal_distance)

    def step(self, commands: Commands):
        target = self.target()
        if target is None:
            self.status = Status.FAILURE
            return
        current = self.runner.world.ee_position(self.runner.state, self.side)
        error = target - current
        if np.linalg.norm(error) <= self.params.linear_error_norm:
            self.status = Status.SUCCESS
            return
        v_world = self.pid.compute(error, self.runner.dt)
        self.runner.add_arm_velocity(commands, self.side, v_world)
        self.status = Status.RUNNING


class BasePlanarTracking(MotionTask):
    kind = "base_planar"

    def __init__(self, runner, params, cfg):
        super().__init__(runner, params, cfg)
        self.pid = CartesianPid(PidGains(cfg.kp, cfg.ki, cfg.kd), cfg.max_linear, dims=2)

    def step(self, commands: Commands):
        target = self.target()
        if target is None:
            self.status = Status.FAILURE
            return
        pose = self.runner.world.base_pose(self.runner.state)
        error = np.asarray(target[:2]) - np.array(pose[:2])
        if np.linalg.norm(error) <= self.params.linear_error_norm:
            self.status = Status.SUCCESS
            return
        v = self.pid.compute(error, self.runner.dt)
        commands.base_linear[0] += v[0]
        commands.base_linear[1] += v[1]
        self.status = Status.RUNNING


class BaseYawTracking(MotionTask):
    kind = "base_yaw"

    def __init__(self, runner, params, cfg):
        super().__init__(runner, params, cfg)
        self.latched_bearing: float | None = None

    def yaw_offset(self) -> float:
        ref = self.params.final_ref_orientation
        if isinstance(ref, (tuple, list)):
            return float(ref[-1])
        return float(ref)

    def step(self, commands: Commands):
        goal = self.resolve_goal()
        if goal is None:
            self.status = Status.FAILURE
            return
        pose = self.runner.world.base_pose(self.runner.state)
        bearing = float(np.arctan2(goal[1] - pose[1], goal[0] - pose[0]))
        if self.params.command_mode == "Reach":
            if self.latched_bearing is None:
                self.latched_bearing = bearing
            bearing = self.latched_bearing
        error = wrap_angle(bearing - self.yaw_offset() - pose[2])
        if abs(error) <= self.params.angular_error_norm:
            self.status = Status.SUCCESS
            return
        rate = float(np.clip(self.cfg.kp * error, -self.cfg.max_angular, self.cfg.max_angular))
        commands.base_yaw_rate += rate
        self.status = Status.RUNNING

    def start(self):
        super().start()
        self.latched_bearing = None


class SquatTracking(MotionTask):
    kind = "squat"

    def step(self, commands: Commands):
        target = self.target()
        if target is None:
            self.status = Status.FAILURE
            return
        pelvis_z = self.runner.world.base_pose(self.runner.state)[3]
        error = float(target[2]) - pelvis_z
        if abs(error) <= self.params.linear_error_norm:
            self.status = Status.SUCCESS
            return
        commands.base_linear[2] += float(
            np.clip(self.cfg.kp * error, -self.cfg.max_linear, self.cfg.max_linear)
        )
        self.status = Status.RUNNING


class GazeTracking(MotionTask):
    """Joint-space camera pitch; acknowledges right after starting and keeps
    tracking in the background until aborted."""

    kind = "gaze"

    def step(self, commands: Commands):
        goal = self.resolve_goal()
        self.status = Status.SUCCESS
        if goal is None:
            return
        target = gaze_ref(self.runner.world, self.runner.state, goal)
        error = target - self.runner.state.camera_pitch
        commands.camera_pitch_rate += float(np.clip(2.0 * error, -1.5, 1.5))


class GripperAct(MotionTask):
    def __init__(self, runner, params, cfg, mode: str):
        super().__init__(runner, params, cfg)
        self.mode = mode  # "open" | "close"
        self.kind = f"gripper_{mode}"

    def step(self, commands: Commands):
        commands.gripper = self.mode
        pos = self.runner.state.gripper.position
        done = pos <= 0.0 if self.mode == "close" else pos >= 1.0
        if done:
            if self.mode == "close":
                self.runner.try_gripper_grasp()
            else:
                self.runner.release_gripper_grasp()
            self.status = Status.SUCCESS
        else:
            self.status = Status.RUNNING


class ModuleAdapter:
    """BT leaf adapter: owns the controller lifecycle for one action id."""

    def __init__(self, runner, action_id):
        self.runner = runner
        self.action_id = action_id
        self.task: MotionTask | None = None

    def start(self, params: dict, bb):
        self.task = self.runner.make_task(self.action_id, params)
        self.task.start()
        self.runner.active_tasks[self.action_id] = self.task
        if isinstance(self.task, GazeTracking):
            # the gaze controller outlives its action node (it only
            # acknowledges initiation) until an explicit abort
            self.runner.ambient_tasks[self.action_id] = self.task

    def poll(self, bb) -> Status:
        if self.task is None:
            return Status.FAILURE
        status = self.task.status
        if status is not Status.RUNNING:
            self.runner.active_tasks.pop(self.action_id, None)
            self.task = None
        return status

    def abort(self, bb):
        if self.task is not None:
            self.task.abort()
        self.runner.active_tasks.pop(self.action_id, None)
        self.runner.ambient_tasks.pop(self.action_id, None)
        self.task = None


# --- bimanual transport pipeline ---------------------------------------------


@dataclass
class TransportPipeline:
    phase: str = "idle"  # idle -> lifting -> estimating -> transport
    object_name: str = ""
    lift_target_z: float = 0.0
    samples: list = field(default_factory=list)
    mass_estimate: float = 0.0
    f_bar: float = 0.0
    x_dot_cmd: np.ndarray = field(default_factory=lambda: np.zeros(3))


# --- the runner ----------------------------------------------------------------


class MissionRunner:
    def __init__(
        self,
        scenario: Scenario,
        tree_text: str | None = None,
        trace: list[TraceEvent] | None = None,
        seed: int | None = None,
        vtr_enabled: bool | None = None,
        blocking: bool = False,
    ):
        self.scenario = scenario
        self.world: World = scenario.world
        self.state: WorldState = scenario.initial_state()
        self.dt = scenario.dt
        self.rng = np.random.default_rng(scenario.seed if seed is None else seed)
        self.trace = sorted(trace or [], key=lambda e: e.t)
        self.trace_index = 0
        self.vtr_enabled = scenario.vtr.enabled if vtr_enabled is None else vtr_enabled
        self.blocking = blocking
        self.mirroring = False

        self.bb = Blackboard()
        self.tree = parse_tree(tree_text) if tree_text else None
        self.env = self._build_env() if self.tree else None
        self.active_tasks: dict[str, MotionTask] = {}
        self.ambient_tasks: dict[str, MotionTask] = {}

        # operator channels: right wrist drives the right arm, left wrist
        # switches between the left arm and the base control points
        self.channels = {
            "right": Channel("right", "right_ee", tracker=self._new_tracker()),
            "left": Channel("left", "left_ee", tracker=self._new_tracker()),
        }
        self.admittance: dict[str, AdmittanceParams] = {}
        self.q_refs: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        for name, model in self.world.arms.items():
            q0 = self.state.chains[name].q.copy()
            self.admittance[name] = AdmittanceParams.uniform(
                model.n,
                m=scenario.tpo.admittance_m,
                d=scenario.tpo.admittance_d,
                k=scenario.tpo.admittance_k,
                q_eq=q0.copy(),
                dt=self.dt,
            )
            self.q_refs[name] = (q0.copy(), np.zeros(model.n))

        self.thresholds = VtrThresholds(
            d=np.asarray(scenario.vtr.d), delta=np.asarray(scenario.vtr.delta),
            disabled=np.asarray(scenario.vtr.disabled, dtype=bool),
        )
        self.base_gain = BaseGain(np.asarray(scenario.tpo.base_gain))
        self.cart_gain = CartesianGain(np.asarray(scenario.tpo.cartesian_gain))
        self.last_weights = VtrWeights.ones()

        self.spot_filter = SpotFilter(
            cutoff_hz=scenario.perception.cutoff_hz, max_gap=scenario.perception.sync_gap
        )
        # dwell_time <= 0 means "live tracking": the smoothed spot itself is
        # the goal every step, with no dwell selection stage
        self.track_live = scenario.perception.dwell_time <= 0
        self.env_dwell = None if self.track_live else DwellState(
            radius=scenario.perception.dwell_radius,
            required=scenario.perception.dwell_time,
        )
        self.key_dwell = DwellState(
            radius=scenario.perception.dwell_radius,
            required=scenario.perception.keyboard_dwell_time,
        )
        self.active_key: str | None = None
        self.spot = None
        self.smoothed_spot: np.ndarray | None = None
        self.transport = TransportPipeline()
        self.scripted_base = Commands()
        self.goal_events: list[dict] = []
        self.feedback_events: list = []
        self.last_feedback = FeedbackFrame()
        self.cp_switches = 0
        self.goals_reached = 0
        self.goal_times: list[float] = []
        self.log_rows: list[dict] = []
        self.bt_status: str = ""
        self.external_events: list[dict] = []

    # -- construction helpers

    def _new_tracker(self) -> TrackerInput:
        cfg = self.scenario.tpo
        return TrackerInput(
            k_cam=cfg.k_cam,
            deadzone_radius=cfg.deadzone,
            filter=LowPass(cutoff_hz=cfg.cutoff_hz),
            dt=self.dt,
        )

    def _build_env(self) -> Environment:
        conditions = {
            "user_requesting": self._cond_user_requesting,
            "goal_available": lambda p, bb: bb.get("goal") is not None,
            "goal_in_arm_range": self._cond_goal_in_arm_range,
            "goal_in_front": self._cond_goal_in_front,
        }
        action_ids = [
            "arm_tracking", "left_arm_tracking", "right_arm_tracking",
            "arm_forward", "arm_backward",
            "base_planar_tracking", "base_yaw_tracking", "squat_tracking",
            "gaze_tracking", "gripper_open", "gripper_close",
        ]
        return Environment(
            conditions=conditions,
            actions={aid: ModuleAdapter(self, aid) for aid in action_ids},
        )

    def make_task(self, action_id: str, raw_params: dict) -> MotionTask:
        params = ActionParams.from_dict(dict(raw_params))
        cfgs = self.scenario.controllers
        if action_id in ("arm_tracking", "right_arm_tracking", "arm_forward", "arm_backward"):
            side = raw_params.get("side", "right")
            return ArmTracking(self, params, cfgs["arm"], side)
        if action_id == "left_arm_tracking":
            return ArmTracking(self, params, cfgs["arm"], "left")
        if action_id == "base_planar_tracking":
            return BasePlanarTracking(self, params, cfgs["base_planar"])
        if action_id == "base_yaw_tracking":
            return BaseYawTracking(self, params, cfgs["base_yaw"])
        if action_id == "squat_tracking":
            return SquatTracking(self, params, cfgs["squat"])
        if action_id == "gaze_tracking":
            return GazeTracking(self, params, cfgs["arm"])
        if action_id == "gripper_open":
            return GripperAct(self, params, cfgs["arm"], "open")
        if action_id == "gripper_close":
            return GripperAct(self, params, cfgs["arm"], "close")
        raise BtError(f"unknown action id {action_id!r}")

    # -- BT conditions

    def _cond_user_requesting(self, params, bb) -> bool:
        key = params.get("key", "track_requested")
        return bb.flag(key)

    def _goal_in_base_frame(self, bb):
        goal = bb.get("goal")
        if goal is None:
            return None
        pose = self.world.base_pose(self.state)
        rel = np.asarray(goal, dtype=float) - np.array([pose[0], pose[1], 0.0])
        return rot_z(-pose[2]) @ rel

    def _cond_goal_in_arm_range(self, params, bb) -> bool:
        rel = self._goal_in_base_frame(bb)
        if rel is None:
            return False
        axes = str(params.get("axes", "xyz"))
        box = self.scenario.reach_box
        checks = {"x": rel[0], "y": rel[1], "z": rel[2]}
        for axis in axes:
            lo, hi = box[axis]
            if not lo <= checks[axis] <= hi:
                return False
        return True

    def _cond_goal_in_front(self, params, bb) -> bool:
        goal = bb.get("goal")
        if goal is None:
            return False
        pose = self.world.base_pose(self.state)
        bearing = float(np.arctan2(goal[1] - pose[1], goal[0] - pose[0]))
        offset = float(params.get("offset", 0.0))
        yaw_error = float(params.get("yaw_error", 0.1))
        return abs(wrap_angle(bearing - offset - pose[2])) <= yaw_error

    # -- frames / goals

    def base_yaw(self) -> float:
        return self.world.base_pose(self.state)[2]

    def resolve_frame(self, frame: str):
        if frame in ("", "goal", "laser_spot"):
            goal = self.bb.get("goal")
            return None if goal is None else np.asarray(goal, dtype=float)
        if frame.endswith("_ee"):
            side = frame[: -len("_ee")]
            if side in self.world.arms:
                return self.world.ee_position(self.state, side)
        if frame.startswith("object:"):
            name = frame.split(":", 1)[1]
            obj = self.state.objects.get(name)
            return None if obj is None else obj.pose.translation
        return None

    def add_arm_velocity(self, commands: Commands, side: str, v_world: np.ndarray,
                         damping: float = 0.05):
        """Execute a world-frame EE velocity on an arm chain through DLS."""
        pelvis = self.world.pelvis_transform(self.state)
        v_local = pelvis.rotation.T @ np.asarray(v_world, dtype=float)
        model = self.world.arms[side]
        q_dot = dls_ik_step(
            model,
            self.state.chains[side],
            {"link": model.tip_link, "local_point": self.world.ee_points[side],
             "desired_velocity": v_local},
            damping=damping,
        )
        if side in commands.q_dot:
            commands.q_dot[side] = commands.q_dot[side] + q_dot
        else:
            commands.q_dot[side] = q_dot

    # -- operator events

    def apply_event(self, kind: str, data: dict):
        if kind == "tracker":
            ch = self.channels[data["side"]]
            ch.tracker.pose_in_origin = RigidTransform.from_translation(data["pos"])
            ch.direct_force = None
        elif kind == "force":
            ch = self.channels[data["side"]]
            ch.direct_force = np.asarray(data["vec"], dtype=float)
        elif kind == "emitter":
            self.state.emitter_pose = emitter_pose_from(data["pos"], data["dir"])
        elif kind == "object_vel":
            self.transport.x_dot_cmd = np.asarray(data["vec"], dtype=float)
        elif kind == "base_vel":
            self.scripted_base = Commands(
                base_linear=np.asarray(data.get("linear", (0.0, 0.0, 0.0)), dtype=float),
                base_yaw_rate=float(data.get("yaw_rate", 0.0)),
            )
        elif kind == "user":
            self.bb[data["name"]] = data.get("value", True)
        elif kind == "request":
            self._apply_request(data)
        else:
            raise ValueError(f"unknown event kind {kind!r}")

    def _apply_request(self, data: dict):
        name = data["name"]
        if name in ("toggle_left", "toggle_right"):
            side = "left" if name == "toggle_left" else "right"
            ch = self.channels[side]
            ch.active = bool(data.get("value", not ch.active))
            if ch.active and ch.tracker is not None:
                ch.tracker = reset_reference(ch.tracker)
            if not ch.active:
                ch.direct_force = None
            self.feedback_events.append((name, ch.active))
        elif name == "cp_change":
            side = data.get("side", "left")
            target = data.get("target")
            ch = self.channels[side]
            if target is None:
                target = "base" if ch.control_point.endswith("_ee") else f"{side}_ee"
            if target != ch.control_point:
                ch.control_point = target
                self.cp_switches += 1
                self.feedback_events.append(("cp_change", True))
        elif name == "gripper":
            closing = self.state.gripper.target > 0.5
            self.scripted_base.gripper = "close" if closing else "open"
            self.feedback_events.append(("gripper", closing))
        elif name == "reset_reference":
            side = data.get("side", "right")
            ch = self.channels[side]
            if ch.tracker is not None:
                ch.tracker = reset_reference(ch.tracker)
        elif name == "mirror":
            self.mirroring = bool(data.get("value", not self.mirroring))
        elif name == "vtr":
            self.vtr_enabled = bool(data.get("value", True))
        elif name == "blocking":
            self.blocking = bool(data.get("value", True))
        elif name == "bimanual_grasp":
            self._start_transport(data.get("object", self._first_object()))
        elif name == "release":
            self._release_hold()
        else:
            raise ValueError(f"unknown request {name!r}")

    def _first_object(self) -> str:
        if not self.state.objects:
            raise ValueError("no objects in scenario")
        return next(iter(self.state.objects))

    # -- gripper grasp helpers

    def try_gripper_grasp(self):
        ee = self.world.ee_transform(self.state, "right")
        for obj in self.state.objects.values():
            if obj.grasped:
                continue
            if np.linalg.norm(obj.pose.translation - ee.translation) <= self.world.grasp_range:
                obj.grasped = True
                obj.grasp_kind = "gripper"
                obj.grasp_offset = ee.inverse() @ obj.pose
                self.state.gripper.effort = self.scenario.bimanual.f_initial
                return obj.name
        return None

    def release_gripper_grasp(self):
        for obj in self.state.objects.values():
            if obj.grasped and obj.grasp_kind == "gripper":
                obj.grasped = False
                obj.grasp_kind = ""
                dropped = obj.pose.copy()
                dropped.translation[2] = obj.support_z
                obj.pose = dropped
        self.state.gripper.effort = 0.0

    # -- bimanual transport

    def _start_transport(self, object_name: str):
        cfg = self.scenario.bimanual
        self.state = start_bimanual_hold(self.world, self.state, object_name, cfg.f_initial)
        self.state.hold.rate = cfg.squeeze_rate
        obj = self.state.objects[object_name]
        self.transport = TransportPipeline(
            phase="lifting",
            object_name=object_name,
            lift_target_z=obj.pose.translation[2] + 0.06,
        )

    def _release_hold(self):
        if self.state.hold is None:
            return
        obj = self.state.objects.get(self.state.hold.object_name)
        if obj is not None and obj.grasped:
            obj.grasped = False
            obj.grasp_kind = ""
        self.state.hold = None
        self.transport = TransportPipeline()

    def _transport_step(self, commands: Commands):
        tp = self.transport
        if tp.phase == "idle" or self.state.hold is None or self.state.hold.slipped:
            return
        cfg = self.scenario.bimanual
        obj = self.state.objects[tp.object_name]
        if tp.phase == "lifting":
            if obj.pose.translation[2] >= tp.lift_target_z:
                tp.phase = "estimating"
                tp.samples = []
            else:
                for side in ("left", "right"):
                    self.add_arm_velocity(commands, side, np.array([0.0, 0.0, 0.04]))
            return
        if tp.phase == "estimating":
            forces = self.state.sensed_forces
            tp.samples.append((forces.left[2], forces.right[2]))
            if len(tp.samples) >= cfg.mass_samples:
                estimate = bm.estimate_mass(tp.samples)
                tp.mass_estimate = estimate.m_bar
                tp.f_bar = bm.grasp_force(estimate.m_bar, cfg.mu_s, cfg.k_margin)
                self.state.hold.setpoint = tp.f_bar
                tp.phase = "transport"
            return
        # transport: cooperative admittance on both arms
        p_l = self.world.ee_position(self.state, "left")
        p_r = self.world.ee_position(self.state, "right")
        r_b = bm.object_frame(p_l, p_r)
        x_dot = tp.x_dot_cmd
        if self.vtr_enabled:
            weights = self._worst_arm_weights()
            x_star = weights.w * x_dot
            nu = (1.0 - weights.w) * x_dot
            commands.base_linear += nu
            x_dot = x_star
            self.last_weights = weights
        # regulate against the slewing squeeze command, not its endpoint:
        # jumping the target while the actuator still applies the lifting
        # force would pulse the arms apart through the force-error term
        desired = bm.desired_forces(self.state.sensed_forces, self.state.hold.squeeze)
        params = bm.CoopParams(
            d=np.full(3, cfg.coop_d),
            k=np.full(3, cfg.coop_k),
            r_b=r_b,
            p_offset_t0=self.state.hold.offset_b,
        )
        x_dot_l, x_dot_r = bm.coop_step(
            x_dot, self.state.sensed_forces, desired, p_l, p_r, params
        )
        # tight damping: the grasp posture is well conditioned, and uneven
        # DLS attenuation between the arms would shear the hold
        self.add_arm_velocity(commands, "left", x_dot_l, damping=0.01)
        self.add_arm_velocity(commands, "right", x_dot_r, damping=0.01)

    def _worst_arm_weights(self) -> VtrWeights:
        betas = []
        for side, model in self.world.arms.items():
            jac = point_jacobian(
                model, self.state.chains[side], model.tip_link, self.world.ee_points[side]
            )
            betas.append(vtr(jac))
        beta = np.minimum.reduce(betas)
        return vtr_weight(beta, self.thresholds)

    # -- virtual-force pipeline

    def _tpo_step(self, commands: Commands):
        forces_by_chain: dict[str, list[VirtualForce]] = {}
        weight_by_chain: dict[str, np.ndarray | None] = {}
        display_forces: dict[str, np.ndarray | None] = {"left": None, "right": None}

        teleop_engaged = any(ch.active for ch in self.channels.values())
        if teleop_engaged:
            # the joint admittance model runs on every arm while teleop is
            # engaged: unforced chains elastically return toward q_eq
            for chain in self.world.arms:
                forces_by_chain.setdefault(chain, [])

        for side, ch in self.channels.items():
            f = ch.current_force()
            ch.last_force = f
            if not ch.active:
                continue
            display_forces[side] = f
            if not np.any(f):
                continue
            cp = ch.control_point
            if cp.endswith("_ee"):
                chain = cp[:-3]
                model = self.world.arms[chain]
                vf = VirtualForce(
                    f, ControlPoint(chain, model.tip_link, self.world.ee_points[chain]),
                    source=side,
                )
                forces_by_chain.setdefault(chain, []).append(vf)
                if self.mirroring and chain == "right" and "left" in self.world.arms:
                    mirrored = mirror_force(f, np.array([0.0, 1.0, 0.0]))
                    lmodel = self.world.arms["left"]
                    forces_by_chain.setdefault("left", []).append(
                        VirtualForce(
                            mirrored,
                            ControlPoint("left", lmodel.tip_link, self.world.ee_points["left"]),
                            source="mirror",
                        )
                    )
            elif cp == "base":
                v = cartesian_ref(f, self.cart_gain)
                yaw = self.base_yaw()
                commands.base_linear[:2] += rot_z(yaw)[:2, :2] @ v[:2]
                commands.base_linear[2] += v[2]
            elif cp == "squat":
                v = cartesian_ref(f, self.cart_gain)
                commands.base_linear[2] += v[2]
            elif cp == "yaw":
                commands.base_yaw_rate += self.cart_gain.k_cart[1] * f[1]

        # manipulability-aware splitting per chain carrying forces
        for chain, forces in forces_by_chain.items():
            model = self.world.arms[chain]
            weight = None
            if self.vtr_enabled and forces:
                jac = point_jacobian(
                    model, self.state.chains[chain], model.tip_link, self.world.ee_points[chain]
                )
                weights = vtr_weight(vtr(jac), self.thresholds)
                self.last_weights = weights
                weight = weights.matrix
                total_f = np.sum([vf.vector for vf in forces], axis=0)
                nu = self.base_gain.k_nu * ((1.0 - weights.w) * total_f)
                yaw = self.base_yaw()
                commands.base_linear[:2] += rot_z(yaw)[:2, :2] @ nu[:2]
                commands.base_linear[2] += nu[2]
            weight_by_chain[chain] = weight

        for chain, forces in forces_by_chain.items():
            model = self.world.arms[chain]
            q_ref, q_dot_ref = self.q_refs[chain]
            q_ref, q_dot_ref = postural_step(
                model,
                self.state.chains[chain],
                forces,
                self.admittance[chain],
                q_ref,
                q_dot_ref,
                blocking=self.blocking,
                weight=weight_by_chain.get(chain),
            )
            self.q_refs[chain] = (q_ref, q_dot_ref)
            commands.q_dot[chain] = (q_ref - self.state.chains[chain].q) / self.dt

        # chains not under admittance this tick track the actual joints, so
        # re-engaging teleop later starts from the current posture
        for chain in self.world.arms:
            if chain not in forces_by_chain:
                self.q_refs[chain] = (
                    self.state.chains[chain].q.copy(),
                    np.zeros(self.world.arms[chain].n),
                )

        return display_forces

    # -- perception

    def _perception_step(self):
        scene = self.scenario.scene
        t = self.state.clock
        self.spot = laser_raycast(scene, self.state.emitter_pose, timestamp=t)
        if self.spot is None:
            return
        noisy = self.spot.position
        sigma = self.scenario.perception.spot_noise_sigma
        if sigma > 0:
            noisy = noisy + self.rng.normal(0.0, sigma, size=3)
        self.smoothed_spot = smooth_spot(self.spot_filter, noisy, t)

        keyboard = self.scenario.keyboard
        key = keyboard_hit(self.spot, keyboard, scene) if keyboard else None
        on_keyboard = False
        if keyboard is not None and self.spot.surface == keyboard.surface:
            surf = next(s for s in scene.surfaces if s.label == keyboard.surface)
            on_keyboard = keyboard.contains_uv(*surf.local_uv(self.spot.position))

        if on_keyboard:
            # keyboard region: never treated as an environment goal
            if self.env_dwell is not None:
                self.env_dwell.reset()
            pressed = self.key_dwell.update(self.smoothed_spot, t)
            if pressed is not None and key is not None:
                self.active_key = key
                self._apply_key_command(key)
            if key is None:
                self.active_key = None
        else:
            self.key_dwell.reset()
            if self.active_key is not None:
                self.active_key = None
                self.scripted_base = Commands()
            if self.track_live:
                self.bb["goal"] = self.smoothed_spot
            else:
                goal = self.env_dwell.update(self.smoothed_spot, t)
                if goal is not None:
                    self.bb["goal"] = goal
                    self.goal_events.append(
                        {"t": t, "position": [float(v) for v in goal]}
                    )
        self.bb["spot"] = self.smoothed_spot

    def _apply_key_command(self, key: str):
        from .perception import KEY_ANGULAR_SPEED, KEY_LINEAR_SPEED

        lin = np.zeros(3)
        yaw = 0.0
        axis_map = {"+x": 0, "-x": 0, "+y": 1, "-y": 1, "+z": 2, "-z": 2}
        if key in axis_map:
            lin[axis_map[key]] = KEY_LINEAR_SPEED * (1.0 if key[0] == "+" else -1.0)
            self.scripted_base = Commands(base_linear=lin)
        elif key in ("yaw+", "yaw-"):
            yaw = KEY_ANGULAR_SPEED * (1.0 if key.endswith("+") else -1.0)
            self.scripted_base = Commands(base_yaw_rate=yaw)
        elif key in ("open", "close"):
            self.scripted_base = Commands(gripper=key)

    # -- main loop

    def drain_trace(self):
        while (
            self.trace_index < len(self.trace)
            and self.trace[self.trace_index].t <= self.state.clock + 1e-12
        ):
            ev = self.trace[self.trace_index]
            self.apply_event(ev.kind, ev.data)
            self.trace_index += 1

    def drain_external(self):
        events, self.external_events = self.external_events, []
        for ev in events:
            data = {k: v for k, v in ev.items() if k != "kind"}
            self.apply_event(ev["kind"], data)

    def submit_event(self, event: dict):
        """Queue a live operator event (wire command) for the next tick."""
        self.external_events.append(event)

    def tick_once(self):
        self.feedback_events = []
        self.drain_trace()
        self.drain_external()
        self._perception_step()

        commands = Commands(
            base_linear=self.scripted_base.base_linear.copy(),
            base_yaw_rate=self.scripted_base.base_yaw_rate,
            gripper=self.scripted_base.gripper,
        )
        self.scripted_base.gripper = None

        if self.tree is not None:
            status = tick(self.tree, self.bb, self.env)
            self.bt_status = status.value
            tasks = {**self.ambient_tasks, **self.active_tasks}
            for task in tasks.values():
                task.step(commands)
        display_forces = self._tpo_step(commands)
        self._transport_step(commands)

        self.state = step(self.world, self.state, self.dt, commands)
        self.state.sensed_forces = sense_forces(
            self.world, self.state, self.scenario.perception.force_noise_sigma, self.rng
        )
        self._update_goals()
        left_contact = float(np.linalg.norm(self.state.sensed_forces.left))
        self.last_feedback = map_feedback(
            display_forces,
            gripper_force=self.state.gripper.effort,
            left_contact_force=left_contact,
            events=self.feedback_events,
        )
        self._log_row(display_forces)

    def _update_goals(self):
        goals = self.scenario.goals
        if self.goals_reached >= len(goals):
            return
        target = np.asarray(goals[self.goals_reached], dtype=float)
        p_ee = self.world.ee_position(self.state, "right")
        if np.linalg.norm(p_ee - target) <= self.scenario.goal_tolerance:
            self.goals_reached += 1
            self.goal_times.append(self.state.clock)

    def _log_row(self, display_forces):
        pose = self.world.base_pose(self.state)
        row = {
            "t": self.state.clock,
            "base_x": pose[0], "base_y": pose[1], "base_yaw": pose[2], "pelvis_z": pose[3],
        }
        for name in sorted(self.world.arms):
            for i, q in enumerate(self.state.chains[name].q):
                row[f"{name}_q{i}"] = float(q)
        w = self.last_weights
        for i, axis in enumerate("xyz"):
            row[f"beta_{axis}"] = float(w.beta[i]) if np.isfinite(w.beta[i]) else float("inf")
            row[f"w_{axis}"] = float(w.w[i])
        for side in ("left", "right"):
            vec = display_forces.get(side)
            for i, axis in enumerate("xyz"):
                row[f"fcp_{side}_{axis}"] = float(vec[i]) if vec is not None else 0.0
        forces = self.state.sensed_forces
        for i, axis in enumerate("xyz"):
            row[f"fs_left_{axis}"] = float(forces.left[i])
            row[f"fs_right_{axis}"] = float(forces.right[i])
        row["f_bar"] = float(self.transport.f_bar)
        row["squeeze"] = float(self.state.hold.squeeze) if self.state.hold else 0.0
        spot = self.smoothed_spot
        for i, axis in enumerate("xyz"):
            row[f"spot_{axis}"] = float(spot[i]) if spot is not None else float("nan")
        goal = self.bb.get("goal")
        for i, axis in enumerate("xyz"):
            row[f"goal_{axis}"] = float(goal[i]) if goal is not None else float("nan")
        running = sorted(self.active_tasks)
        row["active_action"] = "+".join(running)
        row["bt_status"] = self.bt_status
        row["cp_left"] = self.channels["left"].control_point
        row["cp_right"] = self.channels["right"].control_point
        row["cp_switches"] = self.cp_switches
        row["slip_count"] = self.state.slip_count
        row["goals_reached"] = self.goals_reached
        self.log_rows.append(row)

    def run(self, max_time: float, stop_when=None) -> dict:
        steps = int(round(max_time / self.dt))
        for _ in range(steps):
            self.tick_once()
            if stop_when is not None and stop_when(self):
                break
        return self.report()

    def report(self) -> dict:
        goals = self.scenario.goals
        completed = self.goals_reached >= len(goals) if goals else True
        return {
            "completed": bool(completed),
            "sim_time": round(self.state.clock, 9),
            "steps": len(self.log_rows),
            "goals_reached": self.goals_reached,
            "goal_times": [round(t, 9) for t in self.goal_times],
            "slip_count": self.state.slip_count,
            "cp_switches": self.cp_switches,
            "goal_events": self.goal_events,
            "mass_estimate": self.transport.mass_estimate,
            "f_bar": self.transport.f_bar,
        }

    # -- logging to disk

    def write_logs(self, out_dir) -> dict:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        csv_path = out / "log.csv"
        jsonl_path = out / "log.jsonl"
        if self.log_rows:
            columns = list(self.log_rows[0])
            with open(csv_path, "w") as fh:
                fh.write(",".join(columns) + "\n")
                for row in self.log_rows:
                    fh.write(",".join(_cell(row[c]) for c in columns) + "\n")
            with open(jsonl_path, "w") as fh:
                for row in self.log_rows:
                    fh.write(json.dumps(row, sort_keys=True, default=_json_default) + "\n")
        report_path = out / "report.json"
        with open(report_path, "w") as fh:
            json.dump(self.report(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        return {"csv": str(csv_path), "jsonl": str(jsonl_path), "report": str(report_path)}


def _cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _json_default(value):
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"not JSON serializable: {type(value)}")


def run_mission(
    scenario: Scenario,
    tree_text: str | None,
    trace: list[TraceEvent],
    out_dir,
    seed: int | None = None,
    max_time: float = 60.0,
    stop_when=None,
    vtr_enabled: bool | None = None,
) -> dict:
    runner = MissionRunner(
        scenario, tree_text=tree_text, trace=trace, seed=seed, vtr_enabled=vtr_enabled
    )
    report = runner.run(max_time, stop_when=stop_when)
    if out_dir is not None:
        paths = runner.write_logs(out_dir)
        report["logs"] = paths
    return report
