"""Serial-chain kinematics for an arm riding a planar mobile base.

A chain is an ordered list of 1-DOF joints (revolute or prismatic). Joint i
moves the link named ``joints[i].link``; transforms are expressed in the
chain's base frame. The mobile base itself can be modeled as a chain of
virtual joints (x, y translation + yaw + a prismatic pelvis "squat"), with
arm chains mounted above, so the same forward kinematics / Jacobian code
covers both.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import RigidTransform, axis_angle

DEFAULT_DLS_DAMPING = 0.05


class KinematicsError(ValueError):
    pass


class SingularityError(KinematicsError):
    """Raised when an undamped solve meets a singular Jacobian."""


@dataclass
class Joint:
    name: str
    kind: str  # "revolute" | "prismatic"
    axis: np.ndarray  # unit 3-vector in the joint frame
    origin: RigidTransform  # fixed transform from the parent link frame
    limits: tuple[float, float] = (-np.pi, np.pi)
    vel_limit: float = 2.0
    link: str = ""  # name of the link this joint moves; defaults to joint name

    def __post_init__(self):
        self.axis = np.asarray(self.axis, dtype=float).reshape(3)
        if self.kind not in ("revolute", "prismatic"):
            raise KinematicsError(f"unknown joint kind {self.kind!r}")
        if abs(np.linalg.norm(self.axis) - 1.0) > 1e-9:
            raise KinematicsError(f"joint {self.name!r}: axis must be unit-norm")
        if not self.limits[0] < self.limits[1]:
            raise KinematicsError(f"joint {self.name!r}: limits min must be < max")
        if not self.link:
            self.link = self.name

    def motion(self, q: float) -> RigidTransform:
        if self.kind == "revolute":
            return RigidTransform(axis_angle(self.axis, q), np.zeros(3))
        return RigidTransform(np.eye(3), self.axis * q)


@dataclass
class ChainModel:
    name: str
    joints: list[Joint]
    base_mount: RigidTransform = field(default_factory=RigidTransform.identity)

    def __post_init__(self):
        if len(self.joints) < 1:
            raise KinematicsError("chain needs at least one joint")
        seen = set()
        for j in self.joints:
            if j.link in seen:
                raise KinematicsError(f"duplicate link name {j.link!r}")
            seen.add(j.link)

    @property
    def n(self) -> int:
        return len(self.joints)

    @property
    def link_names(self) -> list[str]:
        return [j.link for j in self.joints]

    @property
    def tip_link(self) -> str:
        return self.joints[-1].link

    def link_index(self, link: str) -> int:
        for i, j in enumerate(self.joints):
            if j.link == link:
                return i
        raise KinematicsError(f"chain {self.name!r} has no link {link!r}")

    def clamp(self, q: np.ndarray) -> np.ndarray:
        lo = np.array([j.limits[0] for j in self.joints])
        hi = np.array([j.limits[1] for j in self.joints])
        return np.clip(q, lo, hi)

    def clamp_velocity(self, q_dot: np.ndarray) -> np.ndarray:
        vmax = np.array([j.vel_limit for j in self.joints])
        return np.clip(q_dot, -vmax, vmax)

    def random_state(self, rng: np.random.Generator) -> "JointState":
        q = np.array([rng.uniform(j.limits[0], j.limits[1]) for j in self.joints])
        return JointState(q=q)


@dataclass
class JointState:
    q: np.ndarray
    q_dot: np.ndarray | None = None

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float).reshape(-1)
        if self.q_dot is None:
            self.q_dot = np.zeros_like(self.q)
        else:
            self.q_dot = np.asarray(self.q_dot, dtype=float).reshape(-1)
            if self.q_dot.shape != self.q.shape:
                raise KinematicsError("q and q_dot dimensions differ")

    def copy(self) -> "JointState":
        return JointState(self.q.copy(), self.q_dot.copy())


@dataclass
class PointJacobian:
    """Linear Jacobian (3xN) of a point attached to a chain link.

    Columns belonging to joints distal to ``link`` are exactly zero.
    """

    matrix: np.ndarray
    link: str
    local_point: np.ndarray

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=float)
        self.local_point = np.asarray(self.local_point, dtype=float).reshape(3)


def _check_state(model: ChainModel, state: JointState):
    if state.q.shape[0] != model.n:
        raise KinematicsError(
            f"state has {state.q.shape[0]} joints, chain {model.name!r} has {model.n}"
        )


def forward_kinematics(model: ChainModel, state: JointState) -> dict[str, RigidTransform]:
    """Transforms of every link frame, expressed in the chain base frame."""
    _check_state(model, state)
    out: dict[str, RigidTransform] = {}
    t = model.base_mount
    for joint, q in zip(model.joints, state.q):
        t = t @ joint.origin @ joint.motion(q)
        out[joint.link] = t
    return out


def link_point(model: ChainModel, state: JointState, link: str, local_point) -> np.ndarray:
    return forward_kinematics(model, state)[link].apply(local_point)


def point_jacobian(
    model: ChainModel, state: JointState, link: str, local_point
) -> PointJacobian:
    """Linear Jacobian of a point rigidly attached to ``link``.

    Revolute columns are w x (p - o); prismatic columns are the joint axis in
    the base frame. Joints past the attachment link contribute zero columns.
    """
    _check_state(model, state)
    idx = model.link_index(link)
    transforms = forward_kinematics(model, state)
    p = transforms[link].apply(local_point)

    jac = np.zeros((3, model.n))
    t_parent = model.base_mount
    for i, (joint, q) in enumerate(zip(model.joints, state.q)):
        if i > idx:
            break
        t_joint = t_parent @ joint.origin  # frame the joint motion acts in
        axis_w = t_joint.rotate(joint.axis)
        if joint.kind == "revolute":
            jac[:, i] = np.cross(axis_w, p - t_joint.translation)
        else:
            jac[:, i] = axis_w
        t_parent = t_joint @ joint.motion(q)
    return PointJacobian(jac, link, np.asarray(local_point, dtype=float))


def dls_ik_step(
    model: ChainModel,
    state: JointState,
    task: dict,
    damping: float = DEFAULT_DLS_DAMPING,
) -> np.ndarray:
    """One damped-least-squares differential IK step.

    task = {"link": id, "local_point": 3-vector, "desired_velocity": 3-vector}.
    Returns joint velocities, clamped per-joint to the chain velocity limits.
    """
    if damping < 0:
        raise KinematicsError("damping must be >= 0")
    jac = point_jacobian(model, state, task["link"], task.get("local_point", np.zeros(3)))
    x_dot = np.asarray(task["desired_velocity"], dtype=float).reshape(3)
    j = jac.matrix
    jjt = j @ j.T + damping**2 * np.eye(3)
    if damping == 0.0:
        # No regularization: a rank-deficient JJ^T has no inverse.
        if np.linalg.matrix_rank(j @ j.T, tol=1e-12) < 3:
            raise SingularityError(
                f"singular Jacobian for link {task['link']!r} with zero damping"
            )
    q_dot = j.T @ np.linalg.solve(jjt, x_dot)
    return model.clamp_velocity(q_dot)


# --- stock chain builders -------------------------------------------------


def planar_chain(link_lengths, name: str = "planar", vel_limit: float = 5.0) -> ChainModel:
    """Revolute-z chain in the xy plane; link i extends along +x."""
    joints = []
    for i, length in enumerate(link_lengths):
        offset = np.zeros(3) if i == 0 else np.array([link_lengths[i - 1], 0.0, 0.0])
        joints.append(
            Joint(
                name=f"j{i + 1}",
                kind="revolute",
                axis=np.array([0.0, 0.0, 1.0]),
                origin=RigidTransform.from_translation(offset),
                limits=(-2.0 * np.pi, 2.0 * np.pi),
                vel_limit=vel_limit,
                link=f"link{i + 1}",
            )
        )
    model = ChainModel(name=name, joints=joints)
    model.tip_offset = np.array([link_lengths[-1], 0.0, 0.0])  # convenience for tests
    return model


def mobile_base_chain(
    name: str = "base",
    pelvis_height: float = 0.6,
    squat_limits: tuple[float, float] = (-0.25, 0.35),
    planar_limit: float = 50.0,
    squat_vel: float = 0.25,
    planar_vel: float = 1.0,
    yaw_vel: float = 1.5,
) -> ChainModel:
    """Planar mobile base as virtual joints: x, y translation, yaw, squat.

    The tip link ("pelvis") is the mount frame for arm chains; the squat
    joint raises/lowers it along z around the nominal pelvis height.
    """
    joints = [
        Joint("base_x", "prismatic", np.array([1.0, 0.0, 0.0]),
              RigidTransform.identity(), (-planar_limit, planar_limit), planar_vel,
              link="base_x"),
        Joint("base_y", "prismatic", np.array([0.0, 1.0, 0.0]),
              RigidTransform.identity(), (-planar_limit, planar_limit), planar_vel,
              link="base_y"),
        Joint("base_yaw", "revolute", np.array([0.0, 0.0, 1.0]),
              RigidTransform.identity(), (-1e6, 1e6), yaw_vel, link="base_link"),
        Joint("squat", "prismatic", np.array([0.0, 0.0, 1.0]),
              RigidTransform.from_translation([0.0, 0.0, pelvis_height]),
              squat_limits, squat_vel, link="pelvis"),
    ]
    return ChainModel(name=name, joints=joints)


def random_chain(rng: np.random.Generator, max_joints: int = 7, name: str = "rand") -> ChainModel:
    """Random serial chain for property tests (axes unit, mixed joint kinds)."""
    n = int(rng.integers(1, max_joints + 1))
    joints = []
    for i in range(n):
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        kind = "revolute" if rng.random() < 0.7 else "prismatic"
        origin = RigidTransform(
            axis_angle(_random_unit(rng), rng.uniform(-np.pi, np.pi)),
            rng.uniform(-0.5, 0.5, size=3),
        )
        joints.append(
            Joint(
                name=f"j{i}",
                kind=kind,
                axis=axis,
                origin=origin,
                limits=(-3.0, 3.0),
                vel_limit=10.0,
                link=f"link{i}",
            )
        )
    return ChainModel(name=name, joints=joints)


def _random_unit(rng: np.random.Generator) -> np.ndarray:
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)
