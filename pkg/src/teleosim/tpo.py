"""Virtual-force command pipeline.

The operator's tracked wrist displacement (relative to a resettable
reference) stretches a virtual spring, producing a 3D force on a chosen
control point of the robot body. Forces generate either joint-space
("postural") motion through a mass-spring-damper admittance law, or
Cartesian velocity references for base/pelvis style tasks.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import RigidTransform
from .kinematics import ChainModel, JointState, point_jacobian

DEFAULT_K_CAM = 1.8  # N/m, virtual spring stiffness
DEFAULT_DEADZONE = 0.03  # m, spherical buffer around the reference
DEFAULT_CUTOFF_HZ = 5.0
DEFAULT_DT = 0.01  # s, 100 Hz input rate


class ChainMismatchError(ValueError):
    pass


@dataclass
class LowPass:
    """First-order low-pass with exact pole placement.

    The first sample initializes the state, so a constant input passes
    through unchanged from the very first call.
    """

    cutoff_hz: float = DEFAULT_CUTOFF_HZ
    state: np.ndarray | None = None

    def step(self, x: np.ndarray, dt: float) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.state is None:
            self.state = x.copy()
            return self.state.copy()
        tau = 1.0 / (2.0 * np.pi * self.cutoff_hz)
        alpha = 1.0 - np.exp(-dt / tau)
        self.state = self.state + alpha * (x - self.state)
        return self.state.copy()

    def reset(self):
        self.state = None


@dataclass
class ControlPoint:
    chain: str
    link: str
    local_point: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.local_point = np.asarray(self.local_point, dtype=float).reshape(3)


@dataclass
class VirtualForce:
    vector: np.ndarray
    control_point: ControlPoint
    source: str = ""

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=float).reshape(3)
        if not np.all(np.isfinite(self.vector)):
            raise ValueError("virtual force components must be finite")


@dataclass
class TrackerInput:
    """One tracked input channel (an operator wrist)."""

    pose_in_origin: RigidTransform = field(default_factory=RigidTransform.identity)
    reference_pose: RigidTransform = field(default_factory=RigidTransform.identity)
    k_cam: float = DEFAULT_K_CAM
    deadzone_radius: float = DEFAULT_DEADZONE
    filter: LowPass = field(default_factory=LowPass)
    dt: float = DEFAULT_DT

    def __post_init__(self):
        if self.k_cam <= 0:
            raise ValueError("k_cam must be > 0")
        if self.deadzone_radius < 0:
            raise ValueError("deadzone_radius must be >= 0")


def displacement(tracker: TrackerInput) -> np.ndarray:
    """Wrist translation relative to the reference frame."""
    rel = tracker.reference_pose.inverse() @ tracker.pose_in_origin
    return rel.translation


def virtual_force(tracker: TrackerInput) -> np.ndarray:
    """Spring force from the current displacement.

    The spherical deadzone shrinks the displacement radially (norm minus
    radius) instead of hard-cutting it, so the force is continuous at the
    buffer boundary. The result is low-pass filtered, then scaled by the
    spring stiffness.
    """
    r = displacement(tracker)
    norm = np.linalg.norm(r)
    if norm <= tracker.deadzone_radius:
        shrunk = np.zeros(3)
    else:
        shrunk = r * ((norm - tracker.deadzone_radius) / norm)
    smoothed = tracker.filter.step(shrunk, tracker.dt)
    return tracker.k_cam * smoothed


def reset_reference(tracker: TrackerInput) -> TrackerInput:
    """Re-zero the input: the next virtual_force at this pose is zero."""
    return replace(
        tracker,
        reference_pose=tracker.pose_in_origin.copy(),
        filter=LowPass(cutoff_hz=tracker.filter.cutoff_hz),
    )


@dataclass
class AdmittanceParams:
    """Joint mass-spring-damper model driven by virtual-force torques."""

    m: np.ndarray  # diagonal entries, strictly positive
    d: np.ndarray
    k: np.ndarray
    q_eq: np.ndarray
    dt: float = DEFAULT_DT

    def __post_init__(self):
        self.m = np.asarray(self.m, dtype=float).reshape(-1)
        self.d = np.asarray(self.d, dtype=float).reshape(-1)
        self.k = np.asarray(self.k, dtype=float).reshape(-1)
        self.q_eq = np.asarray(self.q_eq, dtype=float).reshape(-1)
        if np.any(self.m <= 0):
            raise ValueError("admittance mass diagonal must be strictly positive")
        if np.any(self.d < 0) or np.any(self.k < 0):
            raise ValueError("damping and stiffness must be non-negative")
        if self.dt <= 0:
            raise ValueError("dt must be > 0")

    @staticmethod
    def uniform(n, m=1.0, d=10.0, k=0.0, q_eq=None, dt=DEFAULT_DT):
        q_eq = np.zeros(n) if q_eq is None else q_eq
        return AdmittanceParams(
            m=np.full(n, float(m)), d=np.full(n, float(d)), k=np.full(n, float(k)),
            q_eq=q_eq, dt=dt,
        )


def chain_torques(
    model: ChainModel,
    state: JointState,
    forces: list[VirtualForce],
    blocking: bool = False,
    weight: np.ndarray | None = None,
) -> np.ndarray:
    """Sum of J^T f over the control points of one chain.

    With the blocking feature on, a force applied distally ("B") stops
    influencing joints at or before the link of any other force applied
    closer to the root ("A"): those joints stay exclusive to A. An optional
    3x3 weight scales every force before projection (manipulability-aware
    splitting hooks in here).
    """
    tau = np.zeros(model.n)
    if not forces:
        return tau
    for f in forces:
        if f.control_point.chain != model.name:
            raise ChainMismatchError(
                f"force on chain {f.control_point.chain!r}, expected {model.name!r}"
            )
    indices = [model.link_index(f.control_point.link) for f in forces]
    for f, idx in zip(forces, indices):
        jac = point_jacobian(model, state, f.control_point.link, f.control_point.local_point)
        vec = f.vector if weight is None else weight @ f.vector
        contribution = jac.matrix.T @ vec
        if blocking:
            ancestors = [i for i in indices if i < idx]
            if ancestors:
                contribution[: max(ancestors) + 1] = 0.0
        tau += contribution
    return tau


def postural_step(
    model: ChainModel,
    state: JointState,
    forces: list[VirtualForce],
    params: AdmittanceParams,
    prev_q_ref: np.ndarray,
    prev_q_dot_ref: np.ndarray,
    blocking: bool = False,
    weight: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """One admittance integration step; returns (q_ref, q_dot_ref).

    Semi-implicit Euler, velocity first, matching the 100 Hz control loop.
    The position reference is clamped to the joint limits.
    """
    tau = chain_torques(model, state, forces, blocking=blocking, weight=weight)
    q_ddot = (params.k * (params.q_eq - state.q) - params.d * prev_q_dot_ref + tau) / params.m
    q_dot_ref = prev_q_dot_ref + q_ddot * params.dt
    q_ref = model.clamp(prev_q_ref + q_dot_ref * params.dt)
    return q_ref, q_dot_ref


@dataclass
class CartesianGain:
    k_cart: np.ndarray  # diagonal entries, m/s per N

    def __post_init__(self):
        self.k_cart = np.asarray(self.k_cart, dtype=float).reshape(3)
        if np.any(self.k_cart < 0):
            raise ValueError("Cartesian gain diagonal must be non-negative")


def cartesian_ref(force: np.ndarray, gain: CartesianGain) -> np.ndarray:
    """Velocity reference from a virtual force; zeroed axes stay zero."""
    return gain.k_cart * np.asarray(force, dtype=float).reshape(3)


def mirror_force(force: np.ndarray, plane_normal: np.ndarray) -> np.ndarray:
    """Reflect a force across a plane through the origin (unit normal)."""
    n = np.asarray(plane_normal, dtype=float).reshape(3)
    if abs(np.linalg.norm(n) - 1.0) > 1e-9:
        raise ValueError("plane normal must be unit-norm")
    f = np.asarray(force, dtype=float).reshape(3)
    return f - 2.0 * np.dot(f, n) * n
