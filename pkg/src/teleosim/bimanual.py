"""Bimanual grasp pipeline: mass estimation, grasp-force sizing, and the
cooperative admittance law that lets the operator drive a held object with a
single velocity command.

Conventions. The object frame ``b`` has its y-axis along the line joining
the two contact points (from the right end-effector toward the left); the
x-axis is the projection of the world x-axis orthogonal to y (world z as a
tie-break), and z completes the right-handed triad. Reported contact forces
follow the sign layout of the regulation targets: each arm's vertical
component is its share of the load (so the two z readings sum to the
object's weight), and the lateral components are +squeeze on the left arm,
-squeeze on the right.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

GRAVITY = 9.81  # m/s^2

DEFAULT_MU_S = 0.6
DEFAULT_K_MARGIN = 1.4
DEFAULT_F_INITIAL = 45.0  # N, lifting-phase squeeze
DEFAULT_COOP_D = 2500.0
DEFAULT_COOP_K = 200.0
DEFAULT_MASS_SAMPLES = 100  # 1 s window at 100 Hz


@dataclass
class MassEstimate:
    m_bar: float
    samples_used: int
    g: float = GRAVITY

    def __post_init__(self):
        if self.samples_used < 1:
            raise ValueError("mass estimate needs at least one sample")
        if self.m_bar < 0:
            raise ValueError("estimated mass must be >= 0")


@dataclass
class GraspSpec:
    mu_s: float = DEFAULT_MU_S
    k_margin: float = DEFAULT_K_MARGIN
    f_bar: float = 0.0
    f_initial: float = DEFAULT_F_INITIAL

    def __post_init__(self):
        if self.mu_s <= 0:
            raise ValueError("static friction coefficient must be > 0")
        if self.k_margin <= 1:
            raise ValueError("safety margin gain must be > 1")
        if self.f_bar < 0:
            raise ValueError("required grasping force must be >= 0")


@dataclass
class EEForce:
    """Per end-effector contact force readings, expressed in frame b."""

    left: np.ndarray = field(default_factory=lambda: np.zeros(3))
    right: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.left = np.asarray(self.left, dtype=float).reshape(3)
        self.right = np.asarray(self.right, dtype=float).reshape(3)
        if not (np.all(np.isfinite(self.left)) and np.all(np.isfinite(self.right))):
            raise ValueError("sensed forces must be finite")


@dataclass
class CoopParams:
    d: np.ndarray  # damping diagonal, N s/m
    k: np.ndarray  # stiffness diagonal, N/m
    r_b: np.ndarray  # rotation world <- object frame b
    p_offset_t0: np.ndarray  # right EE relative to left at grasp time, in frame b

    def __post_init__(self):
        self.d = np.asarray(self.d, dtype=float).reshape(3)
        self.k = np.asarray(self.k, dtype=float).reshape(3)
        self.r_b = np.asarray(self.r_b, dtype=float).reshape(3, 3)
        self.p_offset_t0 = np.asarray(self.p_offset_t0, dtype=float).reshape(3)
        if np.any(self.d <= 0):
            raise ValueError("cooperative damping diagonal must be strictly positive")
        if not np.allclose(self.r_b.T @ self.r_b, np.eye(3), atol=1e-9):
            raise ValueError("R_b must be orthonormal")


def estimate_mass(z_force_samples, g: float = GRAVITY) -> MassEstimate:
    """Average (f_zl + f_zr) / g over the sample window."""
    samples = list(z_force_samples)
    if not samples:
        raise ValueError("mass estimation needs at least one force sample")
    total = sum((f_zl + f_zr) / g for f_zl, f_zr in samples)
    return MassEstimate(m_bar=total / len(samples), samples_used=len(samples), g=g)


def grasp_force(m_bar: float, mu_s: float, k_margin: float, g: float = GRAVITY) -> float:
    """Per-arm squeeze needed to hold m_bar against gravity, with margin k."""
    if mu_s <= 0:
        raise ValueError("static friction coefficient must be > 0")
    return k_margin * (m_bar * g) / (2.0 * mu_s)


def desired_forces(sensed: EEForce, f_bar: float) -> tuple[np.ndarray, np.ndarray]:
    """Regulation targets: squeeze +/-f_bar on y, x/z pass the sensed values."""
    f_dl = np.array([sensed.left[0], f_bar, sensed.left[2]])
    f_dr = np.array([sensed.right[0], -f_bar, sensed.right[2]])
    return f_dl, f_dr


def object_frame(p_l: np.ndarray, p_r: np.ndarray) -> np.ndarray:
    """Rotation world <- frame b from the current contact positions."""
    p_l = np.asarray(p_l, dtype=float).reshape(3)
    p_r = np.asarray(p_r, dtype=float).reshape(3)
    y = p_l - p_r
    norm = np.linalg.norm(y)
    if norm < 1e-12:
        raise ValueError("contact points coincide; object frame undefined")
    y = y / norm
    x = np.array([1.0, 0.0, 0.0]) - y[0] * y
    if np.linalg.norm(x) < 1e-9:  # y parallel to world x: fall back to world z
        x = np.array([0.0, 0.0, 1.0]) - y[2] * y
    x /= np.linalg.norm(x)
    z = np.cross(x, y)
    return np.column_stack([x, y, z])


def coop_step(
    x_dot_cmd: np.ndarray,
    sensed: EEForce,
    desired: tuple[np.ndarray, np.ndarray],
    p_l: np.ndarray,
    p_r: np.ndarray,
    params: CoopParams,
) -> tuple[np.ndarray, np.ndarray]:
    """Cartesian velocity commands (left, right) for the two end-effectors.

    The left arm leads: its position target is wherever it currently is, so
    only the force error steers it. The right arm follows the left at the
    grasp-time offset (carried in frame b, so the hold rotates with the
    object).
    """
    x_dot_cmd = np.asarray(x_dot_cmd, dtype=float).reshape(3)
    p_l = np.asarray(p_l, dtype=float).reshape(3)
    p_r = np.asarray(p_r, dtype=float).reshape(3)
    f_dl, f_dr = desired

    p_dl = p_l
    p_dr = p_l + params.r_b @ params.p_offset_t0

    inv_d = 1.0 / params.d
    x_dot_l = x_dot_cmd + inv_d * (
        params.r_b @ (sensed.left - f_dl) + params.k * (p_dl - p_l)
    )
    x_dot_r = x_dot_cmd + inv_d * (
        params.r_b @ (sensed.right - f_dr) + params.k * (p_dr - p_r)
    )
    return x_dot_l, x_dot_r
