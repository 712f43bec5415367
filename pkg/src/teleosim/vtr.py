"""Manipulability-aware arm/base command splitting.

The per-axis virtual transmission ratio (how far the velocity ellipsoid of
the arm extends along each principal axis) gates a smooth weight in [0, 1].
Operator commands are scaled by the weight for the arm and by its
complement for the mobile base, so motion migrates to the base exactly in
the directions where the arm is running out of dexterity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kinematics import PointJacobian

SINGULAR_EPS = 1e-8  # pseudo-inverse diagonal beyond 1/eps^2 counts as singular

DEFAULT_THRESHOLD_D = 0.25
DEFAULT_THRESHOLD_DELTA = 0.1


@dataclass
class VtrThresholds:
    """Per-axis sigmoid window: w ramps 0 -> 1 across [d - delta, d + delta]."""

    d: np.ndarray = field(default_factory=lambda: np.full(3, DEFAULT_THRESHOLD_D))
    delta: np.ndarray = field(default_factory=lambda: np.full(3, DEFAULT_THRESHOLD_DELTA))
    disabled: np.ndarray = field(default_factory=lambda: np.zeros(3, dtype=bool))

    def __post_init__(self):
        self.d = np.asarray(self.d, dtype=float).reshape(3)
        self.delta = np.asarray(self.delta, dtype=float).reshape(3)
        self.disabled = np.asarray(self.disabled, dtype=bool).reshape(3)
        active = ~self.disabled
        if np.any(self.delta[active] <= 0):
            raise ValueError("threshold half-width must be > 0")
        if np.any((self.d - self.delta)[active] < 0):
            raise ValueError("lower threshold d - delta must be >= 0")


@dataclass
class VtrWeights:
    beta: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=float).reshape(3)
        self.w = np.asarray(self.w, dtype=float).reshape(3)

    @property
    def matrix(self) -> np.ndarray:
        return np.diag(self.w)

    @property
    def complement(self) -> np.ndarray:
        return np.diag(1.0 - self.w)

    @staticmethod
    def ones() -> "VtrWeights":
        return VtrWeights(beta=np.full(3, np.inf), w=np.ones(3))


@dataclass
class BaseGain:
    k_nu: np.ndarray

    def __post_init__(self):
        self.k_nu = np.asarray(self.k_nu, dtype=float).reshape(3)
        if np.any(self.k_nu < 0):
            raise ValueError("base gain diagonal must be non-negative")


def vtr(jacobian: PointJacobian | np.ndarray) -> np.ndarray:
    """Transmission ratio along x, y, z: the inverse square root of the
    diagonal of (J J^T)^-1, computed through a symmetric eigendecomposition.

    An axis with any component in a rank-deficient direction of J J^T has an
    unbounded inverse diagonal and maps to exactly 0.
    """
    j = jacobian.matrix if isinstance(jacobian, PointJacobian) else np.asarray(jacobian)
    if j.shape[0] != 3:
        raise ValueError("expected a 3xN linear Jacobian")
    jjt = j @ j.T
    eigval, eigvec = np.linalg.eigh(jjt)
    scale = max(eigval[-1], 1.0)
    inv_diag_limit = 1.0 / SINGULAR_EPS**2
    beta = np.zeros(3)
    for i in range(3):
        diag = 0.0
        singular = False
        for lam, vec in zip(eigval, eigvec.T):
            weight = vec[i] ** 2
            if weight < 1e-300:
                continue
            if lam <= scale * 1e-14:
                singular = True
                break
            diag += weight / lam
        if singular or diag >= inv_diag_limit:
            beta[i] = 0.0
        elif diag > 0.0:
            beta[i] = diag**-0.5
        else:  # axis has no overlap with any eigenvector: zero row
            beta[i] = 0.0
    return beta


def smoothstep(t: float) -> float:
    return 3.0 * t * t - 2.0 * t * t * t


def vtr_weight(beta: np.ndarray, thresholds: VtrThresholds) -> VtrWeights:
    """Cubic-smoothstep weight per axis, exact at both endpoints."""
    beta = np.asarray(beta, dtype=float).reshape(3)
    w = np.zeros(3)
    for i in range(3):
        if thresholds.disabled[i]:
            w[i] = 1.0
            continue
        lo = thresholds.d[i] - thresholds.delta[i]
        hi = thresholds.d[i] + thresholds.delta[i]
        if beta[i] >= hi:
            w[i] = 1.0
        elif beta[i] <= lo:
            w[i] = 0.0
        else:
            w[i] = smoothstep((beta[i] - lo) / (2.0 * thresholds.delta[i]))
    return VtrWeights(beta=beta, w=w)


def split_cartesian(x_dot: np.ndarray, weights: VtrWeights) -> tuple[np.ndarray, np.ndarray]:
    """Scale a Cartesian command into arm (w) and base (1 - w) shares."""
    x_dot = np.asarray(x_dot, dtype=float).reshape(3)
    x_star = weights.w * x_dot
    nu = (1.0 - weights.w) * x_dot
    return x_star, nu


def split_postural(
    force: np.ndarray,
    jacobian: PointJacobian,
    weights: VtrWeights,
    base_gain: BaseGain,
) -> tuple[np.ndarray, np.ndarray]:
    """Weighted joint torques for the arm plus a base velocity command."""
    force = np.asarray(force, dtype=float).reshape(3)
    tau = jacobian.matrix.T @ (weights.w * force)
    nu = base_gain.k_nu * ((1.0 - weights.w) * force)
    return tau, nu
