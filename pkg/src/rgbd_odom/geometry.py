"""Rigid-body transform algebra and the 6-vector pose parametrization.

A motion is represented either as a RigidTransform (R, t) or as a PoseTwist
xi = [t; omega] where omega is the axis-angle (so(3) log) vector of R. The
axis-angle branch is kept canonical (|omega| <= pi); frame-to-frame motions
never approach the pi branch cut, so twist_of rejects angles within 1e-6 of
pi rather than trying to disambiguate them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import AngleNearPi

# Below this rotation angle the exp/log maps switch to second-order Taylor
# expansions of sin(a)/a and (1-cos(a))/a^2 to avoid 0/0.
_SMALL_ANGLE = 1e-10

_ANGLE_LIMIT = np.pi - 1e-6


def _skew(v):
    return np.array(
        [
            [0.0, -v[2], v[1]],
            [v[2], 0.0, -v[0]],
            [-v[1], v[0], 0.0],
        ]
    )


def so3_exp(omega):
    """Rodrigues formula: axis-angle vector -> rotation matrix."""
    omega = np.asarray(omega, dtype=float)
    angle = np.linalg.norm(omega)
    K = _skew(omega)
    if angle < _SMALL_ANGLE:
        # sin(a)/a ~ 1 - a^2/6, (1-cos(a))/a^2 ~ 1/2 - a^2/24
        return np.eye(3) + (1.0 - angle**2 / 6.0) * K + (0.5 - angle**2 / 24.0) * (K @ K)
    return np.eye(3) + (np.sin(angle) / angle) * K + ((1.0 - np.cos(angle)) / angle**2) * (K @ K)


def so3_log(R):
    """Rotation matrix -> canonical axis-angle vector, |omega| < pi - 1e-6.

    Raises AngleNearPi for rotations at or beyond the limit; those never
    arise from plausible frame-to-frame camera motion.
    """
    R = np.asarray(R, dtype=float)
    cos_angle = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    angle = np.arccos(cos_angle)
    if angle >= _ANGLE_LIMIT:
        raise AngleNearPi(f"rotation angle {angle:.6f} rad exceeds {_ANGLE_LIMIT:.6f}")
    vee = 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if angle < _SMALL_ANGLE:
        # a/sin(a) ~ 1 + a^2/6
        return vee * (1.0 + angle**2 / 6.0)
    return vee * (angle / np.sin(angle))


@dataclass(frozen=True)
class RigidTransform:
    """SE(3) element: p -> R p + t. Immutable; arrays are read-only."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float)
        t = np.array(self.translation, dtype=float).reshape(3)
        if R.shape != (3, 3):
            raise ValueError("rotation must be 3x3")
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform()

    def apply(self, points):
        """Transform one point (3,) or a stack of points (n, 3)."""
        p = np.asarray(points, dtype=float)
        return p @ self.rotation.T + self.translation

    def is_valid(self, tol=1e-9):
        R = self.rotation
        return (
            np.linalg.norm(R.T @ R - np.eye(3)) < tol
            and abs(np.linalg.det(R) - 1.0) < tol
        )


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Result applies b then a: compose(a, b).apply(p) == a.apply(b.apply(p))."""
    return RigidTransform(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def invert(t: RigidTransform) -> RigidTransform:
    return RigidTransform(t.rotation.T, -(t.rotation.T @ t.translation))


@dataclass(frozen=True)
class PoseTwist:
    """6-vector motion parametrization: translation then axis-angle rotation."""

    translation: np.ndarray
    rotation: np.ndarray

    def __post_init__(self):
        t = np.array(self.translation, dtype=float).reshape(3)
        w = np.array(self.rotation, dtype=float).reshape(3)
        t.flags.writeable = False
        w.flags.writeable = False
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "rotation", w)

    @staticmethod
    def from_vector(xi) -> "PoseTwist":
        xi = np.asarray(xi, dtype=float).reshape(6)
        return PoseTwist(xi[:3], xi[3:])

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.translation, self.rotation])


def twist_of(t: RigidTransform) -> PoseTwist:
    """Transform -> twist. The translation component is t itself (not the
    se(3) V-map), so xi is simply [t; log R]."""
    return PoseTwist(t.translation, so3_log(t.rotation))


def transform_of(xi: PoseTwist) -> RigidTransform:
    return RigidTransform(so3_exp(xi.rotation), xi.translation)


def twist_vector_of(t: RigidTransform) -> np.ndarray:
    """Convenience: transform -> raw 6-vector [t; omega]."""
    return np.concatenate([t.translation, so3_log(t.rotation)])


def transform_of_vector(xi) -> RigidTransform:
    xi = np.asarray(xi, dtype=float).reshape(6)
    return RigidTransform(so3_exp(xi[3:]), xi[:3])


def rotation_geodesic_distance(Ra, Rb) -> float:
    """Angle of the relative rotation Ra^T Rb, in radians.

    Uses ||R - I||_F = 2 sqrt(2) |sin(angle/2)| instead of the arccos of the
    trace, which loses half the floating-point digits near zero.
    """
    rel = np.asarray(Ra).T @ np.asarray(Rb)
    f = np.linalg.norm(rel - np.eye(3))
    return float(2.0 * np.arcsin(min(f / (2.0 * np.sqrt(2.0)), 1.0)))


def rotation_to_rpy(R) -> np.ndarray:
    """Display-only roll/pitch/yaw (intrinsic Z-Y-X convention).

    Only used for evaluation plots; the odometry state itself stays in
    axis-angle form. The Z-Y-X choice is an assumption documented in the
    README since plot conventions vary.
    """
    R = np.asarray(R, dtype=float)
    pitch = np.arcsin(np.clip(-R[2, 0], -1.0, 1.0))
    if abs(R[2, 0]) < 1.0 - 1e-12:
        roll = np.arctan2(R[2, 1], R[2, 2])
        yaw = np.arctan2(R[1, 0], R[0, 0])
    else:  # gimbal lock; split arbitrarily
        roll = np.arctan2(-R[1, 2], R[1, 1])
        yaw = 0.0
    return np.array([roll, pitch, yaw])
