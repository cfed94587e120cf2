"""
Frames, rotation algebra and 3-vector utilities.

Rotations are 3x3 numpy arrays mapping body coordinates to inertial (NED)
coordinates unless a FrameTransform says otherwise. Vectors are length-3
float arrays.
"""
from dataclasses import dataclass
from typing import Union

import numpy as np

from .models import ConfigurationError, FrameTag

Vec3 = np.ndarray
Rotation = np.ndarray
VectorLike = Union[np.ndarray, list, tuple]

GRAVITY = 9.80665
K0 = np.array([0.0, 0.0, 1.0])
ORTHONORMAL_TOL = 1e-9

# Below this angle the Rodrigues coefficients switch to their Taylor series.
_SMALL_ANGLE = 1e-6


def vec3(v: VectorLike) -> Vec3:
    """Return v as a finite float64 3-vector."""
    out = np.asarray(v, dtype=float).reshape(3)
    if not np.all(np.isfinite(out)):
        raise ConfigurationError("Vector has non-finite components", {"value": out.tolist()})
    return out


def gravity_vector() -> Vec3:
    """g*k0 in NED: [0, 0, +9.80665] m/s^2."""
    return GRAVITY * K0


def skew(v: VectorLike) -> np.ndarray:
    """Cross-product matrix: skew(v) @ w == cross(v, w)."""
    x, y, z = np.asarray(v, dtype=float).reshape(3)
    return np.array([
        [0.0, -z, y],
        [z, 0.0, -x],
        [-y, x, 0.0],
    ])


def vex(m: np.ndarray) -> Vec3:
    """Inverse of skew for the antisymmetric part of m."""
    return 0.5 * np.array([m[2, 1] - m[1, 2], m[0, 2] - m[2, 0], m[1, 0] - m[0, 1]])


def exp_so3(phi: VectorLike) -> Rotation:
    """Rodrigues closed form of exp(skew(phi))."""
    phi = np.asarray(phi, dtype=float).reshape(3)
    theta = float(np.linalg.norm(phi))
    k = skew(phi)
    if theta < _SMALL_ANGLE:
        a = 1.0 - theta ** 2 / 6.0
        b = 0.5 - theta ** 2 / 24.0
    else:
        a = np.sin(theta) / theta
        b = (1.0 - np.cos(theta)) / theta ** 2
    return np.eye(3) + a * k + b * (k @ k)


def log_so3(r: Rotation) -> Vec3:
    """Rotation vector phi with exp_so3(phi) == r (angle in [0, pi])."""
    cos_theta = np.clip((np.trace(r) - 1.0) / 2.0, -1.0, 1.0)
    theta = float(np.arccos(cos_theta))
    if theta < _SMALL_ANGLE:
        return vex(r - r.T)
    if np.pi - theta < 1e-6:
        # Near pi the antisymmetric part vanishes; recover the axis from R + I.
        m = (r + np.eye(3)) / 2.0
        axis = m[:, int(np.argmax(np.diag(m)))]
        axis = axis / np.linalg.norm(axis)
        return theta * axis
    return theta / (2.0 * np.sin(theta)) * np.array(
        [r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]]
    )


def orthonormalize(r: Rotation) -> Rotation:
    """Gram-Schmidt on the columns, keeping a right-handed frame."""
    c0 = r[:, 0] / np.linalg.norm(r[:, 0])
    c1 = r[:, 1] - np.dot(c0, r[:, 1]) * c0
    c1 = c1 / np.linalg.norm(c1)
    c2 = np.cross(c0, c1)
    return np.column_stack((c0, c1, c2))


def orthonormality_error(r: Rotation) -> float:
    """Frobenius norm of R^T R - I."""
    return float(np.linalg.norm(r.T @ r - np.eye(3)))


def is_rotation(r: np.ndarray, tol: float = ORTHONORMAL_TOL) -> bool:
    """True when r is orthonormal with det +1 within tol."""
    r = np.asarray(r, dtype=float)
    return (
        r.shape == (3, 3)
        and orthonormality_error(r) <= tol
        and abs(np.linalg.det(r) - 1.0) <= tol
    )


def integrate_rotation(r: Rotation, omega: VectorLike, dt: float) -> Rotation:
    """
    One step of R_dot = R [omega]x.

    Args:
        r: Current rotation
        omega: Body angular rate in rad/s
        dt: Step in seconds, must be positive

    Returns:
        R exp(skew(omega dt)), re-orthonormalized when it drifts past 1e-9
    """
    if dt <= 0:
        raise ConfigurationError("dt must be positive", {"dt": dt})
    out = r @ exp_so3(np.asarray(omega, dtype=float) * dt)
    if orthonormality_error(out) > ORTHONORMAL_TOL:
        out = orthonormalize(out)
    return out


def rotation_from_euler(roll: float, pitch: float, yaw: float) -> Rotation:
    """ZYX (yaw-pitch-roll) Euler angles in radians to a body->inertial rotation."""
    cr, sr = np.cos(roll), np.sin(roll)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cy, sy = np.cos(yaw), np.sin(yaw)
    return np.array([
        [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
        [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
        [-sp, cp * sr, cp * cr],
    ])


def euler_from_rotation(r: Rotation) -> Vec3:
    """Inverse of rotation_from_euler: [roll, pitch, yaw]."""
    pitch = -np.arcsin(np.clip(r[2, 0], -1.0, 1.0))
    roll = np.arctan2(r[2, 1], r[2, 2])
    yaw = np.arctan2(r[1, 0], r[0, 0])
    return np.array([roll, pitch, yaw])


def quaternion_from_rotation(r: Rotation) -> np.ndarray:
    """Unit quaternion [w, x, y, z] with w >= 0."""
    tr = np.trace(r)
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2.0
        q = np.array([0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s])
    elif r[0, 0] > r[1, 1] and r[0, 0] > r[2, 2]:
        s = np.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2.0
        q = np.array([(r[2, 1] - r[1, 2]) / s, 0.25 * s, (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s])
    elif r[1, 1] > r[2, 2]:
        s = np.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2]) * 2.0
        q = np.array([(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s, 0.25 * s, (r[1, 2] + r[2, 1]) / s])
    else:
        s = np.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1]) * 2.0
        q = np.array([(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s, (r[1, 2] + r[2, 1]) / s, 0.25 * s])
    q = q / np.linalg.norm(q)
    return -q if q[0] < 0 else q


def rotation_from_quaternion(q: VectorLike) -> Rotation:
    """Unit quaternion [w, x, y, z] to rotation matrix."""
    w, x, y, z = np.asarray(q, dtype=float) / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quaternions_from_rotations(rs: np.ndarray) -> np.ndarray:
    """(n, 3, 3) rotations to (n, 4) quaternions with w >= 0."""
    return np.array([quaternion_from_rotation(r) for r in rs]).reshape(-1, 4)


def rotations_from_quaternions(qs: np.ndarray) -> np.ndarray:
    """(n, 4) quaternions [w, x, y, z] to (n, 3, 3) rotations."""
    q = np.asarray(qs, dtype=float)
    q = q / np.linalg.norm(q, axis=1, keepdims=True)
    w, x, y, z = q.T
    return np.stack([
        np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], axis=1),
        np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], axis=1),
        np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], axis=1),
    ], axis=1)


def angle_between(r_a: Rotation, r_b: Rotation) -> float:
    """Geodesic angle of r_a^T r_b in radians."""
    return float(np.linalg.norm(log_so3(r_a.T @ r_b)))


def tilt_error(r_est: Rotation, r_true: Rotation) -> float:
    """Angle between the estimated and true down directions seen in body frame."""
    u = r_est.T @ K0
    w = r_true.T @ K0
    return float(np.arctan2(np.linalg.norm(np.cross(u, w)), np.dot(u, w)))


@dataclass(frozen=True)
class FrameTransform:
    """A rotation declared for one frame pair; apply() refuses other frames."""
    source: FrameTag
    target: FrameTag
    matrix: Rotation

    def __post_init__(self):
        if not is_rotation(self.matrix):
            raise ConfigurationError(
                f"{self.source.value}->{self.target.value} matrix is not a rotation",
                {"orthonormality_error": orthonormality_error(np.asarray(self.matrix, dtype=float))},
            )

    def apply(self, v: VectorLike, frame: FrameTag) -> Vec3:
        """Express v, given in `frame`, in the target frame."""
        if frame != self.source:
            raise ConfigurationError(
                f"Cannot map a {frame.value} vector with a {self.source.value}->{self.target.value} rotation"
            )
        return self.matrix @ np.asarray(v, dtype=float)

    def inverse(self) -> "FrameTransform":
        return FrameTransform(self.target, self.source, self.matrix.T)
