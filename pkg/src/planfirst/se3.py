"""Rigid-body transforms on SE(3) backed by unit quaternions.

Conventions:
    - Quaternions are (w, x, y, z), Hamilton product, always unit norm.
    - A Pose maps points from its local frame to the parent frame:
      p_parent = R(q) @ p_local + t.
    - Two poses compare equal under the quaternion double cover (q == -q).

All quaternion helpers broadcast over leading axes, so the same code path
serves single poses and large batches (the planner relies on this).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

QUAT_NORM_TOL = 1e-9


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a*b, broadcasting over leading axes."""
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_conj(q: np.ndarray) -> np.ndarray:
    out = np.array(q, dtype=np.float64, copy=True)
    out[..., 1:] = -out[..., 1:]
    return out


def _cross3(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Component-wise cross product; avoids np.cross's axis bookkeeping."""
    ax, ay, az = a[..., 0], a[..., 1], a[..., 2]
    bx, by, bz = b[..., 0], b[..., 1], b[..., 2]
    return np.stack([ay * bz - az * by, az * bx - ax * bz, ax * by - ay * bx],
                    axis=-1)


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vectors v (... , 3) by quaternions q (... , 4)."""
    qv = q[..., 1:]
    qw = q[..., 0:1]
    t = 2.0 * _cross3(qv, v)
    return v + qw * t + _cross3(qv, t)


def quat_from_axis_angle(axis: np.ndarray, angle) -> np.ndarray:
    """Unit quaternion for a rotation of `angle` radians about `axis`.

    `axis` is (..., 3) and must be unit length; `angle` broadcasts.
    """
    angle = np.asarray(angle, dtype=np.float64)
    half = 0.5 * angle
    s = np.sin(half)
    w = np.cos(half)
    xyz = np.asarray(axis, dtype=np.float64) * s[..., None]
    return np.concatenate([w[..., None], xyz], axis=-1)


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    m = np.empty(q.shape[:-1] + (3, 3), dtype=np.float64)
    m[..., 0, 0] = 1 - 2 * (y * y + z * z)
    m[..., 0, 1] = 2 * (x * y - w * z)
    m[..., 0, 2] = 2 * (x * z + w * y)
    m[..., 1, 0] = 2 * (x * y + w * z)
    m[..., 1, 1] = 1 - 2 * (x * x + z * z)
    m[..., 1, 2] = 2 * (y * z - w * x)
    m[..., 2, 0] = 2 * (x * z - w * y)
    m[..., 2, 1] = 2 * (y * z + w * x)
    m[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return m


def quat_from_matrix(m: np.ndarray) -> np.ndarray:
    """Shepperd's method, single matrix only."""
    m = np.asarray(m, dtype=np.float64)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2
        w = 0.25 * s
        x = (m[2, 1] - m[1, 2]) / s
        y = (m[0, 2] - m[2, 0]) / s
        z = (m[1, 0] - m[0, 1]) / s
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2
        w = (m[2, 1] - m[1, 2]) / s
        x = 0.25 * s
        y = (m[0, 1] + m[1, 0]) / s
        z = (m[0, 2] + m[2, 0]) / s
    elif m[1, 1] > m[2, 2]:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2
        w = (m[0, 2] - m[2, 0]) / s
        x = (m[0, 1] + m[1, 0]) / s
        y = 0.25 * s
        z = (m[1, 2] + m[2, 1]) / s
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2
        w = (m[1, 0] - m[0, 1]) / s
        x = (m[0, 2] + m[2, 0]) / s
        y = (m[1, 2] + m[2, 1]) / s
        z = 0.25 * s
    return quat_normalize(np.array([w, x, y, z]))


def quat_to_rotvec(q: np.ndarray) -> np.ndarray:
    """Axis-angle vector (angle * unit axis), broadcasting."""
    q = np.asarray(q, dtype=np.float64)
    w = np.clip(q[..., 0], -1.0, 1.0)
    # Canonicalize sign so the returned angle is in [0, pi].
    flip = np.where(w < 0, -1.0, 1.0)
    w = np.abs(w)
    xyz = q[..., 1:] * flip[..., None]
    s = np.linalg.norm(xyz, axis=-1)
    angle = 2.0 * np.arctan2(s, w)
    scale = np.where(s > 1e-12, angle / np.where(s > 1e-12, s, 1.0), 2.0)
    return xyz * scale[..., None]


def quat_angle(q: np.ndarray) -> np.ndarray:
    """Rotation angle in [0, pi] of quaternion(s)."""
    q = np.asarray(q, dtype=np.float64)
    s = np.linalg.norm(q[..., 1:], axis=-1)
    return 2.0 * np.arctan2(s, np.abs(q[..., 0]))


def quat_from_euler_xyz(angles: np.ndarray) -> np.ndarray:
    """Intrinsic XYZ Euler angles (radians) -> quaternion."""
    ax, ay, az = angles
    ex = np.array([1.0, 0.0, 0.0])
    ey = np.array([0.0, 1.0, 0.0])
    ez = np.array([0.0, 0.0, 1.0])
    return quat_mul(
        quat_mul(quat_from_axis_angle(ex, ax), quat_from_axis_angle(ey, ay)),
        quat_from_axis_angle(ez, az),
    )


def euler_xyz_from_matrix(m: np.ndarray) -> np.ndarray:
    """Intrinsic XYZ Euler angles of a rotation matrix.

    R = Rx(a) @ Ry(b) @ Rz(c); returns (a, b, c) in radians.
    """
    b = math.asin(max(-1.0, min(1.0, m[0, 2])))
    if abs(m[0, 2]) < 1.0 - 1e-12:
        a = math.atan2(-m[1, 2], m[2, 2])
        c = math.atan2(-m[0, 1], m[0, 0])
    else:
        # Gimbal lock: fold everything into the first angle.
        a = math.atan2(m[1, 0], m[1, 1])
        c = 0.0
    return np.array([a, b, c])


@dataclass(frozen=True)
class Pose:
    """Rigid transform: rotation quaternion (w,x,y,z) + translation (m)."""

    q: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        q = quat_normalize(np.asarray(self.q, dtype=np.float64))
        t = np.asarray(self.t, dtype=np.float64).reshape(3)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "t", t)
        if abs(np.linalg.norm(q) - 1.0) > QUAT_NORM_TOL:
            raise ValueError("quaternion could not be normalized")

    @staticmethod
    def identity() -> "Pose":
        return Pose()

    @staticmethod
    def from_axis_angle(axis, angle: float, t=(0.0, 0.0, 0.0)) -> "Pose":
        axis = np.asarray(axis, dtype=np.float64)
        axis = axis / np.linalg.norm(axis)
        return Pose(quat_from_axis_angle(axis, float(angle)), np.asarray(t, dtype=np.float64))

    @staticmethod
    def from_euler_xyz(angles, t=(0.0, 0.0, 0.0)) -> "Pose":
        return Pose(quat_from_euler_xyz(np.asarray(angles, dtype=np.float64)), t)

    @staticmethod
    def from_matrix(m: np.ndarray) -> "Pose":
        m = np.asarray(m, dtype=np.float64)
        return Pose(quat_from_matrix(m[:3, :3]), m[:3, 3])

    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.q)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation_matrix()
        m[:3, 3] = self.t
        return m

    def apply(self, pts: np.ndarray) -> np.ndarray:
        """Map points (..., 3) from local frame to parent frame."""
        return quat_rotate(self.q, np.asarray(pts, dtype=np.float64)) + self.t


def compose(a: Pose, b: Pose) -> Pose:
    """a then b: the pose of b's frame expressed in a's parent frame."""
    return Pose(quat_mul(a.q, b.q), a.t + quat_rotate(a.q, b.t))


def inverse(p: Pose) -> Pose:
    qi = quat_conj(p.q)
    return Pose(qi, -quat_rotate(qi, p.t))


def pose_error(current: Pose, target: Pose) -> tuple[float, np.ndarray]:
    """Position error (m) and per-axis rotation error (rad).

    The rotation part is the absolute intrinsic-XYZ Euler decomposition of
    the relative rotation R_current^T @ R_target, which is what per-axis
    angular thresholds are checked against.
    """
    pos_err = float(np.linalg.norm(target.t - current.t))
    q_rel = quat_mul(quat_conj(current.q), target.q)
    rot_err = np.abs(euler_xyz_from_matrix(quat_to_matrix(q_rel)))
    return pos_err, rot_err


def poses_close(a: Pose, b: Pose, tol: float = 1e-9) -> bool:
    """Equality up to quaternion double cover."""
    if np.linalg.norm(a.t - b.t) > tol:
        return False
    return float(quat_angle(quat_mul(quat_conj(a.q), b.q))) <= tol
