"""Serial arm + multi-finger hand model and forward/differential kinematics.

Frame layout:
    - Robot base frame is the world frame.
    - Arm joint i: fixed parent offset, then a revolute rotation about a
      fixed local axis. Frame i is the frame after joint i's rotation.
    - The palm mounts on the last arm frame via a fixed offset; the palm
      frame is the end-effector frame the planner targets.
    - Each finger chains J revolute joints off a fixed palm-frame base;
      a fingertip frame hangs off the distal link.

Link indices (used by collision spheres):
    0 .. n_arm-1   arm frames
    n_arm          palm frame
    n_arm+1+f*J+j  frame after joint j of finger f

Hand joint vectors are finger-major: finger f occupies slots [f*J, (f+1)*J).

The default model is fully documented so every kinematics value in the test
suite can be derived by hand: a 7-DoF arm with alternating Z/Y joint axes
and 0.25 m link offsets stacked along +z, a 0.10 m palm mount, and a 4x4
hand with 0.05 m phalanges. With all joints at zero the palm sits at
(0, 0, 1.85) with identity orientation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .se3 import (
    Pose,
    compose,
    quat_from_axis_angle,
    quat_mul,
    quat_normalize,
    quat_rotate,
)


@dataclass(frozen=True)
class Joint:
    axis: np.ndarray
    offset: Pose
    lo: float
    hi: float

    def __post_init__(self):
        axis = np.asarray(self.axis, dtype=np.float64).reshape(3)
        axis = axis / np.linalg.norm(axis)
        object.__setattr__(self, "axis", axis)
        if not self.lo < self.hi:
            raise ValueError(f"joint limits must satisfy lo < hi, got [{self.lo}, {self.hi}]")


@dataclass(frozen=True)
class Finger:
    base: Pose
    joints: tuple[Joint, ...]
    tip: Pose


@dataclass(frozen=True)
class CollisionSphere:
    link: int
    center: np.ndarray
    radius: float
    fingertip: bool = False

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=np.float64).reshape(3))
        if not self.radius > 0:
            raise ValueError("collision sphere radius must be > 0")


@dataclass(frozen=True)
class RobotModel:
    arm: tuple[Joint, ...]
    palm_offset: Pose
    fingers: tuple[Finger, ...]
    spheres: tuple[CollisionSphere, ...]
    thumb_index: int = 0

    @property
    def n_arm(self) -> int:
        return len(self.arm)

    @property
    def n_fingers(self) -> int:
        return len(self.fingers)

    @property
    def joints_per_finger(self) -> int:
        return len(self.fingers[0].joints)

    @property
    def n_hand(self) -> int:
        return sum(len(f.joints) for f in self.fingers)

    def arm_limits(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.array([j.lo for j in self.arm])
        hi = np.array([j.hi for j in self.arm])
        return lo, hi

    def hand_limits(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.array([j.lo for f in self.fingers for j in f.joints])
        hi = np.array([j.hi for f in self.fingers for j in f.joints])
        return lo, hi

    def finger_link_index(self, finger: int, joint: int) -> int:
        return self.n_arm + 1 + finger * self.joints_per_finger + joint


@dataclass(frozen=True)
class JointConfig:
    """Full robot configuration: arm joints + hand joints, radians."""

    arm: np.ndarray
    hand: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "arm", np.asarray(self.arm, dtype=np.float64).reshape(-1))
        object.__setattr__(self, "hand", np.asarray(self.hand, dtype=np.float64).reshape(-1))


@dataclass(frozen=True)
class FkResult:
    link_poses: tuple[Pose, ...]
    palm: Pose
    fingertips: tuple[Pose, ...]


class DimensionError(ValueError):
    """Configuration vector does not match the model."""


def _check_dims(model: RobotModel, q: JointConfig) -> None:
    if q.arm.shape != (model.n_arm,):
        raise DimensionError(f"arm config has {q.arm.shape[0]} joints, model has {model.n_arm}")
    if q.hand.shape != (model.n_hand,):
        raise DimensionError(f"hand config has {q.hand.shape[0]} joints, model has {model.n_hand}")


def fk_arm_batch(model: RobotModel, arm_q: np.ndarray) -> dict:
    """Batched arm FK.

    arm_q has shape (..., n_arm). Returns world-frame arrays:
        link_q (..., n_arm, 4), link_t (..., n_arm, 3),
        origins (..., n_arm, 3), axes (..., n_arm, 3),
        palm_q (..., 4), palm_t (..., 3)
    Joint origins/axes feed geometric Jacobian columns.
    """
    arm_q = np.asarray(arm_q, dtype=np.float64)
    batch = arm_q.shape[:-1]
    q_cur = np.broadcast_to(np.array([1.0, 0.0, 0.0, 0.0]), batch + (4,)).copy()
    t_cur = np.zeros(batch + (3,))
    link_q = np.empty(batch + (model.n_arm, 4))
    link_t = np.empty(batch + (model.n_arm, 3))
    origins = np.empty(batch + (model.n_arm, 3))
    axes = np.empty(batch + (model.n_arm, 3))
    for i, joint in enumerate(model.arm):
        t_cur = t_cur + quat_rotate(q_cur, joint.offset.t)
        q_cur = quat_mul(q_cur, joint.offset.q)
        origins[..., i, :] = t_cur
        axes[..., i, :] = quat_rotate(q_cur, joint.axis)
        q_cur = quat_mul(q_cur, quat_from_axis_angle(joint.axis, arm_q[..., i]))
        link_q[..., i, :] = q_cur
        link_t[..., i, :] = t_cur
    palm_t = t_cur + quat_rotate(q_cur, model.palm_offset.t)
    palm_q = quat_normalize(quat_mul(q_cur, model.palm_offset.q))
    return {
        "link_q": link_q,
        "link_t": link_t,
        "origins": origins,
        "axes": axes,
        "palm_q": palm_q,
        "palm_t": palm_t,
    }


def hand_frames(model: RobotModel, hand_q: np.ndarray) -> dict:
    """Finger FK in the palm frame, batched over leading axes.

    hand_q has shape (..., n_hand). Returns arrays over fingers F and
    joints J:
        link_q (..., F, J, 4), link_t (..., F, J, 3),
        origins (..., F, J, 3), axes (..., F, J, 3),
        tip_q (..., F, 4), tip_t (..., F, 3)
    """
    hand_q = np.asarray(hand_q, dtype=np.float64)
    batch = hand_q.shape[:-1]
    F = model.n_fingers
    J = model.joints_per_finger
    link_q = np.empty(batch + (F, J, 4))
    link_t = np.empty(batch + (F, J, 3))
    origins = np.empty(batch + (F, J, 3))
    axes = np.empty(batch + (F, J, 3))
    tip_q = np.empty(batch + (F, 4))
    tip_t = np.empty(batch + (F, 3))
    for f, finger in enumerate(model.fingers):
        q_cur = np.broadcast_to(finger.base.q, batch + (4,)).copy()
        t_cur = np.broadcast_to(finger.base.t, batch + (3,)).copy()
        for j, joint in enumerate(finger.joints):
            t_cur = t_cur + quat_rotate(q_cur, joint.offset.t)
            q_cur = quat_mul(q_cur, joint.offset.q)
            origins[..., f, j, :] = t_cur
            axes[..., f, j, :] = quat_rotate(q_cur, joint.axis)
            q_cur = quat_mul(q_cur, quat_from_axis_angle(joint.axis, hand_q[..., f * J + j]))
            link_q[..., f, j, :] = q_cur
            link_t[..., f, j, :] = t_cur
        tip_t[..., f, :] = t_cur + quat_rotate(q_cur, finger.tip.t)
        tip_q[..., f, :] = quat_normalize(quat_mul(q_cur, finger.tip.q))
    return {
        "link_q": link_q,
        "link_t": link_t,
        "origins": origins,
        "axes": axes,
        "tip_q": tip_q,
        "tip_t": tip_t,
    }


def forward_kinematics(model: RobotModel, q: JointConfig) -> FkResult:
    """World-frame poses of every link, the palm, and each fingertip."""
    _check_dims(model, q)
    arm = fk_arm_batch(model, q.arm)
    palm = Pose(arm["palm_q"], arm["palm_t"])
    hand = hand_frames(model, q.hand)
    link_poses = [Pose(arm["link_q"][i], arm["link_t"][i]) for i in range(model.n_arm)]
    link_poses.append(palm)
    F = model.n_fingers
    J = model.joints_per_finger
    for f in range(F):
        for j in range(J):
            link_poses.append(compose(palm, Pose(hand["link_q"][f, j], hand["link_t"][f, j])))
    fingertips = tuple(compose(palm, Pose(hand["tip_q"][f], hand["tip_t"][f])) for f in range(F))
    return FkResult(link_poses=tuple(link_poses), palm=palm, fingertips=fingertips)


def jacobian(model: RobotModel, q: JointConfig) -> np.ndarray:
    """Geometric Jacobian of the palm frame, 6 x n_arm (linear rows first)."""
    _check_dims(model, q)
    arm = fk_arm_batch(model, q.arm)
    p = arm["palm_t"]
    J = np.zeros((6, model.n_arm))
    for i in range(model.n_arm):
        z = arm["axes"][i]
        o = arm["origins"][i]
        J[:3, i] = np.cross(z, p - o)
        J[3:, i] = z
    return J


def fingertip_world(model: RobotModel, q: JointConfig) -> np.ndarray:
    """Fingertip positions (F, 3) in the world frame."""
    _check_dims(model, q)
    arm = fk_arm_batch(model, q.arm)
    hand = hand_frames(model, q.hand)
    return quat_rotate(arm["palm_q"][None, :], hand["tip_t"]) + arm["palm_t"]


def sphere_centers_world(model: RobotModel, q: JointConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """World centers (S, 3), radii (S,), fingertip flags (S,) of all collision spheres."""
    fk = forward_kinematics(model, q)
    centers = np.array([fk.link_poses[s.link].apply(s.center) for s in model.spheres])
    radii = np.array([s.radius for s in model.spheres])
    tips = np.array([s.fingertip for s in model.spheres])
    return centers, radii, tips


# --------------------------------------------------------------------------
# Default model

ARM_LINK = 0.25          # m, offset between consecutive arm joints
PALM_MOUNT = 0.10        # m, last arm frame -> palm
PHALANX = 0.05           # m, finger segment length
FINGER_SPREAD = 0.06     # m, half distance between thumb and finger rows
HOME_PALM_HEIGHT = 7 * ARM_LINK + PALM_MOUNT  # 1.85 m, palm z at all-zero config


def _finger(base: Pose, n_joints: int = 4, lo: float = -0.3, hi: float = 1.8) -> Finger:
    joints = []
    for j in range(n_joints):
        off = Pose() if j == 0 else Pose(t=(0.0, 0.0, PHALANX))
        joints.append(Joint(axis=np.array([0.0, 1.0, 0.0]), offset=off, lo=lo, hi=hi))
    return Finger(base=base, joints=tuple(joints), tip=Pose(t=(0.0, 0.0, PHALANX)))


def default_robot() -> RobotModel:
    """The documented default robot: 7-DoF Z/Y arm + 4x4 hand, thumb = finger 0.

    The thumb mounts at palm x = -0.06 curling toward +x; the three fingers
    mount at x = +0.06 (y in {-0.045, 0, 0.045}), rotated pi about the palm
    z-axis so they curl back toward the thumb.
    """
    axes = ["z", "y", "z", "y", "z", "y", "z"]
    unit = {"z": np.array([0.0, 0.0, 1.0]), "y": np.array([0.0, 1.0, 0.0])}
    limits = {"z": 2.9, "y": 2.0}
    arm = tuple(
        Joint(axis=unit[a], offset=Pose(t=(0.0, 0.0, ARM_LINK)), lo=-limits[a], hi=limits[a])
        for a in axes
    )
    thumb = _finger(Pose(t=(-FINGER_SPREAD, 0.0, 0.0)))
    fingers = [thumb]
    for y in (-0.045, 0.0, 0.045):
        base = Pose.from_axis_angle([0, 0, 1], np.pi, t=(FINGER_SPREAD, y, 0.0))
        fingers.append(_finger(base))
    model_wo_spheres = RobotModel(
        arm=arm,
        palm_offset=Pose(t=(0.0, 0.0, PALM_MOUNT)),
        fingers=tuple(fingers),
        spheres=(),
        thumb_index=0,
    )
    spheres = []
    for i in range(6):
        spheres.append(CollisionSphere(link=i, center=(0, 0, ARM_LINK / 2), radius=0.06))
    spheres.append(CollisionSphere(link=6, center=(0, 0, PALM_MOUNT / 2), radius=0.05))
    spheres.append(CollisionSphere(link=7, center=(0, 0, 0), radius=0.045))
    J = 4
    for f in range(4):
        for j in range(J):
            spheres.append(
                CollisionSphere(
                    link=model_wo_spheres.finger_link_index(f, j),
                    center=(0, 0, PHALANX / 2),
                    radius=0.012,
                    fingertip=(j == J - 1),
                )
            )
    return RobotModel(
        arm=arm,
        palm_offset=Pose(t=(0.0, 0.0, PALM_MOUNT)),
        fingers=tuple(fingers),
        spheres=tuple(spheres),
        thumb_index=0,
    )


def open_hand_preshape(model: RobotModel, flexion: float = 0.2) -> np.ndarray:
    """Documented open-hand preshape: uniform small flexion on every joint."""
    return np.full(model.n_hand, flexion)
