"""Batched waypoint trajectory optimization.

Plans K collision-aware arm trajectories to K palm-pose targets in one call.
Every batch element is optimized independently (first-order descent on a
waypoint cost), all arithmetic is elementwise across the batch, and all
reductions run over fixed per-trajectory axes, so:

    plan_batch(..., targets)[i] == plan_batch(..., [targets[i]])[0]

bit-exactly. Non-converged trajectories are returned with diagnostics, never
discarded.

Cost per trajectory (waypoints q_1..q_{W-1} free, q_0 pinned to the start):

    C = w_pos * ||p_term - p*||^2
      + w_rot * ||R_term - R*||_F^2          (= 4(1 - cos angle), smooth)
      + w_col * sum_{t,s} max(0, margin - (sdf(x_ts) - r_s))^2
      + w_smooth * sum_t ||q_{t+1} - q_t||^2
      + w_limit * soft joint-limit overshoot^2

with exact analytic gradients (geometric Jacobians + analytic SDF
gradients). Hand joints stay frozen at the target's pre-grasp configuration
for the whole reach.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Scene, sdf, sdf_grad
from .kinematics import JointConfig, RobotModel, fk_arm_batch, hand_frames
from .se3 import (
    Pose,
    _cross3,
    pose_error,
    quat_conj,
    quat_mul,
    quat_rotate,
    quat_to_matrix,
    quat_to_rotvec,
)


@dataclass(frozen=True)
class PlanTarget:
    pose: Pose                # palm target in the robot frame
    theta_p: np.ndarray       # hand joints held fixed during the reach

    def __post_init__(self):
        object.__setattr__(self, "theta_p", np.asarray(self.theta_p, dtype=np.float64).reshape(-1))


@dataclass(frozen=True)
class PlannerConfig:
    waypoints: int = 32
    iterations: int = 300
    step_size: float = 5e-4
    w_pos: float = 120.0
    w_rot: float = 4.0
    w_col: float = 400.0
    w_smooth: float = 2.0
    w_limit: float = 50.0
    margin: float = 0.01            # m, collision clearance the cost enforces
    pos_threshold: float = 0.005    # m
    rot_threshold_deg: float = 14.0 # per axis
    ik_iters: int = 60
    ik_damping: float = 0.1
    grad_clip: float = 1.0          # per-waypoint gradient norm cap
    momentum: float = 0.9           # heavy-ball coefficient
    stall_iters: int = 12           # freeze an element after this many
                                    # iterations without cost improvement

    def __post_init__(self):
        for name in ("w_pos", "w_rot", "w_col", "w_smooth", "w_limit"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if not (self.pos_threshold > 0 and self.rot_threshold_deg > 0):
            raise ValueError("thresholds must be > 0")


@dataclass(frozen=True)
class Diagnostics:
    pos_err: float
    rot_err: np.ndarray            # (3,) absolute per-axis radians
    max_penetration: float         # m, beyond sphere surfaces
    converged_iterations: int      # first iteration meeting both thresholds
    invalid: bool = False          # non-finite target; element was not planned


@dataclass(frozen=True)
class Trajectory:
    waypoints: np.ndarray          # (W, n_arm)
    hand: np.ndarray               # (n_hand,) fixed pre-grasp configuration
    velocities: np.ndarray         # (W, n_arm) backward differences, v[0] = 0
    diagnostics: Diagnostics

    @property
    def terminal(self) -> JointConfig:
        return JointConfig(arm=self.waypoints[-1], hand=self.hand)

    def waypoint_configs(self) -> list[JointConfig]:
        return [JointConfig(arm=w, hand=self.hand) for w in self.waypoints]


def save_trajectory(traj: Trajectory, path) -> None:
    """Debug export: one waypoint per line (arm joints, radians)."""
    with open(path, "w") as f:
        for w in traj.waypoints:
            f.write(" ".join(repr(float(v)) for v in w) + "\n")


def _euler_xyz_batch(m: np.ndarray) -> np.ndarray:
    """Batched intrinsic-XYZ Euler extraction, matching se3.euler_xyz_from_matrix."""
    b = np.arcsin(np.clip(m[..., 0, 2], -1.0, 1.0))
    a = np.arctan2(-m[..., 1, 2], m[..., 2, 2])
    c = np.arctan2(-m[..., 0, 1], m[..., 0, 0])
    lock = np.abs(m[..., 0, 2]) >= 1.0 - 1e-12
    if np.any(lock):
        a = np.where(lock, np.arctan2(m[..., 1, 0], m[..., 1, 1]), a)
        c = np.where(lock, 0.0, c)
    return np.stack([a, b, c], axis=-1)


def _ik_batch(model: RobotModel, arm0: np.ndarray, target_t: np.ndarray,
              target_q: np.ndarray, iters: int, damping: float,
              max_step: float = 0.2) -> np.ndarray:
    """Damped least-squares arm IK, batched over leading axis K.

    arm0 is (K, n_arm); target_t/target_q are (K, 3)/(K, 4). All arithmetic
    is elementwise across the batch (einsum contractions and per-matrix 6x6
    solves), so results are bit-identical for any batch grouping.
    """
    lo, hi = model.arm_limits()
    q = np.clip(arm0, lo, hi)
    lam2 = damping * damping
    eye6 = np.eye(6)
    for _ in range(iters):
        fk = fk_arm_batch(model, q)
        e_p = target_t - fk["palm_t"]
        e_r = quat_to_rotvec(quat_mul(target_q, quat_conj(fk["palm_q"])))
        e = np.concatenate([e_p, e_r], axis=-1)                     # (K, 6)
        rel = fk["palm_t"][:, None, :] - fk["origins"]              # (K, na, 3)
        jlin = _cross3(fk["axes"], rel)
        J = np.concatenate([jlin, fk["axes"]], axis=-1).transpose(0, 2, 1)  # (K, 6, na)
        A = np.einsum("kin,kjn->kij", J, J) + lam2 * eye6
        sol = np.linalg.solve(A, e[..., None])[..., 0]
        dq = np.einsum("kin,ki->kn", J, sol)
        dq = np.clip(dq, -max_step, max_step)
        q = np.clip(q + dq, lo, hi)
    return q


def ik_warm_start(model: RobotModel, start: JointConfig, target: Pose,
                  iters: int = 60, damping: float = 0.1,
                  max_step: float = 0.2) -> np.ndarray:
    """Damped least-squares arm IK from `start` toward `target` (palm frame).

    Deterministic; always returns a finite, limit-clamped configuration.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    return _ik_batch(model, start.arm[None, :], target.t[None, :],
                     target.q[None, :], iters, damping, max_step)[0]


_RETRY_SEEDS = (
    np.array([0.0, 0.6, 0.0, -1.1, 0.0, 0.7, 0.0]),
    np.array([0.0, -0.6, 0.0, 1.1, 0.0, -0.7, 0.0]),
    np.zeros(7),
)


def _warm_start_batch(model: RobotModel, start: JointConfig,
                      target_t: np.ndarray, target_q: np.ndarray,
                      cfg: PlannerConfig) -> np.ndarray:
    """DLS warm starts for K targets at once, retried from fixed elbow seeds
    for elements whose first solve misses the position threshold. Per-element
    decisions only, so batch independence is preserved."""
    K = target_t.shape[0]
    arm0 = np.broadcast_to(start.arm, (K, model.n_arm))
    best = _ik_batch(model, arm0, target_t, target_q,
                     cfg.ik_iters, cfg.ik_damping)
    fk = fk_arm_batch(model, best)
    best_err = np.linalg.norm(fk["palm_t"] - target_t, axis=-1)
    for seed_arm in _RETRY_SEEDS:
        idx = np.flatnonzero(best_err > cfg.pos_threshold)
        if idx.size == 0:
            break
        if model.n_arm != seed_arm.shape[0]:
            seed_arm = np.zeros(model.n_arm)
        arm0 = np.broadcast_to(seed_arm, (idx.size, model.n_arm))
        retry = _ik_batch(model, arm0, target_t[idx], target_q[idx],
                          cfg.ik_iters, cfg.ik_damping)
        fk = fk_arm_batch(model, retry)
        err = np.linalg.norm(fk["palm_t"] - target_t[idx], axis=-1)
        better = err < best_err[idx]
        sub = idx[better]
        best[sub] = retry[better]
        best_err[sub] = err[better]
    return best


def _palm_pose(model: RobotModel, arm_q: np.ndarray) -> Pose:
    fk = fk_arm_batch(model, arm_q)
    return Pose(fk["palm_q"], fk["palm_t"])


def _hand_geometry(model: RobotModel, theta_p: np.ndarray):
    """Palm-frame centers/radii of the palm + finger collision spheres at theta_p."""
    hand = hand_frames(model, theta_p)
    J = model.joints_per_finger
    centers, radii = [], []
    for s in model.spheres:
        if s.link < model.n_arm:
            continue
        if s.link == model.n_arm:
            centers.append(s.center)
        else:
            idx = s.link - model.n_arm - 1
            f, j = divmod(idx, J)
            centers.append(quat_rotate(hand["link_q"][f, j], s.center) + hand["link_t"][f, j])
        radii.append(s.radius)
    return np.array(centers).reshape(-1, 3), np.array(radii)


def _arm_sphere_meta(model: RobotModel):
    """(link indices, local centers, radii) of arm-link spheres, plus the
    joint-influence mask for every sphere (arm spheres first, hand spheres
    after; hand spheres depend on every arm joint)."""
    links, centers, radii = [], [], []
    for s in model.spheres:
        if s.link < model.n_arm:
            links.append(s.link)
            centers.append(s.center)
            radii.append(s.radius)
    n_hand_spheres = sum(1 for s in model.spheres if s.link >= model.n_arm)
    n_total = len(links) + n_hand_spheres
    mask = np.zeros((n_total, model.n_arm))
    for si, l in enumerate(links):
        mask[si, : l + 1] = 1.0
    mask[len(links):, :] = 1.0
    return np.array(links, dtype=int), np.array(centers).reshape(-1, 3), np.array(radii), mask


def _cost_and_grad(model: RobotModel, scene: Scene, Q: np.ndarray,
                   target_t: np.ndarray, target_R: np.ndarray,
                   hand_centers: np.ndarray, hand_radii: np.ndarray,
                   cfg: PlannerConfig, want_grad: bool = True):
    """Total cost (K,) and gradient (K, W, n_arm) of the waypoint cost.

    Q is (K, W, n_arm); row 0 of every element is the fixed start and its
    gradient is zeroed. hand_centers is (K, Sh, 3) in the palm frame.
    """
    K, W, na = Q.shape
    fk = fk_arm_batch(model, Q)                      # batch (K, W)
    links, arm_centers, arm_radii, mask = _arm_sphere_meta(model)

    # World sphere centers: arm spheres off their link frames, hand spheres
    # off the palm frame (fixed palm-frame offsets per batch element).
    arm_x = (
        quat_rotate(fk["link_q"][:, :, links, :], arm_centers)
        + fk["link_t"][:, :, links, :]
    )                                                # (K, W, Sa, 3)
    palm_q = fk["palm_q"][:, :, None, :]
    palm_t = fk["palm_t"][:, :, None, :]
    hand_x = quat_rotate(palm_q, hand_centers[:, None, :, :]) + palm_t
    x = np.concatenate([arm_x, hand_x], axis=2)      # (K, W, S, 3)
    radii = np.concatenate([arm_radii, hand_radii])

    shapes = scene.shapes()
    if shapes:
        d = sdf(shapes[0], x)
        g = sdf_grad(shapes[0], x)
        for obs in shapes[1:]:
            d_o = sdf(obs, x)
            closer = d_o < d
            g = np.where(closer[..., None], sdf_grad(obs, x), g)
            d = np.where(closer, d_o, d)
    else:
        d = np.full(x.shape[:-1], np.inf)
        g = np.zeros_like(x)

    viol = np.maximum(0.0, cfg.margin - (d - radii))  # (K, W, S)
    cost_col = cfg.w_col * (viol * viol)[:, 1:, :].sum(axis=(1, 2))

    dq = Q[:, 1:, :] - Q[:, :-1, :]
    cost_smooth = cfg.w_smooth * (dq * dq).sum(axis=(1, 2))

    lo, hi = model.arm_limits()
    soft = 0.05
    over = np.maximum(0.0, Q - (hi - soft))
    under = np.maximum(0.0, (lo + soft) - Q)
    cost_lim = cfg.w_limit * ((over * over + under * under)[:, 1:, :]).sum(axis=(1, 2))

    p_term = fk["palm_t"][:, -1, :]
    e_p = p_term - target_t
    cost_pos = cfg.w_pos * (e_p * e_p).sum(axis=-1)
    R_term = quat_to_matrix(fk["palm_q"][:, -1, :])
    dR = R_term - target_R
    cost_rot = cfg.w_rot * (dR * dR).sum(axis=(1, 2))

    cost = cost_pos + cost_rot + cost_col + cost_smooth + cost_lim
    extras = {
        "term_t": p_term,
        "term_q": fk["palm_q"][:, -1, :],
        "term_R": R_term,
        "max_viol": viol.max(axis=(1, 2)),
        "max_pen": np.maximum(0.0, radii - d).max(axis=(1, 2)),
    }
    if not want_grad:
        return cost, None, extras

    grad = np.zeros_like(Q)

    # Collision: chain dC/dx through point Jacobians z_i x (x - o_i), using
    # dC . (z x (x - o)) = z . (x x dC) - z . (o x dC) and summing the masked
    # sphere contributions before the per-joint cross products.
    w = -2.0 * cfg.w_col * viol
    dCdx = w[..., None] * g                           # (K, W, S, 3)
    m1 = np.einsum("kwsc,sn->kwnc", _cross3(x, dCdx), mask)   # (K, W, na, 3)
    m2 = np.einsum("kwsc,sn->kwnc", dCdx, mask)
    torque = m1 - _cross3(fk["origins"], m2)
    grad += (fk["axes"] * torque).sum(axis=-1)

    # Smoothness.
    grad[:, :-1, :] += -2.0 * cfg.w_smooth * dq
    grad[:, 1:, :] += 2.0 * cfg.w_smooth * dq

    # Joint-limit soft barrier.
    grad += 2.0 * cfg.w_limit * (over - under)

    # Goal terms act on the terminal waypoint only.
    rel_t = p_term[:, None, :] - fk["origins"][:, -1, :, :]
    jlin = _cross3(fk["axes"][:, -1, :, :], rel_t)   # (K, na, 3)
    grad[:, -1, :] += 2.0 * cfg.w_pos * (jlin * e_p[:, None, :]).sum(axis=-1)
    # d||Rc - Rt||_F^2 / dtheta_i = 2 z_i . sum_k col_k(Rc) x (col_k(Rc) - col_k(Rt))
    cols_c = R_term.transpose(0, 2, 1)                # (K, 3cols, 3)
    cols_d = dR.transpose(0, 2, 1)
    vec = _cross3(cols_c, cols_d).sum(axis=1)        # (K, 3)
    grad[:, -1, :] += 2.0 * cfg.w_rot * (fk["axes"][:, -1, :, :] * vec[:, None, :]).sum(axis=-1)

    grad[:, 0, :] = 0.0
    return cost, grad, extras


def _max_penetration(model, scene, Q, hand_centers, hand_radii):
    fk = fk_arm_batch(model, Q)
    links, arm_centers, arm_radii, _ = _arm_sphere_meta(model)
    arm_x = quat_rotate(fk["link_q"][:, :, links, :], arm_centers) + fk["link_t"][:, :, links, :]
    hand_x = (
        quat_rotate(fk["palm_q"][:, :, None, :], hand_centers[:, None, :, :])
        + fk["palm_t"][:, :, None, :]
    )
    x = np.concatenate([arm_x, hand_x], axis=2)
    shapes = scene.shapes()
    if shapes:
        d = sdf(shapes[0], x)
        for obs in shapes[1:]:
            d = np.minimum(d, sdf(obs, x))
    else:
        d = np.full(x.shape[:-1], np.inf)
    radii = np.concatenate([arm_radii, hand_radii])
    pen = np.maximum(0.0, radii - d)
    return pen.max(axis=(1, 2))


def plan_batch(model: RobotModel, scene: Scene, start: JointConfig,
               targets: list[PlanTarget], cfg: PlannerConfig = PlannerConfig(),
               seed: int = 0) -> list[Trajectory]:
    """Plan K trajectories to K palm targets simultaneously.

    Failed or non-converged elements are returned with diagnostics, never
    dropped. `seed` is accepted for interface stability; the optimizer is
    fully deterministic and does not consume randomness.
    """
    del seed
    if len(targets) == 0:
        raise ValueError("plan_batch requires at least one target")
    K = len(targets)
    W = cfg.waypoints
    na = model.n_arm
    lo, hi = model.arm_limits()
    hand_lo, hand_hi = model.hand_limits()

    valid = np.ones(K, dtype=bool)
    for i, tgt in enumerate(targets):
        if not (np.all(np.isfinite(tgt.pose.t)) and np.all(np.isfinite(tgt.pose.q))
                and np.all(np.isfinite(tgt.theta_p))):
            valid[i] = False

    target_t = np.stack([t.pose.t if valid[i] else np.zeros(3) for i, t in enumerate(targets)])
    target_q = np.stack([
        t.pose.q if valid[i] else np.array([1.0, 0.0, 0.0, 0.0])
        for i, t in enumerate(targets)
    ])
    target_R = np.stack([
        quat_to_matrix(t.pose.q) if valid[i] else np.eye(3) for i, t in enumerate(targets)
    ])

    # Batched IK warm start and linear-interpolation initialization.
    Q = np.empty((K, W, na))
    alphas = np.linspace(0.0, 1.0, W)
    start_arm = np.clip(start.arm, lo, hi)
    vidx = np.flatnonzero(valid)
    Q[~valid] = start_arm
    if vidx.size:
        warm = _warm_start_batch(model, start, target_t[vidx], target_q[vidx], cfg)
        Q[vidx] = start_arm[None, None, :] + alphas[None, :, None] * (
            warm[:, None, :] - start_arm[None, None, :])
    hand_centers = []
    hand_radii = None
    for i, tgt in enumerate(targets):
        theta = np.clip(tgt.theta_p, hand_lo, hand_hi) if valid[i] else np.clip(
            np.zeros(model.n_hand), hand_lo, hand_hi)
        c, r = _hand_geometry(model, theta)
        hand_centers.append(c)
        hand_radii = r
    hand_centers = np.stack(hand_centers)

    rot_thresh = np.radians(cfg.rot_threshold_deg)
    converged_at = np.full(K, cfg.iterations, dtype=int)
    seen = np.zeros(K, dtype=bool)
    # Elements freeze once they meet the pose thresholds with no collision
    # violation, or once their cost stops improving: per-element decisions,
    # so batch independence is preserved.
    active = valid.copy()
    vel = np.zeros_like(Q)
    best_cost = np.full(K, np.inf)
    since_improve = np.zeros(K, dtype=int)

    for it in range(cfg.iterations):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        cost, grad, extras = _cost_and_grad(
            model, scene, Q[idx], target_t[idx], target_R[idx],
            hand_centers[idx], hand_radii, cfg)

        # Convergence check on the current state (post-step of the previous
        # iteration), reusing FK/SDF work from the gradient evaluation.
        pos_err = np.linalg.norm(extras["term_t"] - target_t[idx], axis=-1)
        m_rel = np.matmul(
            quat_to_matrix(extras["term_q"]).transpose(0, 2, 1), target_R[idx]
        )
        rot_err = np.abs(_euler_xyz_batch(m_rel))
        ok = (pos_err <= cfg.pos_threshold) & np.all(rot_err <= rot_thresh, axis=-1)
        newly_idx = idx[ok & ~seen[idx]]
        converged_at[newly_idx] = it
        seen[newly_idx] = True

        improved = cost < best_cost[idx] * (1.0 - 1e-3)
        best_cost[idx] = np.where(improved, cost, best_cost[idx])
        since_improve[idx] = np.where(improved, 0, since_improve[idx] + 1)
        stalled = since_improve[idx] >= cfg.stall_iters

        frozen = (ok & (extras["max_pen"] <= 0.0)) | stalled
        active[idx[frozen]] = False

        live = ~frozen
        sub = idx[live]
        if sub.size == 0:
            continue
        g = grad[live]
        norms = np.linalg.norm(g, axis=-1, keepdims=True)
        scale = np.minimum(1.0, cfg.grad_clip / np.maximum(norms, 1e-12))
        step = cfg.momentum * vel[sub] + cfg.step_size * g * scale
        Qa = np.clip(Q[sub] - step, lo, hi)
        Qa[:, 0, :] = start_arm
        vel[sub] = Q[sub] - Qa          # realized displacement after clamping
        Q[sub] = Qa

    fk_term = fk_arm_batch(model, Q[:, -1, :])
    max_pen = _max_penetration(model, scene, Q, hand_centers, hand_radii)

    out = []
    for i, tgt in enumerate(targets):
        if valid[i]:
            cur = Pose(fk_term["palm_q"][i], fk_term["palm_t"][i])
            p_err, r_err = pose_error(cur, tgt.pose)
            diag = Diagnostics(
                pos_err=p_err, rot_err=r_err, max_penetration=float(max_pen[i]),
                converged_iterations=int(converged_at[i]) if seen[i] else cfg.iterations,
                invalid=False,
            )
        else:
            diag = Diagnostics(pos_err=float("inf"), rot_err=np.full(3, np.inf),
                               max_penetration=0.0, converged_iterations=cfg.iterations,
                               invalid=True)
        vel = np.zeros_like(Q[i])
        vel[1:] = Q[i, 1:] - Q[i, :-1]
        theta = np.clip(tgt.theta_p, hand_lo, hand_hi) if valid[i] else np.zeros(model.n_hand)
        out.append(Trajectory(waypoints=Q[i].copy(), hand=theta,
                              velocities=vel, diagnostics=diag))
    return out


def passes_thresholds(traj: Trajectory, cfg: PlannerConfig) -> bool:
    """Position within pos_threshold and every rotation axis within
    rot_threshold_deg; invalid elements never pass."""
    d = traj.diagnostics
    if d.invalid:
        return False
    return bool(d.pos_err <= cfg.pos_threshold
                and np.all(d.rot_err <= np.radians(cfg.rot_threshold_deg)))
