"""Labelled grasp-attempt generation.

For each procedural scene: render a partial cloud, propose heuristic grasp
targets around the object, compute a closed-hand contact configuration per
target, plan trajectories to all targets in one batch, execute each plan
quasi-statically, and record one labelled attempt per target (failures
included).

Dataset layout (one directory):
    records.jsonl       one JSON object per attempt
    clouds/<seed>.xyz   partial cloud of scene <seed>, object frame
    meta.json           parameters, counts, content hash
"""

from __future__ import annotations

import hashlib
import json
from types import SimpleNamespace
from pathlib import Path

import numpy as np

from .geometry import (
    EmptyCloudError,
    Scene,
    Shape,
    _surface_along,
    render_partial_cloud,
    save_cloud,
    sample_scene,
    sdf,
    sdf_grad,
)
from .grasp_models import Grasp, vectorize
from .kinematics import (
    JointConfig,
    RobotModel,
    fk_arm_batch,
    hand_frames,
    open_hand_preshape,
)
from .pipeline import CONTACT_TOL, PENETRATION_TOL, execute_grasp
from .planner import PlannerConfig, PlanTarget, _ik_batch, plan_batch
from .se3 import Pose, _cross3, compose, inverse, quat_from_matrix, quat_rotate

CENTER_DEPTH = 0.18      # m, palm origin to object center along the approach
MIN_STANDOFF = 0.04      # m, palm origin never closer to the aimed surface point
MAX_STANDOFF = 0.16
APPROACH_JITTER = 0.15   # rad, cone half-angle around each canonical approach
ROLL_JITTER = 0.15       # rad, jitter around each canonical roll
PRESHAPE_FLEXION = -0.1  # splayed start so the pinch crossing is in the sweep
PRESHAPE_JITTER = 0.1    # rad, uniform preshape perturbation
AIM_JITTER = 0.025       # m, uniform palm-position perturbation per axis
OVERSAMPLE = 4           # candidate draws per returned heuristic target
UNREACHABLE_POS = 0.05   # m, terminal position error that counts as a non-plan

# Faster planning profile for bulk generation: fewer waypoints/iterations than
# the planner's conservative defaults, enough for desk-scale reaches.
FAST_PLANNER = PlannerConfig(waypoints=16, iterations=60)

FAILURE_REASONS = ("none", "unreachable", "collision", "insufficient_contacts",
                   "no_thumb", "no_opposition")


def _approach_frame(approach: np.ndarray, roll: float) -> np.ndarray:
    """Rotation whose +z column is `approach`, rolled about it."""
    a = approach / np.linalg.norm(approach)
    h = np.array([0.0, 0.0, 1.0]) if abs(a[2]) < 0.9 else np.array([1.0, 0.0, 0.0])
    x = np.cross(h, a)
    x /= np.linalg.norm(x)
    y = np.cross(a, x)
    cr, sr = np.cos(roll), np.sin(roll)
    return np.stack([cr * x + sr * y, -sr * x + cr * y, a], axis=1)


def heuristic_targets(scene: Scene, model: RobotModel, k: int, seed: int = 0,
                      standoff: float | None = None,
                      aim_jitter: float | None = None) -> list[tuple[Pose, np.ndarray]]:
    """k candidate (palm pose, preshape) pairs in the object frame.

    Approach directions are drawn on the sphere with an upper-hemisphere
    bias and aimed at the surface point along each direction. With
    standoff=None (default) the palm stands off so the object center sits
    near CENTER_DEPTH along the approach — where the closing fingertips
    converge — and the aim is jittered; an explicit standoff is honored
    exactly (no jitter unless requested). Roll about the approach axis is
    uniform; the preshape is jittered around the splayed open hand.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    rng = np.random.default_rng(seed)
    obj = scene.object
    local = Shape(obj.kind, obj.params, Pose.identity())
    if aim_jitter is None:
        aim_jitter = AIM_JITTER if standoff is None else 0.0
    theta0 = open_hand_preshape(model, flexion=PRESHAPE_FLEXION)
    # Canonical approach directions (in the object frame): straight down and
    # four 45-degree diagonals. Together with four canonical rolls this keeps
    # the grasp distribution a mixture of tight modes that a desk-scale
    # generator can actually learn, while preserving enough diversity that
    # blocked scenes leave alternatives.
    s2 = 1.0 / np.sqrt(2.0)
    canonical = np.array([
        [0.0, 0.0, -1.0],
        [-s2, 0.0, -s2], [s2, 0.0, -s2], [0.0, -s2, -s2], [0.0, s2, -s2],
    ])
    rolls = np.array([0.0, 0.5 * np.pi, np.pi, 1.5 * np.pi])
    cands = []
    for _ in range(OVERSAMPLE * k):
        down = canonical[rng.integers(len(canonical))]
        jit = rng.normal(scale=APPROACH_JITTER, size=3)
        d = down + jit - down * (down @ jit)   # jitter transverse to the axis
        d /= np.linalg.norm(d)
        u = -d                                 # outward direction from center
        roll = float(rolls[rng.integers(len(rolls))]
                     + rng.uniform(-ROLL_JITTER, ROLL_JITTER))
        surf = _surface_along(local, u[None, :])[0]
        if standoff is None:
            d = float(np.clip(CENTER_DEPTH - np.linalg.norm(surf),
                              MIN_STANDOFF, MAX_STANDOFF))
        else:
            d = standoff
        t = surf + d * u
        if aim_jitter > 0:
            t = t + rng.uniform(-aim_jitter, aim_jitter, 3)
        pose = Pose(q=quat_from_matrix(_approach_frame(-u, roll)), t=t)
        theta_p = theta0 + rng.uniform(-PRESHAPE_JITTER, PRESHAPE_JITTER,
                                       model.n_hand)
        cands.append((pose, theta_p))

    # Many sampled palm orientations are kinematically infeasible for the
    # arm or park it inside the table/shelf; prefer candidates whose quick
    # batched IK solve both reaches the pose and keeps the body clear of
    # obstacles, so planning effort is spent where it can pay off.
    world = [compose(scene.object_pose, p) for p, _ in cands]
    q_sol = _ik_batch(model, np.zeros((len(world), model.n_arm)),
                      np.stack([w.t for w in world]),
                      np.stack([w.q for w in world]), iters=60, damping=0.1)
    fk = fk_arm_batch(model, q_sol)
    reach = np.linalg.norm(fk["palm_t"] - np.stack([w.t for w in world]),
                           axis=-1) <= 0.01
    clear = _obstacle_clear(scene, model, fk, theta0)
    order = sorted(range(len(cands)),
                   key=lambda i: (not (reach[i] and clear[i]), not reach[i], i))
    return [cands[i] for i in order[:k]]


def _obstacle_clear(scene: Scene, model: RobotModel, fk: dict,
                    theta: np.ndarray, tol: float = 0.005) -> np.ndarray:
    """Per-element flags: no body sphere penetrates any obstacle beyond tol
    at the given batched arm FK (hand spheres taken at preshape `theta`)."""
    from .planner import _arm_sphere_meta, _hand_geometry
    links, ac, ar, _ = _arm_sphere_meta(model)
    hc, hr = _hand_geometry(model, theta)
    arm_x = quat_rotate(fk["link_q"][..., links, :], ac) + fk["link_t"][..., links, :]
    hand_x = quat_rotate(fk["palm_q"][..., None, :], hc) + fk["palm_t"][..., None, :]
    x = np.concatenate([arm_x, hand_x], axis=-2)
    radii = np.concatenate([ar, hr])
    pen = np.zeros(x.shape[:-1])
    for obs in scene.obstacles:
        pen = np.maximum(pen, radii - sdf(obs, x))
    return pen.max(axis=-1) <= tol


def contact_config_at_palm(obj: Shape, model: RobotModel, palm: Pose,
                           theta_p: np.ndarray, tol: float = CONTACT_TOL,
                           iters: int = 60, max_step: float = 0.15) -> np.ndarray:
    """Closed-hand configuration: per-finger Gauss-Newton descent of the
    fingertip SDF toward the surface of `obj` (world frame), palm fixed.

    Batched over leading axes: palm.q is (..., 4), palm.t (..., 3) and
    theta_p (..., n_hand); returns (..., n_hand). Each finger stops when
    |sdf| <= tol or at its joint limits; fingers that cannot reach return
    their nearest-approach configuration. Every update is elementwise per
    batch element, so results do not depend on how a batch is grouped.
    """
    lo, hi = model.hand_limits()
    F, J = model.n_fingers, model.joints_per_finger
    theta = np.asarray(theta_p, dtype=float).copy()
    batch = theta.shape[:-1]
    pq = np.broadcast_to(palm.q, batch + (4,))[..., None, :]      # over F
    pt = np.broadcast_to(palm.t, batch + (3,))[..., None, :]
    best = theta.reshape(batch + (F, J)).copy()
    best_d = np.full(batch + (F,), np.inf)
    done = np.zeros(batch + (F,), dtype=bool)

    def track_best(cur_theta, d):
        closer = np.abs(d) < best_d
        best_d[closer] = np.abs(d)[closer]
        best[closer] = cur_theta.reshape(batch + (F, J))[closer]

    for _ in range(iters):
        frames = hand_frames(model, theta)
        tips = quat_rotate(pq, frames["tip_t"]) + pt              # (..., F, 3)
        d = sdf(obj, tips)                                        # (..., F)
        track_best(theta, d)
        done |= np.abs(d) <= tol
        if done.all():
            break
        g = sdf_grad(obj, tips)                                   # (..., F, 3)
        # Fingertip Jacobian columns per finger joint, in world frame.
        rel = tips[..., :, None, :] - (
            quat_rotate(pq[..., None, :], frames["origins"]) + pt[..., None, :]
        )                                                         # (..., F, J, 3)
        axes = quat_rotate(pq[..., None, :], frames["axes"])
        jac = _cross3(axes, rel)
        jtg = (jac * g[..., None, :]).sum(axis=-1)                # (..., F, J)
        denom = (jtg * jtg).sum(axis=-1) + 1e-9
        step = -(d / denom)[..., None] * jtg                      # Gauss-Newton
        step = np.clip(step, -max_step, max_step)
        step[done] = 0.0
        theta = np.clip(theta + step.reshape(batch + (F * J,)), lo, hi)
    frames = hand_frames(model, theta)
    tips = quat_rotate(pq, frames["tip_t"]) + pt
    track_best(theta, sdf(obj, tips))
    return best.reshape(batch + (F * J,))


def plan_contact_config(scene: Scene, model: RobotModel, q: JointConfig,
                        theta_p: np.ndarray | None = None,
                        tol: float = CONTACT_TOL) -> np.ndarray:
    """Closed-hand configuration with the arm held at q (world frame)."""
    fk = fk_arm_batch(model, q.arm)
    palm = Pose(q=fk["palm_q"], t=fk["palm_t"])
    if theta_p is None:
        theta_p = q.hand
    return contact_config_at_palm(scene.object, model, palm, theta_p, tol=tol)


def label_attempt(scene: Scene, model: RobotModel, traj, grasp: Grasp) -> tuple[int, str]:
    """Outcome of executing one planned trajectory's terminal grasp."""
    diag = traj.diagnostics
    if diag.invalid or diag.pos_err > UNREACHABLE_POS:
        return 0, "unreachable"
    if diag.max_penetration > PENETRATION_TOL:
        return 0, "collision"
    ok, reason = execute_grasp(scene, model, traj.waypoints[-1], grasp)
    return int(ok), reason


def scene_records(scene_seed: int, model: RobotModel, *,
                  grasps_per_scene: int = 32, difficulty: str = "medium",
                  shelf_prob: float = 0.5, n_rays: int = 4096,
                  planner_cfg: PlannerConfig = FAST_PLANNER):
    """All attempts for one scene: (scene, cloud, record dicts) or None if
    the render produced no object points."""
    scene = sample_scene(scene_seed, difficulty=difficulty, shelf_prob=shelf_prob)
    try:
        cloud = render_partial_cloud(scene, n_rays=n_rays, seed=scene_seed)
    except EmptyCloudError:
        return None
    proposals = heuristic_targets(scene, model, grasps_per_scene, seed=scene_seed)

    t_ro = scene.object_pose
    inv_ro = inverse(t_ro)
    palms = [compose(t_ro, pose) for pose, _ in proposals]
    palm_batch = SimpleNamespace(q=np.stack([p.q for p in palms]),
                                 t=np.stack([p.t for p in palms]))
    theta_g_all = contact_config_at_palm(
        scene.object, model, palm_batch,
        np.stack([th for _, th in proposals]))
    grasps, targets = [], []
    for (pose, theta_p), palm_world, theta_g in zip(proposals, palms, theta_g_all):
        grasps.append(Grasp(pose=pose, theta_p=theta_p, theta_g=theta_g))
        targets.append(PlanTarget(pose=palm_world, theta_p=theta_p))

    start = JointConfig(arm=np.zeros(model.n_arm), hand=open_hand_preshape(model))
    trajs = plan_batch(model, scene, start, targets, planner_cfg, seed=scene_seed)

    records = []
    for i, (traj, g) in enumerate(zip(trajs, grasps)):
        if traj.diagnostics.invalid:
            achieved = g
        else:
            fk = fk_arm_batch(model, traj.waypoints[-1])
            achieved = Grasp(pose=compose(inv_ro, Pose(q=fk["palm_q"], t=fk["palm_t"])),
                             theta_p=g.theta_p, theta_g=g.theta_g)
        label, reason = label_attempt(scene, model, traj, achieved)
        records.append({
            "scene_seed": scene_seed,
            "grasp_seed": i,
            "tag": scene.tag,
            "cloud": f"clouds/{scene_seed}.xyz",
            "grasp": vectorize(achieved).tolist(),
            "label": label,
            "failure_reason": reason,
        })
    return scene, cloud, records


def generate_dataset(out_dir, model: RobotModel, *, n_scenes: int = 640,
                     grasps_per_scene: int = 32, seed: int = 0,
                     difficulty: str = "medium", shelf_prob: float = 0.5,
                     n_rays: int = 4096, jobs: int = 1,
                     planner_cfg: PlannerConfig = FAST_PLANNER,
                     extra_meta: dict | None = None) -> dict:
    """Write a labelled dataset under out_dir; returns the meta dict.

    Scene seeds are seed..seed+n_scenes-1; records are written in scene-seed
    order regardless of job count, so the output bytes depend only on the
    arguments.
    """
    out = Path(out_dir)
    (out / "clouds").mkdir(parents=True, exist_ok=True)
    seeds = list(range(seed, seed + n_scenes))
    args = [(s, model, grasps_per_scene, difficulty, shelf_prob, n_rays, planner_cfg)
            for s in seeds]

    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_scene_worker, args, chunksize=2))
    else:
        results = [_scene_worker(a) for a in args]

    n_attempts = n_pos = 0
    h = hashlib.sha256()
    with open(out / "records.jsonl", "w") as f:
        for res in results:
            if res is None:
                continue
            scene, cloud, records = res
            save_cloud(cloud, out / records[0]["cloud"])
            for r in records:
                line = json.dumps(r, sort_keys=True)
                f.write(line + "\n")
                h.update(line.encode())
                n_attempts += 1
                n_pos += r["label"]

    meta = {
        "n_scenes": n_scenes,
        "grasps_per_scene": grasps_per_scene,
        "seed": seed,
        "difficulty": difficulty,
        "shelf_prob": shelf_prob,
        "n_rays": n_rays,
        "n_attempts": n_attempts,
        "n_positive": n_pos,
        "positive_rate": (n_pos / n_attempts) if n_attempts else 0.0,
        "records_sha256": h.hexdigest(),
    }
    if extra_meta:
        meta.update(extra_meta)
    with open(out / "meta.json", "w") as f:
        json.dump(meta, f, sort_keys=True, indent=2)
    return meta


def _scene_worker(args):
    s, model, gps, difficulty, shelf_prob, n_rays, planner_cfg = args
    return scene_records(s, model, grasps_per_scene=gps, difficulty=difficulty,
                         shelf_prob=shelf_prob, n_rays=n_rays,
                         planner_cfg=planner_cfg)


def load_dataset(path):
    """(records list, clouds dict scene_seed -> (N,3) points)."""
    from .geometry import load_cloud

    root = Path(path)
    records = []
    with open(root / "records.jsonl") as f:
        for line in f:
            records.append(json.loads(line))
    clouds = {}
    for r in records:
        s = r["scene_seed"]
        if s not in clouds:
            clouds[s] = load_cloud(root / r["cloud"]).points
    return records, clouds
