"""Grasp pipelines: plan-first-then-score vs score-first-then-plan.

`run_plan_first` plans trajectories to every candidate at once, scores the
*achieved* terminal grasps with the evaluator, and executes the argmax —
candidate targets are only ever used by the planner, never scored.
`run_score_first` is the traditional ordering: score the intended grasps,
plan to them one at a time (best first), and execute the first plan that
meets the accuracy thresholds, giving up after `max_attempts`.

Execution is simulated quasi-statically: the hand closes along a cubic
profile toward the grasp's closed configuration, each finger stopping where
its fingertip first meets the object surface (fingers cannot pass through
matter), and the settled state is adjudicated with geometric rules (thumb
plus an opposing contact, no deep non-fingertip penetration of the object).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bps import BasisSet
from .geometry import (
    ContactReport,
    EmptyCloudError,
    Scene,
    fingertip_contacts,
    render_partial_cloud,
    sdf,
)
from .grasp_models import (
    Grasp,
    encode_centered,
    evaluate_batch,
    generate,
    vectorize,
)
from .kinematics import (
    JointConfig,
    RobotModel,
    fk_arm_batch,
    hand_frames,
    sphere_centers_world,
)
from .neural import Mlp
from .planner import (
    PlannerConfig,
    PlanTarget,
    Trajectory,
    passes_thresholds,
    plan_batch,
)
from .se3 import Pose, compose, inverse, quat_rotate

CONTACT_TOL = 0.005      # m, fingertip-on-surface band
PENETRATION_TOL = 0.01   # m, max allowed non-fingertip object penetration
ANTIPODAL_DOT = -0.3     # opposing-normal threshold
CLOSE_STEPS = 25


@dataclass
class PipelineResult:
    """Outcome of one pipeline run, with a flat per-candidate table."""

    method: str                       # "plan_first" | "score_first"
    chosen_index: int                 # -1 when nothing was executed
    executed: bool
    trajectory: Trajectory | None
    terminal_grasp: Grasp | None      # object frame
    predicted_success: float
    actual_success: bool
    failure_reason: str               # "none" on success
    planner_attempts: int
    candidates: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = None
        if self.trajectory is not None:
            diag = self.trajectory.diagnostics
            d = {
                "pos_err": float(diag.pos_err),
                "rot_err": [float(r) for r in diag.rot_err],
                "max_penetration": float(diag.max_penetration),
                "converged_iterations": int(diag.converged_iterations),
            }
        return {
            "method": self.method,
            "chosen_index": self.chosen_index,
            "executed": self.executed,
            "diagnostics": d,
            "terminal_grasp": (vectorize(self.terminal_grasp).tolist()
                               if self.terminal_grasp is not None else None),
            "predicted_success": self.predicted_success,
            "actual_success": self.actual_success,
            "failure_reason": self.failure_reason,
            "planner_attempts": self.planner_attempts,
            "candidates": self.candidates,
        }


def close_hand(theta_p: np.ndarray, theta_g: np.ndarray, steps: int) -> np.ndarray:
    """Hand-closing joint trajectory: per-joint cubic with zero endpoint
    velocities, sampled at `steps` points including both endpoints."""
    if steps < 2:
        raise ValueError("closing trajectory needs at least 2 samples")
    theta_p = np.asarray(theta_p, dtype=float)
    theta_g = np.asarray(theta_g, dtype=float)
    s = np.linspace(0.0, 1.0, steps)
    blend = s * s * (3.0 - 2.0 * s)
    return theta_p + (theta_g - theta_p) * blend[:, None]


def settle_hand(obj, model: RobotModel, palm: Pose, theta_p: np.ndarray,
                theta_g: np.ndarray, steps: int = CLOSE_STEPS,
                band: float = 1e-3) -> np.ndarray:
    """Hand configuration after closing from theta_p toward theta_g with the
    palm held at `palm` (world frame): each finger sweeps its cubic closing
    profile and stops where its fingertip first reaches the surface of `obj`
    (fingers cannot pass through matter), refined by bisection to sit within
    `band` of the surface. Fingers that never reach the surface end at
    theta_g. Fingers are kinematically independent, so the sweep is exact
    per finger.
    """
    F, J = model.n_fingers, model.joints_per_finger
    path = close_hand(theta_p, theta_g, steps)                 # (S, n_hand)
    frames = hand_frames(model, path)
    tips = quat_rotate(palm.q, frames["tip_t"]) + palm.t       # (S, F, 3)
    d = sdf(obj, tips)                                         # (S, F)
    inside = d <= 0.0
    out = np.asarray(theta_g, dtype=float).copy()
    delta = np.asarray(theta_g, dtype=float) - np.asarray(theta_p, dtype=float)
    for f in range(F):
        if inside[0, f] or not inside[:, f].any():
            # already touching at the preshape, or free for the whole sweep
            if inside[0, f]:
                out[f * J:(f + 1) * J] = path[0, f * J:(f + 1) * J]
            continue
        k = int(np.argmax(inside[:, f]))                       # first crossing
        s_lo, s_hi = (k - 1) / (steps - 1), k / (steps - 1)
        sl = f * J
        theta = path[k - 1].copy()
        for _ in range(30):
            s = 0.5 * (s_lo + s_hi)
            blend = s * s * (3.0 - 2.0 * s)
            theta[sl:sl + J] = (np.asarray(theta_p, dtype=float)[sl:sl + J]
                                + delta[sl:sl + J] * blend)
            tip = quat_rotate(palm.q, hand_frames(model, theta)["tip_t"][f]) + palm.t
            dist = float(sdf(obj, tip))
            if 0.0 <= dist <= band:
                break
            if dist < 0.0:
                s_hi = s
            else:
                s_lo = s
        if dist < 0.0:  # land on the outside end of the bracket
            blend = s_lo * s_lo * (3.0 - 2.0 * s_lo)
            theta[sl:sl + J] = (np.asarray(theta_p, dtype=float)[sl:sl + J]
                                + delta[sl:sl + J] * blend)
        out[sl:sl + J] = theta[sl:sl + J]
    return out


def adjudicate_grasp(scene: Scene, model: RobotModel,
                     q: JointConfig,
                     tol: float = CONTACT_TOL) -> tuple[bool, str, ContactReport]:
    """Quasi-static grasp verdict at a full robot configuration.

    Success requires at least two fingertips on the object surface with the
    thumb among them, an opposing pair of contact normals, and no
    non-fingertip collision sphere buried deeper than PENETRATION_TOL in
    the object. Returns (success, failure_reason, contact report) with
    reason "none" on success.
    """
    report = fingertip_contacts(scene, model, q, tol=tol)
    if report.contact.sum() < 2:
        return False, "insufficient_contacts", report
    if not report.contact[model.thumb_index]:
        return False, "no_thumb", report
    cn = report.normals[report.contact]
    if not np.any(cn @ cn.T <= ANTIPODAL_DOT):
        return False, "no_opposition", report
    centers, radii, tips = sphere_centers_world(model, q)
    pen = radii - sdf(scene.object, centers)
    if np.any(pen[~tips] > PENETRATION_TOL):
        return False, "collision", report
    return True, "none", report


def execute_grasp(scene: Scene, model: RobotModel, arm_q: np.ndarray,
                  grasp: Grasp) -> tuple[bool, str]:
    """Close the hand from the preshape toward theta_g, fingers stopping at
    the object surface, and adjudicate the settled configuration."""
    fk = fk_arm_batch(model, np.asarray(arm_q, dtype=float))
    palm = Pose(q=fk["palm_q"], t=fk["palm_t"])
    settled = settle_hand(scene.object, model, palm, grasp.theta_p, grasp.theta_g)
    q = JointConfig(arm=arm_q, hand=settled)
    ok, reason, _ = adjudicate_grasp(scene, model, q)
    return ok, reason


def _prepare(scene: Scene, basis: BasisSet, gen_net: Mlp, model: RobotModel,
             k: int, seed: int, n_rays: int, sigma_scale: float = 1.0):
    """Shared front end: render, encode, sample candidates (object frame)."""
    s_cloud, s_gen = np.random.SeedSequence(seed).generate_state(2)
    cloud = render_partial_cloud(scene, n_rays=n_rays, seed=int(s_cloud))
    enc, centroid = encode_centered(basis, cloud)
    cands = generate(gen_net, enc, centroid, k, seed=int(s_gen),
                     theta_limits=model.hand_limits(), sigma_scale=sigma_scale)
    return enc, centroid, cands


def _terminal_palm(model: RobotModel, traj: Trajectory) -> Pose:
    fk = fk_arm_batch(model, traj.waypoints[-1])
    return Pose(q=fk["palm_q"], t=fk["palm_t"])


def _diag_row(traj: Trajectory | None) -> dict:
    if traj is None or traj.diagnostics.invalid:
        return {"pos_err": None, "rot_err": None, "max_penetration": None}
    d = traj.diagnostics
    return {
        "pos_err": float(d.pos_err),
        "rot_err": [float(r) for r in d.rot_err],
        "max_penetration": float(d.max_penetration),
    }


def _failed(method: str, reason: str, attempts: int = 0,
            candidates: list[dict] | None = None) -> PipelineResult:
    return PipelineResult(
        method=method, chosen_index=-1, executed=False, trajectory=None,
        terminal_grasp=None, predicted_success=float("nan"),
        actual_success=False, failure_reason=reason,
        planner_attempts=attempts, candidates=candidates or [])


def run_plan_first(scene: Scene, model: RobotModel, basis: BasisSet,
                   gen_net: Mlp, ev_net: Mlp, start: JointConfig,
                   k: int = 32, seed: int = 0,
                   cfg: PlannerConfig = PlannerConfig(),
                   n_rays: int = 4096, sigma_scale: float = 1.0) -> PipelineResult:
    """Plan to all k candidates in one batch, score what the plans actually
    reach, and execute the best-scoring terminal grasp (no threshold gate)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    try:
        enc, centroid, cands = _prepare(scene, basis, gen_net, model, k, seed,
                                        n_rays, sigma_scale)
    except EmptyCloudError:
        return _failed("plan_first", "empty_cloud")

    t_ro = scene.object_pose
    inv_ro = inverse(t_ro)
    targets = [PlanTarget(pose=compose(t_ro, c.pose), theta_p=c.theta_p)
               for c in cands]
    trajs = plan_batch(model, scene, start, targets, cfg, seed=seed)

    # Terminal grasps: achieved palm pose back in the object frame, paired
    # with the original closed configuration.
    achieved: list[Grasp | None] = []
    for traj, cand in zip(trajs, cands):
        if traj.diagnostics.invalid:
            achieved.append(None)
            continue
        palm = _terminal_palm(model, traj)
        achieved.append(Grasp(pose=compose(inv_ro, palm),
                              theta_p=cand.theta_p, theta_g=cand.theta_g))
    valid = [i for i, g in enumerate(achieved) if g is not None]
    if not valid:
        return _failed("plan_first", "no_valid_plan", attempts=1)

    scores = np.full(k, -np.inf)
    scores[valid] = evaluate_batch(ev_net, enc, centroid,
                                   [achieved[i] for i in valid])
    candidates = [
        {"target": vectorize(c).tolist(),
         "score": (float(scores[i]) if i in valid else None),
         **_diag_row(trajs[i])}
        for i, c in enumerate(cands)
    ]
    best = int(np.argmax(scores))
    traj, grasp = trajs[best], achieved[best]
    success, reason = execute_grasp(scene, model, traj.waypoints[-1], grasp)
    return PipelineResult(
        method="plan_first", chosen_index=best, executed=True,
        trajectory=traj, terminal_grasp=grasp,
        predicted_success=float(scores[best]), actual_success=success,
        failure_reason=reason, planner_attempts=1, candidates=candidates)


def run_score_first(scene: Scene, model: RobotModel, basis: BasisSet,
                    gen_net: Mlp, ev_net: Mlp, start: JointConfig,
                    k: int = 32, seed: int = 0,
                    cfg: PlannerConfig = PlannerConfig(),
                    max_attempts: int = 3,
                    n_rays: int = 4096, sigma_scale: float = 1.0) -> PipelineResult:
    """Score the intended grasps, then plan best-first; execute the first
    plan that meets the accuracy thresholds."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if max_attempts < 1:
        raise ValueError("max_attempts must be >= 1")
    try:
        enc, centroid, cands = _prepare(scene, basis, gen_net, model, k, seed,
                                        n_rays, sigma_scale)
    except EmptyCloudError:
        return _failed("score_first", "empty_cloud")

    scores = evaluate_batch(ev_net, enc, centroid, cands)
    order = np.argsort(-scores, kind="stable")
    t_ro = scene.object_pose
    inv_ro = inverse(t_ro)
    candidates = [
        {"target": vectorize(c).tolist(), "score": float(scores[i]),
         **_diag_row(None)}
        for i, c in enumerate(cands)
    ]

    attempts = 0
    for i in order[:max_attempts]:
        i = int(i)
        cand = cands[i]
        attempts += 1
        target = PlanTarget(pose=compose(t_ro, cand.pose), theta_p=cand.theta_p)
        traj = plan_batch(model, scene, start, [target], cfg, seed=seed)[0]
        candidates[i].update(_diag_row(traj))
        if traj.diagnostics.invalid or not passes_thresholds(traj, cfg):
            continue
        grasp = Grasp(pose=compose(inv_ro, _terminal_palm(model, traj)),
                      theta_p=cand.theta_p, theta_g=cand.theta_g)
        success, reason = execute_grasp(scene, model, traj.waypoints[-1], grasp)
        return PipelineResult(
            method="score_first", chosen_index=i, executed=True,
            trajectory=traj, terminal_grasp=grasp,
            predicted_success=float(scores[i]), actual_success=success,
            failure_reason=reason, planner_attempts=attempts,
            candidates=candidates)

    return _failed("score_first", "no_plan", attempts=attempts,
                   candidates=candidates)
