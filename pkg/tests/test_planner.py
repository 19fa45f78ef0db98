"""Tests for the batched trajectory planner, IK warm start, and thresholds."""

import numpy as np
import pytest

from planfirst.geometry import Camera, Scene, Shape, sample_scene
from planfirst.kinematics import fk_arm_batch, open_hand_preshape
from planfirst.planner import (
    PlannerConfig,
    PlanTarget,
    Trajectory,
    _cost_and_grad,
    _hand_geometry,
    ik_warm_start,
    passes_thresholds,
    plan_batch,
    save_trajectory,
)
from planfirst.se3 import Pose

from conftest import random_arm_configs

FAST = PlannerConfig(waypoints=16, iterations=60)


def _empty_scene():
    obj = Shape("sphere", [0.03],
                Pose(q=np.array([1.0, 0, 0, 0]), t=np.array([0.45, 0.0, 0.72])))
    cam = Camera.look_at(np.array([1.2, 0.6, 1.4]), obj.pose.t)
    return Scene(object=obj, obstacles=[], camera=cam, tag="test")


def _palm_pose(model, arm_q):
    fk = fk_arm_batch(model, np.asarray(arm_q)[None])
    return Pose(q=fk["palm_q"][0], t=fk["palm_t"][0])


class TestThresholds:
    def _traj(self, pos_err, rot_err_deg):
        from planfirst.planner import Diagnostics
        d = Diagnostics(pos_err=pos_err,
                        rot_err=np.radians([rot_err_deg] * 3),
                        max_penetration=0.0, converged_iterations=0)
        return Trajectory(waypoints=np.zeros((2, 7)), hand=np.zeros(16),
                          velocities=np.zeros((2, 7)), diagnostics=d)

    def test_pass_and_fail_cases(self):
        cfg = PlannerConfig()
        assert passes_thresholds(self._traj(0.004, 13.0), cfg)
        assert not passes_thresholds(self._traj(0.006, 13.0), cfg)
        assert not passes_thresholds(self._traj(0.004, 15.0), cfg)

    def test_invalid_never_passes(self):
        from planfirst.planner import Diagnostics
        d = Diagnostics(pos_err=0.0, rot_err=np.zeros(3), max_penetration=0.0,
                        converged_iterations=0, invalid=True)
        t = Trajectory(waypoints=np.zeros((2, 7)), hand=np.zeros(16),
                       velocities=np.zeros((2, 7)), diagnostics=d)
        assert not passes_thresholds(t, PlannerConfig())


class TestIkWarmStart:
    def test_fk_constructed_targets_reachable(self, model, home):
        # IK should recover palm poses that FK constructed, most of the time.
        configs = random_arm_configs(model, 40, seed=0, shrink=0.6)
        hits = 0
        for q in configs:
            target = _palm_pose(model, q)
            sol = ik_warm_start(model, home, target)
            err = np.linalg.norm(_palm_pose(model, sol).t - target.t)
            hits += err < 0.01
        assert hits >= 36  # >= 90%

    def test_unreachable_target_returns_finite(self, model, home):
        target = Pose(q=np.array([1.0, 0, 0, 0]), t=np.array([5.0, 5.0, 5.0]))
        sol = ik_warm_start(model, home, target)
        assert np.all(np.isfinite(sol))
        lo, hi = model.arm_limits()
        assert np.all(sol >= lo) and np.all(sol <= hi)

    def test_rejects_zero_iters(self, model, home):
        with pytest.raises(ValueError):
            ik_warm_start(model, home, _palm_pose(model, home.arm), iters=0)


class TestPlanBatch:
    def test_plan_to_start_pose_converges(self, model, home):
        # Target = FK of the start configuration: already solved.
        scene = _empty_scene()
        target = PlanTarget(pose=_palm_pose(model, home.arm), theta_p=home.hand)
        traj = plan_batch(model, scene, home, [target], FAST)[0]
        assert traj.diagnostics.pos_err < 1e-4

    def test_reachable_targets_converge(self, model, home):
        scene = _empty_scene()
        configs = random_arm_configs(model, 8, seed=1, shrink=0.5)
        targets = [PlanTarget(pose=_palm_pose(model, q), theta_p=home.hand)
                   for q in configs]
        trajs = plan_batch(model, scene, home, targets, PlannerConfig())
        n_ok = sum(passes_thresholds(t, PlannerConfig()) for t in trajs)
        assert n_ok >= 7

    def test_batch_grouping_bit_exact(self, model, home):
        # Results must not depend on how many targets are planned together.
        scene = sample_scene(123)
        configs = random_arm_configs(model, 32, seed=2, shrink=0.6)
        targets = [PlanTarget(pose=_palm_pose(model, q), theta_p=home.hand)
                   for q in configs]
        full = plan_batch(model, scene, home, targets, FAST)
        for k in (1, 4):
            parts = []
            for i in range(0, 32, k):
                parts.extend(plan_batch(model, scene, home, targets[i:i + k], FAST))
            for a, b in zip(full, parts):
                assert np.array_equal(a.waypoints, b.waypoints)
                assert a.diagnostics.pos_err == b.diagnostics.pos_err

    def test_empty_batch_rejected(self, model, home):
        with pytest.raises(ValueError):
            plan_batch(model, _empty_scene(), home, [], FAST)

    def test_nonfinite_target_flags_only_that_element(self, model, home):
        scene = _empty_scene()
        good = PlanTarget(pose=_palm_pose(model, home.arm), theta_p=home.hand)
        bad = PlanTarget(pose=Pose(q=np.array([1.0, 0, 0, 0]),
                                   t=np.array([np.nan, 0.0, 0.0])),
                         theta_p=home.hand)
        trajs = plan_batch(model, scene, home, [good, bad, good], FAST)
        assert not trajs[0].diagnostics.invalid
        assert trajs[1].diagnostics.invalid
        assert not trajs[2].diagnostics.invalid
        assert trajs[0].diagnostics.pos_err < 1e-3
        assert np.all(np.isfinite(trajs[1].waypoints))

    def test_blocked_target_reported_not_dropped(self, model, home):
        # A wall between the arm and the target: the planner must return the
        # attempt with honest diagnostics instead of crashing or penetrating.
        obj = Shape("sphere", [0.03],
                    Pose(q=np.array([1.0, 0, 0, 0]), t=np.array([0.55, 0.0, 0.7])))
        wall = Shape("box", [0.01, 0.5, 0.5],
                     Pose(q=np.array([1.0, 0, 0, 0]), t=np.array([0.35, 0.0, 0.9])))
        cam = Camera.look_at(np.array([1.2, 0.6, 1.4]), obj.pose.t)
        scene = Scene(object=obj, obstacles=[wall], camera=cam, tag="blocked")
        target = PlanTarget(
            pose=Pose(q=np.array([0.0, 1.0, 0.0, 0.0]), t=obj.pose.t + [0, 0, 0.08]),
            theta_p=open_hand_preshape(model))
        traj = plan_batch(model, scene, home, [target], PlannerConfig())[0]
        d = traj.diagnostics
        assert np.isfinite(d.pos_err)
        assert d.max_penetration < 1e-3 or d.pos_err > PlannerConfig().pos_threshold

    def test_first_waypoint_is_start(self, model, home):
        scene = _empty_scene()
        q = random_arm_configs(model, 1, seed=3, shrink=0.5)[0]
        traj = plan_batch(model, scene, home,
                          [PlanTarget(pose=_palm_pose(model, q), theta_p=home.hand)],
                          FAST)[0]
        assert np.allclose(traj.waypoints[0], home.arm)

    def test_velocities_are_backward_differences(self, model, home):
        scene = _empty_scene()
        q = random_arm_configs(model, 1, seed=4, shrink=0.5)[0]
        traj = plan_batch(model, scene, home,
                          [PlanTarget(pose=_palm_pose(model, q), theta_p=home.hand)],
                          FAST)[0]
        assert np.array_equal(traj.velocities[0], np.zeros(model.n_arm))
        assert np.allclose(traj.velocities[1:],
                           traj.waypoints[1:] - traj.waypoints[:-1])


class TestCostGradient:
    def test_gradient_matches_finite_differences(self, model, home):
        scene = sample_scene(7)
        cfg = FAST
        rng = np.random.default_rng(5)
        q_goal = random_arm_configs(model, 1, seed=6, shrink=0.5)[0]
        target = _palm_pose(model, q_goal)
        from planfirst.se3 import quat_to_matrix
        W = 8
        alphas = np.linspace(0.0, 1.0, W)
        Q = home.arm[None, :] + alphas[:, None] * (q_goal - home.arm)[None, :]
        Q = Q[None] + rng.normal(scale=0.01, size=(1, W, model.n_arm))
        centers, radii = _hand_geometry(model, open_hand_preshape(model))
        tt = target.t[None]
        tR = quat_to_matrix(target.q)[None]
        _, grad, _ = _cost_and_grad(model, scene, Q, tt, tR, centers[None], radii, cfg)
        eps = 1e-6
        idxs = [(w, j) for w in range(1, W) for j in range(model.n_arm)]
        for i in rng.permutation(len(idxs))[:25]:
            w, j = idxs[int(i)]
            Qp = Q.copy(); Qp[0, w, j] += eps
            Qm = Q.copy(); Qm[0, w, j] -= eps
            cp, _, _ = _cost_and_grad(model, scene, Qp, tt, tR, centers[None], radii, cfg)
            cm, _, _ = _cost_and_grad(model, scene, Qm, tt, tR, centers[None], radii, cfg)
            fd = (cp[0] - cm[0]) / (2 * eps)
            assert abs(fd - grad[0, w, j]) < 1e-4 * max(1.0, abs(fd))


class TestSaveTrajectory:
    def test_round_trips_full_precision(self, model, home, tmp_path):
        scene = _empty_scene()
        q = random_arm_configs(model, 1, seed=8, shrink=0.5)[0]
        traj = plan_batch(model, scene, home,
                          [PlanTarget(pose=_palm_pose(model, q), theta_p=home.hand)],
                          FAST)[0]
        path = tmp_path / "traj.txt"
        save_trajectory(traj, path)
        loaded = np.array([[float(v) for v in line.split()]
                           for line in path.read_text().splitlines()])
        assert np.array_equal(loaded, traj.waypoints)
