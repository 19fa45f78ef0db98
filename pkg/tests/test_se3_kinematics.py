import numpy as np
import pytest

from planfirst.kinematics import (
    ARM_LINK,
    HOME_PALM_HEIGHT,
    PALM_MOUNT,
    DimensionError,
    JointConfig,
    fk_arm_batch,
    forward_kinematics,
    jacobian,
)
from planfirst.se3 import (
    Pose,
    compose,
    euler_xyz_from_matrix,
    inverse,
    pose_error,
    poses_close,
    quat_from_axis_angle,
    quat_from_euler_xyz,
    quat_mul,
    quat_normalize,
    quat_rotate,
    quat_to_matrix,
)
from conftest import random_arm_configs, random_pose


class TestCompose:
    def test_identity(self):
        rng = np.random.default_rng(0)
        p = random_pose(rng)
        assert poses_close(compose(Pose.identity(), p), p)
        assert poses_close(compose(p, Pose.identity()), p)

    def test_z_rotation_moves_x_axis_point(self):
        rz = Pose(q=quat_from_axis_angle([0, 0, 1], np.pi / 2), t=np.zeros(3))
        moved = quat_rotate(rz.q, np.array([1.0, 0.0, 0.0]))
        assert np.allclose(moved, [0, 1, 0], atol=1e-12)

    def test_inverse_law(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            p = random_pose(rng)
            assert poses_close(compose(p, inverse(p)), Pose.identity(), tol=1e-9)

    def test_associativity(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            a, b, c = (random_pose(rng) for _ in range(3))
            lhs = compose(compose(a, b), c)
            rhs = compose(a, compose(b, c))
            assert np.linalg.norm(lhs.t - rhs.t) < 1e-9
            assert min(np.linalg.norm(lhs.q - rhs.q),
                       np.linalg.norm(lhs.q + rhs.q)) < 1e-9


class TestPoseError:
    def test_identical(self):
        p = Pose(q=quat_from_axis_angle([0, 1, 0], 0.3), t=np.array([1.0, 2, 3]))
        pos, rot = pose_error(p, p)
        assert pos == 0.0
        assert np.allclose(rot, 0.0)

    def test_translation_345(self):
        a = Pose.identity()
        b = Pose(t=np.array([0.003, 0.004, 0.0]))
        pos, rot = pose_error(a, b)
        assert pos == pytest.approx(0.005, abs=1e-12)
        assert np.allclose(rot, 0.0)

    def test_single_axis_rotation(self):
        a = Pose.identity()
        b = Pose(q=quat_from_axis_angle([0, 0, 1], np.radians(14.0)))
        _, rot = pose_error(a, b)
        assert np.allclose(rot, [0, 0, np.radians(14.0)], atol=1e-12)

    def test_quaternion_double_cover(self):
        rng = np.random.default_rng(3)
        p = random_pose(rng)
        flipped = Pose(q=-p.q, t=p.t)
        pos, rot = pose_error(p, flipped)
        assert pos == 0.0
        assert np.allclose(rot, 0.0, atol=1e-12)

    def test_euler_round_trip(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            ang = rng.uniform(-1.2, 1.2, 3)
            m = quat_to_matrix(quat_from_euler_xyz(ang))
            assert np.allclose(euler_xyz_from_matrix(m), ang, atol=1e-10)


class TestForwardKinematics:
    def test_home_pose_oracle(self, model):
        # All-zero configuration: every arm offset is +0.25 m z, palm mount
        # +0.10 m z, no rotation anywhere -> palm at (0, 0, 7*0.25 + 0.10)
        # with identity orientation. Computed by hand from the chain.
        q = JointConfig(arm=np.zeros(model.n_arm), hand=np.zeros(model.n_hand))
        fk = forward_kinematics(model, q)
        assert np.allclose(fk.palm.t, [0, 0, HOME_PALM_HEIGHT], atol=1e-12)
        assert np.allclose(fk.palm.t[2], 7 * ARM_LINK + PALM_MOUNT)
        assert abs(abs(fk.palm.q[0]) - 1.0) < 1e-12

    def test_base_yaw_symmetry(self, model):
        # Rotating the vertical base joint by pi flips palm x/y, keeps height.
        q0 = np.zeros(model.n_arm)
        q1 = q0.copy()
        q1[0] = np.pi
        f0 = fk_arm_batch(model, q0)
        f1 = fk_arm_batch(model, q1)
        assert f1["palm_t"][2] == pytest.approx(f0["palm_t"][2], abs=1e-12)
        rng = np.random.default_rng(5)
        q2 = random_arm_configs(model, 1, seed=5)[0]
        q3 = q2.copy()
        q3[0] += np.pi
        f2, f3 = fk_arm_batch(model, q2), fk_arm_batch(model, q3)
        assert np.allclose(f3["palm_t"][:2], -f2["palm_t"][:2], atol=1e-9)
        assert f3["palm_t"][2] == pytest.approx(f2["palm_t"][2], abs=1e-12)

    def test_fk_deterministic(self, model):
        q = random_arm_configs(model, 1, seed=6)[0]
        a, b = fk_arm_batch(model, q), fk_arm_batch(model, q)
        assert np.array_equal(a["palm_t"], b["palm_t"])
        assert np.array_equal(a["palm_q"], b["palm_q"])

    def test_dimension_mismatch(self, model):
        with pytest.raises(DimensionError):
            forward_kinematics(model, JointConfig(arm=np.zeros(3),
                                                  hand=np.zeros(model.n_hand)))

    def test_batched_fk_matches_loop(self, model):
        qs = random_arm_configs(model, 8, seed=7)
        batch = fk_arm_batch(model, qs)
        for i, q in enumerate(qs):
            single = fk_arm_batch(model, q)
            assert np.array_equal(batch["palm_t"][i], single["palm_t"])
            assert np.array_equal(batch["palm_q"][i], single["palm_q"])


class TestJacobian:
    def test_single_joint_perturbation(self, model):
        q = random_arm_configs(model, 1, seed=8)[0]
        jc = JointConfig(arm=q, hand=np.zeros(model.n_hand))
        jac = jacobian(model, jc)
        delta = 1e-6
        for j in range(model.n_arm):
            qp = q.copy()
            qp[j] += delta
            moved = fk_arm_batch(model, qp)["palm_t"]
            base = fk_arm_batch(model, q)["palm_t"]
            assert np.allclose(moved - base, jac[:3, j] * delta, atol=1e-9)

    def test_finite_difference_100_states(self, model):
        qs = random_arm_configs(model, 100, seed=9)
        h = 1e-6
        worst = 0.0
        for q in qs:
            jc = JointConfig(arm=q, hand=np.zeros(model.n_hand))
            jac = jacobian(model, jc)[:3]
            num = np.empty_like(jac)
            for j in range(model.n_arm):
                qp, qm = q.copy(), q.copy()
                qp[j] += h
                qm[j] -= h
                num[:, j] = (fk_arm_batch(model, qp)["palm_t"]
                             - fk_arm_batch(model, qm)["palm_t"]) / (2 * h)
            scale = max(1.0, np.abs(jac).max())
            worst = max(worst, np.abs(jac - num).max() / scale)
        assert worst < 1e-4, f"max relative error {worst:.2e}"

    def test_home_jacobian_oracle(self, model):
        # Home config: all joint origins on the z axis, palm at (0,0,H).
        # z-axis joints (even indices) contribute zero linear velocity;
        # y-axis joints (odd index i) give linear column x-hat * (H - z_i).
        jc = JointConfig(arm=np.zeros(model.n_arm), hand=np.zeros(model.n_hand))
        jac = jacobian(model, jc)
        expected = np.zeros((6, model.n_arm))
        for i, joint in enumerate(model.arm):
            z_i = ARM_LINK * (i + 1)  # offset precedes each joint frame
            if i % 2 == 0:      # z axis through the palm origin
                expected[3:, i] = [0, 0, 1]
            else:               # y axis at height z_i
                expected[3:, i] = [0, 1, 0]
                expected[:3, i] = [HOME_PALM_HEIGHT - z_i, 0, 0]
        assert np.allclose(jac, expected, atol=1e-12)

    def test_axis_through_palm_gives_zero_linear(self, model):
        # At home, every z-axis joint's axis passes through the palm origin.
        jc = JointConfig(arm=np.zeros(model.n_arm), hand=np.zeros(model.n_hand))
        jac = jacobian(model, jc)
        for i in range(0, model.n_arm, 2):
            assert np.allclose(jac[:3, i], 0.0, atol=1e-12)


class TestQuaternions:
    def test_mul_norm_preserving(self):
        rng = np.random.default_rng(10)
        for _ in range(20):
            a = quat_normalize(rng.normal(size=4))
            b = quat_normalize(rng.normal(size=4))
            assert np.linalg.norm(quat_mul(a, b)) == pytest.approx(1.0, abs=1e-12)

    def test_rotation_matrix_orthonormal(self):
        rng = np.random.default_rng(11)
        q = quat_normalize(rng.normal(size=4))
        m = quat_to_matrix(q)
        assert np.allclose(m @ m.T, np.eye(3), atol=1e-12)
        assert np.linalg.det(m) == pytest.approx(1.0, abs=1e-12)
