import numpy as np
import pytest

from planfirst.kinematics import JointConfig, default_robot, open_hand_preshape


@pytest.fixture(scope="session")
def model():
    return default_robot()


@pytest.fixture(scope="session")
def home(model):
    return JointConfig(arm=np.zeros(model.n_arm),
                       hand=open_hand_preshape(model))


def random_arm_configs(model, n, seed=0, shrink=0.8):
    """n random in-limit arm configurations, away from the exact limits."""
    rng = np.random.default_rng(seed)
    lo, hi = model.arm_limits()
    mid, half = (lo + hi) / 2, (hi - lo) / 2
    return mid + shrink * half * rng.uniform(-1, 1, size=(n, model.n_arm))


def random_pose(rng):
    from planfirst.se3 import Pose, quat_normalize
    q = quat_normalize(rng.normal(size=4))
    return Pose(q=q, t=rng.uniform(-1, 1, 3))
