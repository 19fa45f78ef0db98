"""Learned grasp generator and evaluator.

A grasp is a palm pose in the object frame plus a preshape and a closed
hand configuration. Grasps are flattened to 39-dim vectors
[t (3), quat wxyz (4), theta_pre (16), theta_close (16)] for the nets.

Both nets consume a basis-point encoding of the partial cloud centered at
its centroid; grasp translations are shifted into the same centered frame
before scoring and shifted back after sampling.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .bps import BasisSet, encode_points
from .geometry import PointCloud
from .neural import (
    Mlp,
    adam_init,
    adam_step,
    bce_loss_and_grads,
    forward,
    init_mlp,
    mdn_loss_and_grads,
    mdn_sample,
    mdn_split,
    mlp_from_bytes,
    mlp_to_bytes,
)
from .se3 import Pose, quat_from_euler_xyz, quat_mul, quat_normalize

GRASP_DIM = 39
N_HAND = 16

# Hard-negative perturbation envelope and the dead zone around the seed
# grasp that draws must escape to count as negatives.
HARD_NEG_TRANS = 0.05          # m, per axis
HARD_NEG_ROT = np.radians(60.0)
HARD_NEG_MIN_TRANS = 0.015     # m, euclidean
HARD_NEG_MIN_ROT = np.radians(15.0)

_CKPT_MAGIC = b"PFCK"
_CKPT_VERSION = 1


@dataclass(frozen=True)
class Grasp:
    """Palm pose in the object frame plus pre/close hand configurations."""

    pose: Pose
    theta_p: np.ndarray  # (16,) preshape
    theta_g: np.ndarray  # (16,) closed target

    def __post_init__(self):
        tp = np.asarray(self.theta_p, dtype=float)
        tg = np.asarray(self.theta_g, dtype=float)
        if tp.shape != (N_HAND,) or tg.shape != (N_HAND,):
            raise ValueError("hand configurations must be (%d,)" % N_HAND)
        object.__setattr__(self, "theta_p", tp)
        object.__setattr__(self, "theta_g", tg)


@dataclass(frozen=True)
class GraspSample:
    """A scored candidate grasp."""

    grasp: Grasp
    score: float


def vectorize(grasp: Grasp) -> np.ndarray:
    v = np.empty(GRASP_DIM)
    v[0:3] = grasp.pose.t
    v[3:7] = grasp.pose.q
    v[7:23] = grasp.theta_p
    v[23:39] = grasp.theta_g
    return v


def devectorize(v: np.ndarray) -> Grasp:
    v = np.asarray(v, dtype=float)
    if v.shape != (GRASP_DIM,):
        raise ValueError("grasp vector must be (%d,)" % GRASP_DIM)
    q = v[3:7]
    n = np.linalg.norm(q)
    if n < 1e-8:
        q = np.array([1.0, 0.0, 0.0, 0.0])
    else:
        q = q / n
    return Grasp(pose=Pose(q=q, t=v[0:3].copy()),
                 theta_p=v[7:23].copy(), theta_g=v[23:39].copy())


def encode_centered(basis: BasisSet, cloud: PointCloud) -> tuple[np.ndarray, np.ndarray]:
    """BPS encoding of the centroid-centered cloud; returns (values, centroid)."""
    centroid = cloud.points.mean(axis=0)
    values = encode_points(basis, cloud.points - centroid)
    return values, centroid


def evaluator_input(enc: np.ndarray, centroid: np.ndarray, vec: np.ndarray) -> np.ndarray:
    """Concatenate the cloud encoding with a centroid-shifted grasp vector."""
    v = np.asarray(vec, dtype=float).copy()
    v[..., 0:3] = v[..., 0:3] - centroid
    if v.ndim == 1:
        return np.concatenate([enc, v])
    return np.concatenate([np.broadcast_to(enc, v.shape[:-1] + enc.shape), v], axis=-1)


def make_evaluator(bps_dim: int, hidden: tuple[int, ...] = (256, 256), seed: int = 0) -> Mlp:
    dims = [bps_dim + GRASP_DIM, *hidden, 1]
    acts = ["relu"] * len(hidden) + ["sigmoid"]
    return init_mlp(dims, acts, seed=seed)


def make_generator(bps_dim: int, hidden: tuple[int, ...] = (256, 256),
                   n_comp: int = 8, seed: int = 0) -> Mlp:
    out = n_comp * (1 + 2 * GRASP_DIM)
    dims = [bps_dim, *hidden, out]
    acts = ["relu"] * len(hidden) + ["identity"]
    return init_mlp(dims, acts, seed=seed)


def generator_components(net: Mlp) -> int:
    return net.output_dim // (1 + 2 * GRASP_DIM)


def evaluate(net: Mlp, enc: np.ndarray, centroid: np.ndarray, grasp: Grasp) -> float:
    x = evaluator_input(enc, centroid, vectorize(grasp))
    return float(forward(net, x)[0])


def evaluate_batch(net: Mlp, enc: np.ndarray, centroid: np.ndarray,
                   grasps: list[Grasp]) -> np.ndarray:
    """Score grasps one at a time.

    Single-row forwards are used deliberately: batched BLAS matmuls are not
    bit-identical across batch sizes, and scores must not depend on how many
    candidates happen to be scored together.
    """
    return np.array([evaluate(net, enc, centroid, g) for g in grasps])


def generate(net: Mlp, enc: np.ndarray, centroid: np.ndarray, k: int,
             seed: int = 0,
             theta_limits: tuple[np.ndarray, np.ndarray] | None = None,
             sigma_scale: float = 1.0) -> list[Grasp]:
    """Sample k candidate grasps from the mixture head.

    sigma_scale < 1 samples each mixture component at reduced temperature:
    component choice is unchanged, within-component spread shrinks.
    """
    if k <= 0:
        raise ValueError("k must be positive")
    if sigma_scale <= 0:
        raise ValueError("sigma_scale must be positive")
    rng = np.random.default_rng(seed)
    raw = forward(net, enc)
    pi, mu, sigma = mdn_split(raw, generator_components(net), GRASP_DIM)
    vecs = mdn_sample(pi, mu, sigma * sigma_scale, k, rng)
    vecs[:, 0:3] += centroid
    if theta_limits is not None:
        lo, hi = theta_limits
        vecs[:, 7:23] = np.clip(vecs[:, 7:23], lo, hi)
        vecs[:, 23:39] = np.clip(vecs[:, 23:39], lo, hi)
    return [devectorize(v) for v in vecs]


def make_hard_negative(grasp: Grasp, rng: np.random.Generator) -> Grasp:
    """Perturb a good grasp until it leaves the near-identity dead zone.

    Translation is uniform per axis within +-HARD_NEG_TRANS; rotation is a
    local (right-multiplied) XYZ-euler draw within +-HARD_NEG_ROT per axis.
    Draws with ||dt|| < 1.5 cm and every |angle| < 15 deg are rejected so
    negatives never sit on top of the positive they came from.
    """
    while True:
        dt = rng.uniform(-HARD_NEG_TRANS, HARD_NEG_TRANS, 3)
        ang = rng.uniform(-HARD_NEG_ROT, HARD_NEG_ROT, 3)
        if np.linalg.norm(dt) >= HARD_NEG_MIN_TRANS or np.any(np.abs(ang) >= HARD_NEG_MIN_ROT):
            break
    q = quat_normalize(quat_mul(grasp.pose.q, quat_from_euler_xyz(ang)))
    return Grasp(pose=Pose(q=q, t=grasp.pose.t + dt),
                 theta_p=grasp.theta_p, theta_g=grasp.theta_g)


def hard_negative_vec(vec: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    return vectorize(make_hard_negative(devectorize(vec), rng))


def train_evaluator(net: Mlp, x_pos: np.ndarray, x_neg: np.ndarray,
                    pos_vecs: np.ndarray, pos_enc: np.ndarray,
                    pos_centroids: np.ndarray, *,
                    epochs: int = 40, batch: int = 192, lr: float = 1e-3,
                    seed: int = 0) -> list[float]:
    """Train the grasp evaluator with thirds minibatches.

    x_pos/x_neg are prebuilt evaluator inputs for labelled successes and
    failures. The third stream is generated on the fly: hard negatives made
    by perturbing positive grasps (pos_vecs, object frame) and re-shifting
    with their cloud centroids. Returns per-epoch mean losses.
    """
    if len(x_pos) == 0 or len(x_neg) == 0:
        raise ValueError("need both positive and negative examples")
    rng = np.random.default_rng(seed)
    state = adam_init(net, lr=lr)
    third = max(1, batch // 3)
    steps = max(1, (len(x_pos) + len(x_neg)) // (2 * third))
    history = []
    for _ in range(epochs):
        losses = []
        for _ in range(steps):
            ip = rng.integers(0, len(x_pos), third)
            ineg = rng.integers(0, len(x_neg), third)
            ih = rng.integers(0, len(pos_vecs), third)
            x_hard = np.stack([
                evaluator_input(pos_enc[j], pos_centroids[j],
                                hard_negative_vec(pos_vecs[j], rng))
                for j in ih
            ])
            x = np.concatenate([x_pos[ip], x_neg[ineg], x_hard])
            y = np.concatenate([np.ones(third), np.zeros(2 * third)])
            loss, grads, _ = bce_loss_and_grads(net, x, y)
            adam_step(net, grads, state)
            losses.append(loss)
        history.append(float(np.mean(losses)))
    return history


def train_generator(net: Mlp, basis: BasisSet, clouds: list[np.ndarray],
                    vecs: np.ndarray, cloud_index: np.ndarray, *,
                    epochs: int = 60, batch: int = 128, lr: float = 1e-3,
                    seed: int = 0, noise_scale: float = 0.002) -> list[float]:
    """Fit the mixture generator to successful grasps.

    clouds are object-frame point arrays; cloud_index maps each grasp vector
    to its cloud. Every epoch the clouds are re-jittered with gaussian noise
    (noise_scale, meters) and re-encoded, which regularizes against the
    exact ray pattern of the renderer. Targets are centroid-centered.
    """
    if len(vecs) == 0:
        raise ValueError("no training grasps")
    n_comp = generator_components(net)
    rng = np.random.default_rng(seed)
    state = adam_init(net, lr=lr)
    steps = max(1, len(vecs) // batch)
    history = []
    for _ in range(epochs):
        encs = np.empty((len(clouds), basis.dim))
        cents = np.empty((len(clouds), 3))
        for i, pts in enumerate(clouds):
            noisy = pts + rng.normal(0.0, noise_scale, pts.shape)
            cents[i] = noisy.mean(axis=0)
            encs[i] = encode_points(basis, noisy - cents[i])
        losses = []
        for _ in range(steps):
            idx = rng.integers(0, len(vecs), batch)
            ci = cloud_index[idx]
            x = encs[ci]
            t = vecs[idx].copy()
            t[:, 0:3] -= cents[ci]
            loss, grads = mdn_loss_and_grads(net, x, t, n_comp, GRASP_DIM)
            adam_step(net, grads, state)
            losses.append(loss)
        history.append(float(np.mean(losses)))
    return history


def save_model(net: Mlp, meta: dict, path) -> None:
    """Checkpoint: magic, version, length-prefixed sorted-key JSON, net blob."""
    header = json.dumps(meta, sort_keys=True).encode()
    blob = mlp_to_bytes(net)
    with open(path, "wb") as f:
        f.write(_CKPT_MAGIC)
        f.write(struct.pack("<BI", _CKPT_VERSION, len(header)))
        f.write(header)
        f.write(blob)


def load_model(path) -> tuple[Mlp, dict]:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != _CKPT_MAGIC:
        raise ValueError("not a model checkpoint: %s" % path)
    version, hlen = struct.unpack_from("<BI", data, 4)
    if version != _CKPT_VERSION:
        raise ValueError("unsupported checkpoint version %d" % version)
    off = 4 + struct.calcsize("<BI")
    meta = json.loads(data[off:off + hlen].decode())
    net = mlp_from_bytes(data[off + hlen:])
    return net, meta
