"""Minimal feed-forward network stack: dense layers, reverse-mode gradients,
binary cross-entropy and mixture-density losses, and Adam.

Everything is plain float64 numpy. Batched forward/backward uses matrix
products (parallel across the batch); gradient reductions are single
matrix products with a fixed contraction order, so training is
deterministic for a given seed and data order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("identity", "relu", "tanh", "sigmoid")
_ACT_CODE = {a: i for i, a in enumerate(ACTIVATIONS)}

_MAGIC = b"PFNN"
_VERSION = 1


def sigmoid(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softplus(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def _act(name: str, z: np.ndarray) -> np.ndarray:
    if name == "identity":
        return z
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return sigmoid(z)


def _act_deriv(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    """d act / d z, given pre-activation z and post-activation a."""
    if name == "identity":
        return np.ones_like(z)
    if name == "relu":
        return (z > 0).astype(np.float64)
    if name == "tanh":
        return 1.0 - a * a
    return a * (1.0 - a)


@dataclass
class Layer:
    w: np.ndarray  # (n_in, n_out)
    b: np.ndarray  # (n_out,)
    act: str

    def __post_init__(self):
        if self.act not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.act!r}")


@dataclass
class Mlp:
    layers: list[Layer]

    def __post_init__(self):
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.w.shape[1] != nxt.w.shape[0]:
                raise ValueError("layer dimensions do not chain")

    @property
    def input_dim(self) -> int:
        return self.layers[0].w.shape[0]

    @property
    def output_dim(self) -> int:
        return self.layers[-1].w.shape[1]

    def parameters(self) -> list[np.ndarray]:
        out = []
        for l in self.layers:
            out.extend([l.w, l.b])
        return out


def init_mlp(dims: list[int], acts: list[str], seed: int = 0) -> Mlp:
    """He-scaled Gaussian init; `dims` has len(acts)+1 entries."""
    if len(dims) != len(acts) + 1:
        raise ValueError("need one activation per layer")
    rng = np.random.default_rng(seed)
    layers = []
    for n_in, n_out, act in zip(dims[:-1], dims[1:], acts):
        w = rng.normal(0.0, np.sqrt(2.0 / n_in), size=(n_in, n_out))
        layers.append(Layer(w=w, b=np.zeros(n_out), act=act))
    return Mlp(layers=layers)


def forward(net: Mlp, x: np.ndarray) -> np.ndarray:
    """Evaluate the network on x of shape (n_in,) or (B, n_in)."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    h = x[None, :] if single else x
    if h.shape[1] != net.input_dim:
        raise ValueError(f"input dim {h.shape[1]} != network input dim {net.input_dim}")
    for l in net.layers:
        h = _act(l.act, h @ l.w + l.b)
    return h[0] if single else h


def forward_cached(net: Mlp, x: np.ndarray) -> tuple[np.ndarray, list]:
    """Forward pass recording (input, pre-activation, post-activation) per layer."""
    h = np.asarray(x, dtype=np.float64)
    if h.ndim == 1:
        h = h[None, :]
    caches = []
    for l in net.layers:
        z = h @ l.w + l.b
        a = _act(l.act, z)
        caches.append((h, z, a))
        h = a
    return h, caches


def backward_from_delta(net: Mlp, caches: list, delta: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Backprop where `delta` = dL/d(pre-activation of the last layer).

    Returns [(dW, db)] per layer, in layer order.
    """
    grads = [None] * len(net.layers)
    for i in range(len(net.layers) - 1, -1, -1):
        x_in, z, a = caches[i]
        grads[i] = (x_in.T @ delta, delta.sum(axis=0))
        if i > 0:
            delta = (delta @ net.layers[i].w.T) * _act_deriv(
                net.layers[i - 1].act, caches[i - 1][1], caches[i - 1][2]
            )
    return grads


def backward(net: Mlp, caches: list, d_out: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Backprop from dL/d(network output). Exact reverse-mode gradients."""
    _, z_last, a_last = caches[-1]
    delta = np.asarray(d_out, dtype=np.float64)
    if delta.ndim == 1:
        delta = delta[None, :]
    delta = delta * _act_deriv(net.layers[-1].act, z_last, a_last)
    return backward_from_delta(net, caches, delta)


# --------------------------------------------------------------------------
# Losses

def bce_loss_and_grads(net: Mlp, x: np.ndarray, y: np.ndarray):
    """Mean binary cross-entropy through a final sigmoid layer.

    Uses the logit formulation (softplus(z) - y*z) for numerical stability;
    the resulting dL/dlogit is (p - y)/B.
    Returns (loss, grads, predictions).
    """
    if net.layers[-1].act != "sigmoid":
        raise ValueError("BCE loss expects a sigmoid output layer")
    y = np.asarray(y, dtype=np.float64).reshape(-1, 1)
    out, caches = forward_cached(net, x)
    z = caches[-1][1]
    loss = float(np.mean(softplus(z) - y * z))
    delta = (out - y) / y.shape[0]
    return loss, backward_from_delta(net, caches, delta), out[:, 0]


def mdn_split(raw: np.ndarray, n_comp: int, dim: int, sigma_floor: float = 1e-3):
    """Raw head output -> (pi, mu, sigma): softmax weights, means,
    softplus-plus-floor standard deviations."""
    raw = np.asarray(raw, dtype=np.float64)
    single = raw.ndim == 1
    if single:
        raw = raw[None, :]
    logits = raw[:, :n_comp]
    logits = logits - logits.max(axis=1, keepdims=True)
    pi = np.exp(logits)
    pi /= pi.sum(axis=1, keepdims=True)
    mu = raw[:, n_comp:n_comp + n_comp * dim].reshape(-1, n_comp, dim)
    sigma = softplus(raw[:, n_comp + n_comp * dim:]).reshape(-1, n_comp, dim) + sigma_floor
    if single:
        return pi[0], mu[0], sigma[0]
    return pi, mu, sigma


def mdn_loss(pi: np.ndarray, mu: np.ndarray, sigma: np.ndarray, target: np.ndarray) -> float:
    """Negative log-likelihood of `target` under a diagonal Gaussian mixture."""
    pi = np.asarray(pi, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pi.ndim == 1:
        pi, mu, sigma = pi[None], mu[None], sigma[None]
    if target.ndim == 1:
        target = target[None, :]
    z = (target[:, None, :] - mu) / sigma
    log_comp = -0.5 * (z * z).sum(axis=-1) - np.log(sigma).sum(axis=-1) \
        - 0.5 * mu.shape[-1] * np.log(2 * np.pi)
    a = np.log(pi) + log_comp
    amax = a.max(axis=1, keepdims=True)
    ll = amax[:, 0] + np.log(np.exp(a - amax).sum(axis=1))
    return float(np.mean(-ll))


def mdn_loss_and_grads(net: Mlp, x: np.ndarray, targets: np.ndarray,
                       n_comp: int, dim: int, sigma_floor: float = 1e-3):
    """Mean MDN NLL and exact parameter gradients for an identity-output net."""
    targets = np.asarray(targets, dtype=np.float64)
    if targets.ndim == 1:
        targets = targets[None, :]
    raw, caches = forward_cached(net, x)
    B = raw.shape[0]
    logits = raw[:, :n_comp]
    s_raw = raw[:, n_comp + n_comp * dim:].reshape(B, n_comp, dim)
    pi, mu, sigma = mdn_split(raw, n_comp, dim, sigma_floor)
    z = (targets[:, None, :] - mu) / sigma
    log_comp = -0.5 * (z * z).sum(axis=-1) - np.log(sigma).sum(axis=-1) \
        - 0.5 * dim * np.log(2 * np.pi)
    a = np.log(pi) + log_comp
    amax = a.max(axis=1, keepdims=True)
    ea = np.exp(a - amax)
    ll = amax[:, 0] + np.log(ea.sum(axis=1))
    gamma = ea / ea.sum(axis=1, keepdims=True)   # responsibilities
    loss = float(np.mean(-ll))

    d_logits = (pi - gamma) / B
    d_mu = gamma[:, :, None] * (mu - targets[:, None, :]) / (sigma * sigma) / B
    d_sigma = gamma[:, :, None] * (1.0 - z * z) / sigma / B
    d_s_raw = d_sigma * sigmoid(s_raw)           # d softplus / ds
    d_raw = np.concatenate(
        [d_logits, d_mu.reshape(B, -1), d_s_raw.reshape(B, -1)], axis=1
    )
    _ = logits
    return loss, backward_from_delta(net, caches, d_raw)


def mdn_sample(pi: np.ndarray, mu: np.ndarray, sigma: np.ndarray,
               n: int, rng: np.random.Generator) -> np.ndarray:
    """n draws from a single mixture (pi (K,), mu/sigma (K, D))."""
    comps = rng.choice(len(pi), size=n, p=pi / pi.sum())
    eps = rng.standard_normal(size=(n, mu.shape[-1]))
    return mu[comps] + sigma[comps] * eps


# --------------------------------------------------------------------------
# Adam

@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(net: Mlp, lr: float = 1e-3, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    params = net.parameters()
    return AdamState(
        m=[np.zeros_like(p) for p in params],
        v=[np.zeros_like(p) for p in params],
        lr=lr, beta1=beta1, beta2=beta2, eps=eps,
    )


def adam_step(net: Mlp, grads: list[tuple[np.ndarray, np.ndarray]],
              state: AdamState) -> tuple[Mlp, AdamState]:
    """Standard Adam with bias correction; updates in place and returns both."""
    flat = []
    for dw, db in grads:
        flat.extend([dw, db])
    params = net.parameters()
    if len(flat) != len(params):
        raise ValueError("gradient count does not match parameter count")
    state.step += 1
    c1 = 1.0 - state.beta1 ** state.step
    c2 = 1.0 - state.beta2 ** state.step
    for p, g, m, v in zip(params, flat, state.m, state.v):
        if g.shape != p.shape:
            raise ValueError("gradient shape mismatch")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        if not np.all(np.isfinite(p)):
            raise FloatingPointError("non-finite parameters after Adam step")
    return net, state


# --------------------------------------------------------------------------
# Checkpoints

def mlp_to_bytes(net: Mlp) -> bytes:
    """Binary layout: magic, version byte, layer dims header, then row-major
    float64 weight and bias arrays per layer. Round trips bit-exactly."""
    parts = [_MAGIC, struct.pack("<BI", _VERSION, len(net.layers))]
    for l in net.layers:
        parts.append(struct.pack("<IIB", l.w.shape[0], l.w.shape[1], _ACT_CODE[l.act]))
    for l in net.layers:
        parts.append(np.ascontiguousarray(l.w, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(l.b, dtype="<f8").tobytes())
    return b"".join(parts)


def mlp_from_bytes(data: bytes) -> Mlp:
    if data[:4] != _MAGIC:
        raise ValueError("not a network checkpoint")
    version, n_layers = struct.unpack_from("<BI", data, 4)
    if version != _VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    off = 9
    shapes = []
    for _ in range(n_layers):
        n_in, n_out, code = struct.unpack_from("<IIB", data, off)
        off += 9
        shapes.append((n_in, n_out, ACTIVATIONS[code]))
    layers = []
    for n_in, n_out, act in shapes:
        w = np.frombuffer(data, dtype="<f8", count=n_in * n_out, offset=off).reshape(n_in, n_out)
        off += n_in * n_out * 8
        b = np.frombuffer(data, dtype="<f8", count=n_out, offset=off)
        off += n_out * 8
        layers.append(Layer(w=w.copy(), b=b.copy(), act=act))
    return Mlp(layers=layers)


def save_mlp(net: Mlp, path) -> None:
    with open(path, "wb") as f:
        f.write(mlp_to_bytes(net))


def load_mlp(path) -> Mlp:
    with open(path, "rb") as f:
        return mlp_from_bytes(f.read())
