"""Basis point set encoding: a point cloud becomes a fixed-length vector of
distances from D reference points to their nearest cloud point.

The basis is sampled uniformly inside a ball centered at the object-frame
origin and is fully determined by (D, radius, seed), so encodings are
reproducible across runs and processes.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .geometry import PointCloud

_MAGIC = b"PFBS"
_VERSION = 1


@dataclass(frozen=True)
class BasisSet:
    points: np.ndarray  # (D, 3), all within `radius` of the origin
    radius: float
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "points", np.asarray(self.points, dtype=np.float64).reshape(-1, 3))

    @property
    def dim(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class BpsEncoding:
    values: np.ndarray  # (D,), nonnegative nearest-point distances, meters

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64).reshape(-1))


def make_basis(d: int, radius: float = 0.15, seed: int = 0) -> BasisSet:
    """D points uniform in the ball, by rejection sampling from the cube."""
    if d < 1:
        raise ValueError("basis size must be >= 1")
    if not radius > 0:
        raise ValueError("radius must be > 0")
    rng = np.random.default_rng(seed)
    pts = np.empty((0, 3))
    while pts.shape[0] < d:
        cand = rng.uniform(-radius, radius, size=(max(d, 64) * 2, 3))
        keep = cand[np.linalg.norm(cand, axis=-1) <= radius]
        pts = np.concatenate([pts, keep], axis=0)
    return BasisSet(points=pts[:d], radius=float(radius), seed=int(seed))


def encode(basis: BasisSet, cloud: PointCloud) -> BpsEncoding:
    """values[i] = min_p ||b_i - p||_2 over the cloud points."""
    if len(cloud) == 0:
        raise ValueError("cannot encode an empty point cloud")
    return BpsEncoding(values=encode_points(basis, cloud.points))


def encode_points(basis: BasisSet, pts: np.ndarray) -> np.ndarray:
    pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
    if pts.shape[0] == 0:
        raise ValueError("cannot encode an empty point set")
    out = np.empty(basis.dim)
    # Chunk over basis points to bound the (chunk x N) distance matrix.
    chunk = max(1, min(basis.dim, 8 * 1024 * 1024 // max(1, pts.shape[0] * 8)))
    for s in range(0, basis.dim, chunk):
        b = basis.points[s:s + chunk]
        d2 = ((b[:, None, :] - pts[None, :, :]) ** 2).sum(axis=-1)
        out[s:s + chunk] = np.sqrt(d2.min(axis=1))
    return out


def save_basis(basis: BasisSet, path) -> None:
    """Binary layout: magic, version, D, radius, seed, then raw points."""
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<BIdq", _VERSION, basis.dim, basis.radius, basis.seed))
        f.write(basis.points.astype("<f8").tobytes())


def load_basis(path) -> BasisSet:
    with open(path, "rb") as f:
        if f.read(4) != _MAGIC:
            raise ValueError(f"{path}: not a basis file")
        version, d, radius, seed = struct.unpack("<BIdq", f.read(21))
        if version != _VERSION:
            raise ValueError(f"{path}: unsupported basis version {version}")
        pts = np.frombuffer(f.read(d * 24), dtype="<f8").reshape(d, 3)
    return BasisSet(points=pts.copy(), radius=radius, seed=seed)
