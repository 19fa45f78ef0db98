"""Object/environment geometry: analytic SDFs, contact queries, procedural
objects, and synthetic partial point clouds from a fixed depth camera.

Shapes are convex primitives with exact signed distance functions, so every
collision cost, contact query, and rendered point is reproducible to machine
precision. Shape params (meters):

    sphere    [radius]
    box       [hx, hy, hz]            (half-extents)
    capsule   [radius, half_length]   (axis = local z)
    cylinder  [radius, half_length]   (axis = local z)
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kinematics import JointConfig, RobotModel, fingertip_world
from .se3 import Pose, inverse, quat_rotate

SHAPE_KINDS = ("box", "sphere", "capsule", "cylinder")

TABLE_HEIGHT = 0.60  # m, top surface of the default table


class EmptyCloudError(RuntimeError):
    """The object produced no depth returns (occluded or outside frustum)."""


@dataclass(frozen=True)
class Shape:
    kind: str
    params: np.ndarray
    pose: Pose = field(default_factory=Pose)

    def __post_init__(self):
        if self.kind not in SHAPE_KINDS:
            raise ValueError(f"unknown shape kind {self.kind!r}")
        params = np.asarray(self.params, dtype=np.float64).reshape(-1)
        object.__setattr__(self, "params", params)
        if np.any(params <= 0):
            raise ValueError("all shape dimensions must be > 0")

    def extents(self) -> np.ndarray:
        """Axis-aligned full extents in the shape's local frame."""
        p = self.params
        if self.kind == "sphere":
            return np.full(3, 2 * p[0])
        if self.kind == "box":
            return 2 * p
        if self.kind == "capsule":
            return np.array([2 * p[0], 2 * p[0], 2 * (p[1] + p[0])])
        return np.array([2 * p[0], 2 * p[0], 2 * p[1]])  # cylinder

    def half_height(self) -> float:
        return float(self.extents()[2] / 2)


def _sdf_local(kind: str, params: np.ndarray, p: np.ndarray) -> np.ndarray:
    if kind == "sphere":
        return np.linalg.norm(p, axis=-1) - params[0]
    if kind == "box":
        q = np.abs(p) - params
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(np.max(q, axis=-1), 0.0)
        return outside + inside
    if kind == "capsule":
        r, h = params
        pa = p.copy()
        pa[..., 2] -= np.clip(p[..., 2], -h, h)
        return np.linalg.norm(pa, axis=-1) - r
    # cylinder
    r, h = params
    dr = np.linalg.norm(p[..., :2], axis=-1) - r
    dz = np.abs(p[..., 2]) - h
    d = np.stack([dr, dz], axis=-1)
    return np.minimum(np.max(d, axis=-1), 0.0) + np.linalg.norm(np.maximum(d, 0.0), axis=-1)


def _sdf_grad_local(kind: str, params: np.ndarray, p: np.ndarray) -> np.ndarray:
    if kind == "sphere":
        n = np.linalg.norm(p, axis=-1, keepdims=True)
        g = np.divide(p, n, out=np.zeros_like(p), where=n > 0)
        g[np.squeeze(n, -1) == 0] = [0.0, 0.0, 1.0]
        return g
    if kind == "box":
        q = np.abs(p) - params
        s = np.where(p >= 0, 1.0, -1.0)
        v = np.maximum(q, 0.0)
        nv = np.linalg.norm(v, axis=-1, keepdims=True)
        g_out = np.divide(s * v, nv, out=np.zeros_like(p), where=nv > 0)
        # Inside: step toward the nearest face.
        k = np.argmax(q, axis=-1)
        g_in = np.zeros_like(p)
        idx = np.indices(k.shape)
        g_in[(*idx, k)] = np.take_along_axis(s, k[..., None], axis=-1)[..., 0]
        return np.where(nv > 0, g_out, g_in)
    if kind == "capsule":
        r, h = params
        pa = p.copy()
        pa[..., 2] -= np.clip(p[..., 2], -h, h)
        n = np.linalg.norm(pa, axis=-1, keepdims=True)
        g = np.divide(pa, n, out=np.zeros_like(pa), where=n > 0)
        deg = np.squeeze(n, -1) == 0
        g[deg] = [1.0, 0.0, 0.0]
        return g
    # cylinder
    r, h = params
    rxy = np.linalg.norm(p[..., :2], axis=-1, keepdims=True)
    radial = np.divide(p[..., :2], rxy, out=np.zeros_like(p[..., :2]), where=rxy > 0)
    radial = np.concatenate([radial, np.zeros_like(rxy)], axis=-1)
    radial[np.squeeze(rxy, -1) == 0] = [1.0, 0.0, 0.0]
    axial = np.zeros_like(p)
    axial[..., 2] = np.where(p[..., 2] >= 0, 1.0, -1.0)
    dr = np.squeeze(rxy, -1) - r
    dz = np.abs(p[..., 2]) - h
    both = (dr > 0) & (dz > 0)
    corner = radial * np.maximum(dr, 0.0)[..., None] + axial * np.maximum(dz, 0.0)[..., None]
    cn = np.linalg.norm(corner, axis=-1, keepdims=True)
    corner = np.divide(corner, cn, out=corner, where=cn > 0)
    g = np.where(both[..., None], corner, np.where((dr > dz)[..., None], radial, axial))
    return g


def sdf(shape: Shape, pts: np.ndarray) -> np.ndarray:
    """Exact signed distance of world points (..., 3) to the shape surface."""
    pts = np.asarray(pts, dtype=np.float64)
    local = quat_rotate(_conj(shape.pose.q), pts - shape.pose.t)
    return _sdf_local(shape.kind, shape.params, local)


def _conj(q: np.ndarray) -> np.ndarray:
    out = np.array(q, copy=True)
    out[..., 1:] = -out[..., 1:]
    return out


def sdf_grad(shape: Shape, pts: np.ndarray) -> np.ndarray:
    """World-frame gradient of the shape SDF (unit outward normal a.e.)."""
    pts = np.asarray(pts, dtype=np.float64)
    local = quat_rotate(_conj(shape.pose.q), pts - shape.pose.t)
    g = _sdf_grad_local(shape.kind, shape.params, local)
    return quat_rotate(shape.pose.q, g)


@dataclass(frozen=True)
class Camera:
    pose: Pose          # +z looks forward, +x right, +y down
    fov_deg: float = 40.0

    @staticmethod
    def look_at(eye, target, fov_deg: float = 40.0) -> "Camera":
        eye = np.asarray(eye, dtype=np.float64)
        z = np.asarray(target, dtype=np.float64) - eye
        z = z / np.linalg.norm(z)
        x = np.cross(z, np.array([0.0, 0.0, 1.0]))
        if np.linalg.norm(x) < 1e-9:
            x = np.array([1.0, 0.0, 0.0])
        x = x / np.linalg.norm(x)
        y = np.cross(z, x)
        m = np.eye(4)
        m[:3, 0], m[:3, 1], m[:3, 2], m[:3, 3] = x, y, z, eye
        return Camera(pose=Pose.from_matrix(m), fov_deg=fov_deg)


@dataclass(frozen=True)
class Scene:
    """Grasp target + environment obstacles + the fixed depth camera.

    The world frame is the robot base frame; `object_pose` is the object
    frame expressed in it (always the grasp target's own pose).
    """

    object: Shape | None
    obstacles: tuple[Shape, ...]
    camera: Camera
    tag: str = ""

    @property
    def object_pose(self) -> Pose:
        return self.object.pose

    def shapes(self) -> tuple[Shape, ...]:
        if self.object is None:
            return tuple(self.obstacles)
        return (self.object,) + tuple(self.obstacles)


def scene_sdf(scene: Scene, pts: np.ndarray) -> np.ndarray:
    """min over all scene shapes."""
    vals = [sdf(s, pts) for s in scene.shapes()]
    out = vals[0]
    for v in vals[1:]:
        out = np.minimum(out, v)
    return out


def scene_sdf_grad(scene: Scene, pts: np.ndarray) -> np.ndarray:
    """Gradient of the scene SDF (gradient of the closest shape)."""
    shapes = scene.shapes()
    vals = np.stack([sdf(s, pts) for s in shapes])
    grads = np.stack([sdf_grad(s, pts) for s in shapes])
    k = np.argmin(vals, axis=0)
    return np.take_along_axis(grads, k[None, ..., None], axis=0)[0]


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray  # (N, 3), meters, object frame

    def __post_init__(self):
        object.__setattr__(self, "points", np.asarray(self.points, dtype=np.float64).reshape(-1, 3))

    def __len__(self) -> int:
        return self.points.shape[0]


def save_cloud(cloud: PointCloud, path) -> None:
    """One point per line, three full-precision floats."""
    with open(path, "w") as f:
        for p in cloud.points:
            f.write(f"{float(p[0])!r} {float(p[1])!r} {float(p[2])!r}\n")


def load_cloud(path) -> PointCloud:
    pts = np.loadtxt(path, dtype=np.float64).reshape(-1, 3)
    return PointCloud(points=pts)


def render_partial_cloud(scene: Scene, n_rays: int = 4096, seed: int = 0,
                         max_dist: float = 4.0, hit_tol: float = 1e-5,
                         max_steps: int = 192) -> PointCloud:
    """Sphere-trace a pixel grid from the scene camera; keep object hits only.

    Obstacles occlude but never contribute points. Sub-pixel jitter comes
    from `seed`, so identical (scene, n_rays, seed) render identical clouds.
    Returned points are in the object frame.
    """
    side = max(1, int(round(np.sqrt(n_rays))))
    rng = np.random.default_rng(seed)
    jitter = rng.random((side, side, 2))
    half_tan = np.tan(np.radians(scene.camera.fov_deg) / 2)
    ii, jj = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
    u = ((jj + jitter[..., 0]) / side - 0.5) * 2 * half_tan
    v = ((ii + jitter[..., 1]) / side - 0.5) * 2 * half_tan
    dirs_local = np.stack([u, v, np.ones_like(u)], axis=-1).reshape(-1, 3)
    dirs_local /= np.linalg.norm(dirs_local, axis=-1, keepdims=True)
    dirs = quat_rotate(scene.camera.pose.q, dirs_local)
    eye = scene.camera.pose.t

    t = np.zeros(dirs.shape[0])
    hit = np.zeros(dirs.shape[0], dtype=bool)
    alive = np.ones(dirs.shape[0], dtype=bool)
    for _ in range(max_steps):
        if not alive.any():
            break
        p = eye + t[:, None] * dirs
        s = scene_sdf(scene, p)
        newly = alive & (s < hit_tol)
        hit |= newly
        alive &= ~newly
        t = np.where(alive, t + s, t)
        alive &= t <= max_dist

    if not hit.any():
        raise EmptyCloudError("no depth returns at all")
    p_hit = eye + t[hit, None] * dirs[hit]
    per_shape = np.stack([sdf(s, p_hit) for s in scene.shapes()])
    on_object = np.argmin(per_shape, axis=0) == 0
    if not on_object.any():
        raise EmptyCloudError("object fully occluded or outside the camera frustum")
    pts_obj = inverse(scene.object_pose).apply(p_hit[on_object])
    return PointCloud(points=pts_obj)


@dataclass(frozen=True)
class ContactReport:
    contact: np.ndarray    # (F,) bool
    normals: np.ndarray    # (F, 3) unit SDF gradient at each fingertip
    distances: np.ndarray  # (F,) signed distance of each fingertip


def fingertip_contacts(scene: Scene, model: RobotModel, q: JointConfig,
                       tol: float = 0.005) -> ContactReport:
    """Which fingertips touch the object surface (|sdf| <= tol), with normals."""
    if not tol > 0:
        raise ValueError("contact tolerance must be > 0")
    tips = fingertip_world(model, q)
    d = sdf(scene.object, tips)
    g = sdf_grad(scene.object, tips)
    norms = np.linalg.norm(g, axis=-1, keepdims=True)
    g = np.divide(g, norms, out=g, where=norms > 0)
    return ContactReport(contact=np.abs(d) <= tol, normals=g, distances=d)


def sample_object(seed: int, difficulty: str = "medium") -> Shape:
    """Random graspable primitive, extents in [0.03, 0.12] m, seeded.

    easy:   spheres and boxes, aspect ratio <= 2
    medium: + cylinders and capsules, aspect ratio <= 3
    hard:   all kinds, aspect ratio <= 4
    """
    if difficulty not in ("easy", "medium", "hard"):
        raise ValueError(f"unknown difficulty {difficulty!r}")
    rng = np.random.default_rng(seed)
    lo, hi = 0.03, 0.12
    kinds = {"easy": ["sphere", "box"],
             "medium": ["sphere", "box", "cylinder", "capsule"],
             "hard": ["sphere", "box", "cylinder", "capsule"]}[difficulty]
    aspect = {"easy": 2.0, "medium": 3.0, "hard": 4.0}[difficulty]
    kind = kinds[rng.integers(len(kinds))]
    if kind == "sphere":
        d = rng.uniform(lo, hi)
        return Shape("sphere", [d / 2])
    if kind == "box":
        while True:
            e = rng.uniform(lo, hi, size=3)
            if e.max() / e.min() <= aspect:
                return Shape("box", e / 2)
    # cylinder / capsule: lateral extent 2r, axial extent along local z
    while True:
        d = rng.uniform(lo, hi)           # lateral extent
        length = rng.uniform(lo, hi)      # axial extent
        if max(d, length) / min(d, length) > aspect:
            continue
        r = d / 2
        if kind == "capsule":
            h = length / 2 - r
            if h <= 0.005:
                continue
            return Shape("capsule", [r, h])
        return Shape("cylinder", [r, length / 2])


def surface_points(shape: Shape, n: int, seed: int = 0) -> np.ndarray:
    """n world-frame points on the shape surface (ray bisection from center)."""
    rng = np.random.default_rng(seed)
    dirs = rng.normal(size=(n, 3))
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    return _surface_along(shape, dirs)


def _surface_along(shape: Shape, dirs: np.ndarray) -> np.ndarray:
    """Surface points along outward directions from the shape center."""
    bound = float(shape.extents().max())
    t_lo = np.zeros(dirs.shape[0])
    t_hi = np.full(dirs.shape[0], bound)
    center = shape.pose.t
    for _ in range(60):
        t_mid = 0.5 * (t_lo + t_hi)
        s = sdf(shape, center + t_mid[:, None] * dirs)
        inside = s < 0
        t_lo = np.where(inside, t_mid, t_lo)
        t_hi = np.where(inside, t_hi, t_mid)
    return center + (0.5 * (t_lo + t_hi))[:, None] * dirs


def check_scene(scene: Scene, n: int = 256, seed: int = 0, tol: float = 1e-4) -> None:
    """Verify the object does not initially penetrate any obstacle."""
    pts = surface_points(scene.object, n, seed)
    for obs in scene.obstacles:
        worst = float(sdf(obs, pts).min())
        if worst < -tol:
            raise ValueError(f"object penetrates obstacle by {-worst:.4f} m")


def default_table() -> Shape:
    return Shape("box", [0.50, 0.60, 0.025], Pose(t=(0.55, 0.0, TABLE_HEIGHT - 0.025)))


def sample_scene(seed: int, difficulty: str = "medium", shelf_prob: float = 0.5,
                 fov_deg: float = 40.0) -> Scene:
    """Procedural benchmark scene: object resting on a table, optionally
    inside a shelf (side walls + top board) that blocks side and top
    approaches. The camera looks at the object from the front-high +x side.
    """
    rng = np.random.default_rng(seed)
    obj = sample_object(seed=int(rng.integers(2**31)), difficulty=difficulty)
    x = rng.uniform(0.45, 0.65)
    y = rng.uniform(-0.15, 0.15)
    yaw = rng.uniform(0, 2 * np.pi)
    pose = Pose.from_axis_angle([0, 0, 1], yaw, t=(x, y, TABLE_HEIGHT + obj.half_height()))
    obj = Shape(obj.kind, obj.params, pose)
    obstacles = [default_table()]
    tag = "open"
    if rng.random() < shelf_prob:
        tag = "shelf"
        wall_h = 0.12
        for side in (-1.0, 1.0):
            obstacles.append(Shape(
                "box", [0.15, 0.01, wall_h],
                Pose(t=(x, y + side * 0.16, TABLE_HEIGHT + wall_h)),
            ))
        obstacles.append(Shape(
            "box", [0.15, 0.17, 0.01],
            Pose(t=(x, y, TABLE_HEIGHT + 2 * wall_h + 0.01)),
        ))
    camera = Camera.look_at(eye=(1.40, 0.0, 1.00), target=pose.t, fov_deg=fov_deg)
    scene = Scene(object=obj, obstacles=tuple(obstacles), camera=camera, tag=tag)
    check_scene(scene)
    return scene
