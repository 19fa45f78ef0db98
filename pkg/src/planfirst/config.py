"""YAML configuration: schema, validation, and object construction.

One config file drives every CLI command. Unknown or missing keys are
reported by their dotted path. Angles are degrees in the file and radians
internally.
"""

from __future__ import annotations

import copy
import json

import numpy as np
import yaml

from .kinematics import (
    CollisionSphere,
    Finger,
    Joint,
    RobotModel,
)
from .planner import PlannerConfig
from .se3 import Pose


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending dotted key."""


DEFAULT_CONFIG: dict = {
    "seed": 0,
    "jobs": 1,
    "robot": None,  # None -> the documented default robot
    "bps": {
        "dim": 512,
        "radius": 0.15,
        "seed": 0,
    },
    "planner": {
        "waypoints": 16,
        "iterations": 60,
        "step_size": 5e-4,
        "w_pos": 120.0,
        "w_rot": 4.0,
        "w_col": 400.0,
        "w_smooth": 2.0,
        "w_limit": 50.0,
        "margin": 0.01,
        "pos_threshold": 0.005,
        "rot_threshold_deg": 14.0,
        "ik_iters": 60,
        "ik_damping": 0.1,
        "grad_clip": 1.0,
        "momentum": 0.9,
        "stall_iters": 12,
    },
    "scene": {
        "difficulty": "medium",
        "shelf_prob": 0.5,
        "n_rays": 4096,
    },
    "datagen": {
        "out": "artifacts/dataset",
        "n_scenes": 640,
        "grasps_per_scene": 32,
        "seed": 0,
    },
    "generator": {
        "hidden": [256, 256],
        "n_components": 8,
        "epochs": 60,
        "batch": 128,
        "lr": 1e-3,
        "seed": 0,
        "noise_scale": 0.002,
        "out": "artifacts/generator.ckpt",
    },
    "evaluator": {
        "hidden": [256, 256],
        "epochs": 40,
        "batch": 192,
        "lr": 1e-3,
        "seed": 0,
        "holdout_frac": 0.2,
        "out": "artifacts/evaluator.ckpt",
    },
    "bench": {
        "trials": 200,
        "k": 32,
        "max_attempts": 3,
        "scene_seed": 10000,
        "out": "artifacts/bench",
        "sweep_thresholds_mm": [1, 2, 3, 5, 8, 12, 20, 35, 60, 100],
    },
}

# Leaves whose YAML value may be any of several types.
_OPTIONAL_KEYS = {"robot"}


def _check_keys(user: dict, defaults: dict, prefix: str = "") -> None:
    for key, val in user.items():
        dotted = f"{prefix}{key}"
        if key not in defaults:
            raise ConfigError(f"unknown config key: {dotted}")
        dval = defaults[key]
        if isinstance(dval, dict) and dval:
            if not isinstance(val, dict):
                raise ConfigError(f"config key {dotted} must be a mapping")
            _check_keys(val, dval, dotted + ".")
        elif dotted not in _OPTIONAL_KEYS and val is not None:
            if isinstance(dval, bool) != isinstance(val, bool):
                raise ConfigError(f"config key {dotted} has the wrong type")
            if isinstance(dval, (int, float)) and not isinstance(val, (int, float)):
                raise ConfigError(f"config key {dotted} has the wrong type")
            if isinstance(dval, str) and not isinstance(val, str):
                raise ConfigError(f"config key {dotted} has the wrong type")
            if isinstance(dval, list) and not isinstance(val, list):
                raise ConfigError(f"config key {dotted} has the wrong type")


def _merge(user: dict, defaults: dict) -> dict:
    out = copy.deepcopy(defaults)
    for key, val in user.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(val, out[key])
        else:
            out[key] = copy.deepcopy(val)
    return out


def load_config(path=None, overrides: dict | None = None) -> dict:
    """Resolved config: defaults <- file <- overrides, fully validated."""
    user: dict = {}
    if path is not None:
        try:
            with open(path) as f:
                user = yaml.safe_load(f) or {}
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except yaml.YAMLError as e:
            raise ConfigError(f"config file is not valid YAML: {e}")
        if not isinstance(user, dict):
            raise ConfigError("config file must contain a mapping at top level")
    _check_keys(user, DEFAULT_CONFIG)
    cfg = _merge(user, DEFAULT_CONFIG)
    if overrides:
        cfg = _merge(overrides, cfg)
    _validate_values(cfg)
    return cfg


def _validate_values(cfg: dict) -> None:
    if cfg["scene"]["difficulty"] not in ("easy", "medium", "hard"):
        raise ConfigError("config key scene.difficulty must be easy|medium|hard")
    if not 0.0 <= cfg["scene"]["shelf_prob"] <= 1.0:
        raise ConfigError("config key scene.shelf_prob must be in [0, 1]")
    for key in ("datagen.n_scenes", "datagen.grasps_per_scene", "bench.k",
                "bench.max_attempts", "bps.dim", "scene.n_rays"):
        sec, name = key.split(".")
        if int(cfg[sec][name]) < 1:
            raise ConfigError(f"config key {key} must be >= 1")
    if cfg["bench"]["trials"] < 1:
        raise ConfigError("config key bench.trials must be >= 1")


def planner_config(cfg: dict) -> PlannerConfig:
    p = cfg["planner"]
    try:
        return PlannerConfig(
            waypoints=int(p["waypoints"]),
            iterations=int(p["iterations"]),
            step_size=float(p["step_size"]),
            w_pos=float(p["w_pos"]),
            w_rot=float(p["w_rot"]),
            w_col=float(p["w_col"]),
            w_smooth=float(p["w_smooth"]),
            w_limit=float(p["w_limit"]),
            margin=float(p["margin"]),
            pos_threshold=float(p["pos_threshold"]),
            rot_threshold_deg=float(p["rot_threshold_deg"]),
            ik_iters=int(p["ik_iters"]),
            ik_damping=float(p["ik_damping"]),
            grad_clip=float(p["grad_clip"]),
            momentum=float(p["momentum"]),
            stall_iters=int(p["stall_iters"]),
        )
    except (ValueError, TypeError) as e:
        raise ConfigError(f"invalid planner config: {e}")


def robot_from_config(spec: dict | None) -> RobotModel:
    """Build a robot from the config's `robot` section (None -> default).

    Schema (angles in degrees):
        arm: [{axis: [x,y,z], offset_t: [x,y,z], lo_deg, hi_deg}, ...]
        palm_offset_t: [x, y, z]
        fingers: [{base_t: [x,y,z], base_yaw_deg, joints: [{axis, offset_t,
                   lo_deg, hi_deg}, ...], tip_t: [x,y,z]}, ...]
        spheres: [{link, center: [x,y,z], radius, fingertip: bool}, ...]
        thumb_index: int
    """
    from .kinematics import default_robot

    if spec is None:
        return default_robot()
    try:
        arm = tuple(
            Joint(axis=np.asarray(j["axis"], dtype=float),
                  offset=Pose(t=np.asarray(j.get("offset_t", (0, 0, 0)), dtype=float)),
                  lo=np.radians(float(j["lo_deg"])),
                  hi=np.radians(float(j["hi_deg"])))
            for j in spec["arm"]
        )
        fingers = []
        for f in spec["fingers"]:
            base = Pose.from_axis_angle(
                [0, 0, 1], np.radians(float(f.get("base_yaw_deg", 0.0))),
                t=np.asarray(f["base_t"], dtype=float))
            joints = tuple(
                Joint(axis=np.asarray(j["axis"], dtype=float),
                      offset=Pose(t=np.asarray(j.get("offset_t", (0, 0, 0)), dtype=float)),
                      lo=np.radians(float(j["lo_deg"])),
                      hi=np.radians(float(j["hi_deg"])))
                for j in f["joints"]
            )
            fingers.append(Finger(base=base, joints=joints,
                                  tip=Pose(t=np.asarray(f["tip_t"], dtype=float))))
        spheres = tuple(
            CollisionSphere(link=int(s["link"]),
                            center=tuple(s["center"]),
                            radius=float(s["radius"]),
                            fingertip=bool(s.get("fingertip", False)))
            for s in spec.get("spheres", [])
        )
        return RobotModel(
            arm=arm,
            palm_offset=Pose(t=np.asarray(spec.get("palm_offset_t", (0, 0, 0)), dtype=float)),
            fingers=tuple(fingers),
            spheres=spheres,
            thumb_index=int(spec.get("thumb_index", 0)),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"invalid robot config: {e}")


def config_snapshot(cfg: dict) -> str:
    """Canonical JSON of the resolved config (embedded in every report)."""
    return json.dumps(cfg, sort_keys=True)
