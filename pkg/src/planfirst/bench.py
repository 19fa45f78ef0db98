"""Paired benchmark harness, threshold sweep, and evaluator PR analysis.

Both pipelines see identical scenes (same scene seed and candidate seed per
trial). Reports embed the resolved config and every seed, so any number in a
report is reproducible from the report alone.
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .bps import BasisSet
from .datagen import load_dataset
from .geometry import PointCloud, sample_scene
from .grasp_models import encode_centered, evaluator_input
from .kinematics import JointConfig, RobotModel, open_hand_preshape
from .neural import Mlp, forward
from .pipeline import PipelineResult, run_plan_first, run_score_first
from .planner import PlannerConfig


class MissingArtifactError(FileNotFoundError):
    """A required input artifact (dataset, checkpoint) does not exist."""


def home_start(model: RobotModel) -> JointConfig:
    return JointConfig(arm=np.zeros(model.n_arm), hand=open_hand_preshape(model))


def binomial_ci(successes: int, n: int, z: float = 1.96) -> tuple[float, float]:
    """Wilson score interval for a binomial proportion."""
    if n == 0:
        return (0.0, 0.0)
    p = successes / n
    denom = 1 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return (max(0.0, center - half), min(1.0, center + half))


def paired_diff_ci(a: np.ndarray, b: np.ndarray, z: float = 1.96) -> tuple[float, float, float]:
    """Mean difference a-b with a normal-approximation CI over paired trials."""
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    mean = float(d.mean())
    half = z * float(d.std(ddof=1)) / math.sqrt(len(d)) if len(d) > 1 else 0.0
    return mean, mean - half, mean + half


def run_paired_trial(trial: int, model: RobotModel, basis: BasisSet,
                     gen_net: Mlp, ev_net: Mlp, *, scene_seed: int,
                     difficulty: str, shelf_prob: float, k: int,
                     max_attempts: int, n_rays: int,
                     cfg: PlannerConfig) -> dict:
    """One paired trial: both methods on the identical scene and seed."""
    scene = sample_scene(scene_seed, difficulty=difficulty, shelf_prob=shelf_prob)
    start = home_start(model)
    pf = run_plan_first(scene, model, basis, gen_net, ev_net, start,
                        k=k, seed=trial, cfg=cfg, n_rays=n_rays)
    sf = run_score_first(scene, model, basis, gen_net, ev_net, start,
                         k=k, seed=trial, cfg=cfg, max_attempts=max_attempts,
                         n_rays=n_rays)
    return {
        "trial": trial,
        "scene_seed": scene_seed,
        "scene_tag": scene.tag,
        "plan_first": pf.to_dict(),
        "score_first": sf.to_dict(),
    }


def run_benchmark(model: RobotModel, basis: BasisSet, gen_net: Mlp,
                  ev_net: Mlp, out_dir, *, trials: int, k: int,
                  max_attempts: int, scene_seed0: int, difficulty: str,
                  shelf_prob: float, n_rays: int, cfg: PlannerConfig,
                  jobs: int = 1, config_snapshot: dict | None = None) -> dict:
    """Run paired trials, write trials.jsonl + report.json, return the report."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    args = [dict(trial=t, scene_seed=scene_seed0 + t) for t in range(trials)]

    def one(a):
        return run_paired_trial(a["trial"], model, basis, gen_net, ev_net,
                                scene_seed=a["scene_seed"],
                                difficulty=difficulty, shelf_prob=shelf_prob,
                                k=k, max_attempts=max_attempts, n_rays=n_rays,
                                cfg=cfg)

    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            rows = list(ex.map(_trial_worker,
                               [(a, model, basis, gen_net, ev_net, difficulty,
                                 shelf_prob, k, max_attempts, n_rays, cfg)
                                for a in args]))
    else:
        rows = [one(a) for a in args]

    with open(out / "trials.jsonl", "w") as f:
        for row in rows:  # already in trial-index order
            f.write(json.dumps(row, sort_keys=True) + "\n")

    report = summarize_trials(rows, trials=trials)
    report["config"] = config_snapshot or {}
    report["seeds"] = {
        "scene_seed0": scene_seed0,
        "trial_seeds": "trial index t uses candidate seed t and scene seed scene_seed0+t",
    }
    report["trials_path"] = str(out / "trials.jsonl")
    with open(out / "report.json", "w") as f:
        json.dump(report, f, sort_keys=True, indent=2)
    return report


def _trial_worker(packed):
    a, model, basis, gen_net, ev_net, difficulty, shelf_prob, k, max_attempts, n_rays, cfg = packed
    return run_paired_trial(a["trial"], model, basis, gen_net, ev_net,
                            scene_seed=a["scene_seed"], difficulty=difficulty,
                            shelf_prob=shelf_prob, k=k,
                            max_attempts=max_attempts, n_rays=n_rays, cfg=cfg)


def summarize_trials(rows: list[dict], trials: int) -> dict:
    def stats(key):
        res = [r[key] for r in rows]
        succ = sum(1 for r in res if r["actual_success"])
        executed = sum(1 for r in res if r["executed"])
        scores = [r["predicted_success"] for r in res
                  if r["executed"] and not math.isnan(r["predicted_success"])]
        lo, hi = binomial_ci(succ, trials)
        return {
            "successes": succ,
            "trials": trials,
            "success_rate": succ / trials,
            "success_ci95": [lo, hi],
            "executed": executed,
            "not_executed": trials - executed,
            "mean_predicted_success": (sum(scores) / len(scores)) if scores else None,
        }

    pf = np.array([r["plan_first"]["actual_success"] for r in rows], dtype=float)
    sf = np.array([r["score_first"]["actual_success"] for r in rows], dtype=float)
    diff, dlo, dhi = paired_diff_ci(pf, sf)
    return {
        "plan_first": stats("plan_first"),
        "score_first": stats("score_first"),
        "paired_diff": {"mean": diff, "ci95": [dlo, dhi]},
    }


def threshold_sweep(trials_path, thresholds_m: list[float]) -> list[dict]:
    """Inclusion fraction of actually-successful plan-first grasps whose
    terminal position error passes each threshold (rotation held at the
    planner default 14 deg per axis)."""
    rot_thresh = math.radians(14.0)
    rows = []
    with open(trials_path) as f:
        for line in f:
            rows.append(json.loads(line))
    wins = [r["plan_first"]["diagnostics"] for r in rows
            if r["plan_first"]["actual_success"]]
    table = []
    for thr in sorted(thresholds_m):
        if wins:
            n_in = sum(1 for w in wins
                       if w is not None and w["pos_err"] <= thr
                       and all(e <= rot_thresh for e in w["rot_err"]))
            frac = n_in / len(wins)
        else:
            frac = None
        table.append({"threshold_m": thr, "fraction_included": frac,
                      "n_successful": len(wins)})
    return table


def evaluator_scores(ev_net: Mlp, basis: BasisSet, dataset_path,
                     holdout_frac: float = 0.2) -> tuple[np.ndarray, np.ndarray]:
    """(scores, labels) on the held-out scene split of a labelled dataset.

    The split is by sorted scene seed with the last `holdout_frac` fraction
    held out, matching the training split.
    """
    records, clouds = load_dataset(dataset_path)
    seeds = sorted({r["scene_seed"] for r in records})
    cut = int(round((1.0 - holdout_frac) * len(seeds)))
    held = set(seeds[cut:])
    enc_by = {}
    scores, labels = [], []
    for r in records:
        if r["scene_seed"] not in held:
            continue
        if r["cloud"] not in enc_by:
            enc_by[r["cloud"]] = encode_centered(basis, PointCloud(clouds[r["cloud"]]))
        enc, cen = enc_by[r["cloud"]]
        x = evaluator_input(enc, cen, np.asarray(r["grasp"]))
        scores.append(float(forward(ev_net, x[None])[0][0, 0]))
        labels.append(int(r["label"]))
    return np.asarray(scores), np.asarray(labels)


def roc_auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Rank-based ROC-AUC (ties get midranks)."""
    labels = np.asarray(labels)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("ROC-AUC needs both classes present")
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores), dtype=float)
    s = np.asarray(scores)[order]
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and s[j + 1] == s[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    pos_ranks = ranks[labels == 1].sum()
    return float((pos_ranks - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def pr_table(scores: np.ndarray, labels: np.ndarray) -> list[dict]:
    """(threshold, precision, recall) over sorted unique score thresholds."""
    labels = np.asarray(labels)
    if labels.sum() in (0, len(labels)):
        raise ValueError("precision-recall needs both classes present")
    out = []
    for thr in np.unique(scores):
        pred = scores >= thr
        tp = int((pred & (labels == 1)).sum())
        fp = int((pred & (labels == 0)).sum())
        fn = int((~pred & (labels == 1)).sum())
        precision = tp / (tp + fp) if (tp + fp) else 1.0
        recall = tp / (tp + fn)
        out.append({"threshold": float(thr), "precision": precision,
                    "recall": recall})
    return out
