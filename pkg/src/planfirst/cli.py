"""Command-line interface.

Subcommands: datagen, train-gen, train-ev, bench, sweep, pr. One YAML config
(--config) drives everything; --seed and --jobs override the config. Exit
codes: 0 success, 2 config error, 3 missing input artifact.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .bench import (
    MissingArtifactError,
    evaluator_scores,
    pr_table,
    roc_auc,
    run_benchmark,
    threshold_sweep,
)
from .bps import make_basis
from .config import ConfigError, config_snapshot, load_config, planner_config, robot_from_config
from .datagen import generate_dataset, load_dataset
from .geometry import PointCloud
from .grasp_models import (
    encode_centered,
    evaluator_input,
    load_model,
    make_evaluator,
    make_generator,
    save_model,
    train_evaluator,
    train_generator,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING = 3


def _basis(cfg):
    b = cfg["bps"]
    return make_basis(int(b["dim"]), radius=float(b["radius"]), seed=int(b["seed"]))


def _require(path, what: str):
    if not Path(path).exists():
        raise MissingArtifactError(f"missing {what}: {path}")
    return path


def _split_records(records, holdout_frac: float):
    seeds = sorted({r["scene_seed"] for r in records})
    cut = int(round((1.0 - holdout_frac) * len(seeds)))
    train = set(seeds[:cut])
    return ([r for r in records if r["scene_seed"] in train],
            [r for r in records if r["scene_seed"] not in train])


def _encode_all(basis, clouds):
    return {key: encode_centered(basis, PointCloud(pts))
            for key, pts in sorted(clouds.items())}


def _write_curve(path, losses):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "loss"])
        for i, loss in enumerate(losses):
            w.writerow([i, repr(float(loss))])


def cmd_datagen(cfg) -> int:
    model = robot_from_config(cfg["robot"])
    d = cfg["datagen"]
    meta = generate_dataset(
        d["out"], model,
        n_scenes=int(d["n_scenes"]), grasps_per_scene=int(d["grasps_per_scene"]),
        seed=int(d["seed"]), difficulty=cfg["scene"]["difficulty"],
        shelf_prob=float(cfg["scene"]["shelf_prob"]),
        n_rays=int(cfg["scene"]["n_rays"]), jobs=int(cfg["jobs"]),
        planner_cfg=planner_config(cfg),
        extra_meta={"config": json.loads(config_snapshot(cfg)),
                    "bps": cfg["bps"]},
    )
    print(json.dumps({k: meta[k] for k in
                      ("n_attempts", "n_positive", "positive_rate", "records_sha256")},
                     sort_keys=True))
    return EXIT_OK


def cmd_train_ev(cfg) -> int:
    model = robot_from_config(cfg["robot"])
    del model  # the evaluator trains on recorded vectors only
    ds = _require(cfg["datagen"]["out"], "dataset")
    records, clouds = load_dataset(ds)
    basis = _basis(cfg)
    enc_by = _encode_all(basis, clouds)
    e = cfg["evaluator"]
    train, _ = _split_records(records, float(e["holdout_frac"]))

    xp, xn, pv, pe, pc = [], [], [], [], []
    for r in train:
        enc, cen = enc_by[r["scene_seed"]]
        x = evaluator_input(enc, cen, np.asarray(r["grasp"]))
        if r["label"]:
            xp.append(x)
            pv.append(np.asarray(r["grasp"]))
            pe.append(enc)
            pc.append(cen)
        else:
            xn.append(x)
    if not xp or not xn:
        print("error: training split needs both labels present", file=sys.stderr)
        return EXIT_MISSING
    net = make_evaluator(int(cfg["bps"]["dim"]),
                         hidden=tuple(int(h) for h in e["hidden"]),
                         seed=int(e["seed"]))
    losses = train_evaluator(net, np.stack(xp), np.stack(xn), np.stack(pv),
                             np.stack(pe), np.stack(pc),
                             epochs=int(e["epochs"]), batch=int(e["batch"]),
                             lr=float(e["lr"]), seed=int(e["seed"]))
    out = Path(e["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(net, {"kind": "evaluator", "bps": cfg["bps"],
                     "config": json.loads(config_snapshot(cfg)),
                     "seed": int(e["seed"])}, out)
    _write_curve(out.with_suffix(".curve.csv"), losses)
    print(json.dumps({"checkpoint": str(out), "final_loss": losses[-1],
                      "n_pos": len(xp), "n_neg": len(xn)}, sort_keys=True))
    return EXIT_OK


def cmd_train_gen(cfg) -> int:
    ds = _require(cfg["datagen"]["out"], "dataset")
    records, clouds = load_dataset(ds)
    basis = _basis(cfg)
    g = cfg["generator"]
    train, _ = _split_records(records, float(cfg["evaluator"]["holdout_frac"]))
    keys = sorted(clouds.keys())
    kidx = {k: i for i, k in enumerate(keys)}
    vecs = [np.asarray(r["grasp"]) for r in train if r["label"]]
    cidx = np.asarray([kidx[r["scene_seed"]] for r in train if r["label"]], dtype=int)
    if not vecs:
        print("error: no successful grasps to fit the generator", file=sys.stderr)
        return EXIT_MISSING
    net = make_generator(int(cfg["bps"]["dim"]),
                         hidden=tuple(int(h) for h in g["hidden"]),
                         n_comp=int(g["n_components"]), seed=int(g["seed"]))
    losses = train_generator(net, basis, [clouds[k] for k in keys],
                             np.stack(vecs), cidx,
                             epochs=int(g["epochs"]), batch=int(g["batch"]),
                             lr=float(g["lr"]), seed=int(g["seed"]),
                             noise_scale=float(g["noise_scale"]))
    out = Path(g["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(net, {"kind": "generator", "bps": cfg["bps"],
                     "n_components": int(g["n_components"]),
                     "config": json.loads(config_snapshot(cfg)),
                     "seed": int(g["seed"])}, out)
    _write_curve(out.with_suffix(".curve.csv"), losses)
    print(json.dumps({"checkpoint": str(out), "final_loss": losses[-1],
                      "n_grasps": len(vecs)}, sort_keys=True))
    return EXIT_OK


def cmd_bench(cfg, trials: int | None = None) -> int:
    model = robot_from_config(cfg["robot"])
    b = cfg["bench"]
    missing = [p for p in (cfg["generator"]["out"], cfg["evaluator"]["out"])
               if not Path(p).exists()]
    if missing:
        raise MissingArtifactError(
            "missing model checkpoints: " + ", ".join(str(m) for m in missing))
    gen_net, _ = load_model(cfg["generator"]["out"])
    ev_net, _ = load_model(cfg["evaluator"]["out"])
    basis = _basis(cfg)
    n_trials = int(trials if trials is not None else b["trials"])
    if n_trials < 1:
        raise ConfigError("config key bench.trials must be >= 1")
    report = run_benchmark(
        model, basis, gen_net, ev_net, b["out"],
        trials=n_trials, k=int(b["k"]), max_attempts=int(b["max_attempts"]),
        scene_seed0=int(b["scene_seed"]), difficulty=cfg["scene"]["difficulty"],
        shelf_prob=float(cfg["scene"]["shelf_prob"]),
        n_rays=int(cfg["scene"]["n_rays"]), cfg=planner_config(cfg),
        jobs=int(cfg["jobs"]),
        config_snapshot=json.loads(config_snapshot(cfg)))
    print(json.dumps({
        "plan_first_success_rate": report["plan_first"]["success_rate"],
        "score_first_success_rate": report["score_first"]["success_rate"],
        "paired_diff": report["paired_diff"],
        "report": str(Path(b["out"]) / "report.json"),
    }, sort_keys=True))
    return EXIT_OK


def cmd_sweep(cfg) -> int:
    b = cfg["bench"]
    trials_path = _require(Path(b["out"]) / "trials.jsonl", "benchmark trials file")
    thresholds = [float(t) / 1000.0 for t in b["sweep_thresholds_mm"]]
    table = threshold_sweep(trials_path, thresholds)
    out = Path(b["out"]) / "sweep.csv"
    if table and table[0]["n_successful"] == 0:
        print("warning: no successful plan-first grasps; sweep table is empty",
              file=sys.stderr)
    with open(out, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["threshold_m", "fraction_included", "n_successful"])
        for row in table:
            w.writerow([repr(row["threshold_m"]),
                        "" if row["fraction_included"] is None
                        else repr(row["fraction_included"]),
                        row["n_successful"]])
    print(json.dumps({"sweep": str(out), "rows": len(table)}, sort_keys=True))
    return EXIT_OK


def cmd_pr(cfg) -> int:
    ds = _require(cfg["datagen"]["out"], "dataset")
    ev_path = _require(cfg["evaluator"]["out"], "evaluator checkpoint")
    ev_net, _ = load_model(ev_path)
    basis = _basis(cfg)
    scores, labels = evaluator_scores(
        ev_net, basis, ds, holdout_frac=float(cfg["evaluator"]["holdout_frac"]))
    try:
        auc = roc_auc(scores, labels)
        table = pr_table(scores, labels)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_MISSING
    out = Path(cfg["bench"]["out"])
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "pr.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["threshold", "precision", "recall"])
        for row in table:
            w.writerow([repr(row["threshold"]), repr(row["precision"]),
                        repr(row["recall"])])
    print(json.dumps({"roc_auc": auc, "pr": str(out / "pr.csv"),
                      "n_holdout": len(labels)}, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="planfirst",
        description="Plan-first grasping pipeline: data, training, benchmarks.")
    p.add_argument("--config", default=None, help="YAML config file")
    p.add_argument("--seed", type=int, default=None, help="override config seed")
    p.add_argument("--jobs", type=int, default=None, help="worker processes")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("datagen", help="generate a labelled grasp-attempt dataset")
    sub.add_parser("train-gen", help="train the grasp generator")
    sub.add_parser("train-ev", help="train the grasp evaluator")
    bench = sub.add_parser("bench", help="run the paired benchmark")
    bench.add_argument("--trials", type=int, default=None)
    sub.add_parser("sweep", help="position-threshold sweep over bench results")
    sub.add_parser("pr", help="evaluator precision-recall and ROC-AUC")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        overrides: dict = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
            overrides["datagen"] = {"seed": args.seed}
            overrides["generator"] = {"seed": args.seed}
            overrides["evaluator"] = {"seed": args.seed}
        if args.jobs is not None:
            overrides["jobs"] = args.jobs
        cfg = load_config(args.config, overrides)
        if args.command == "datagen":
            return cmd_datagen(cfg)
        if args.command == "train-gen":
            return cmd_train_gen(cfg)
        if args.command == "train-ev":
            return cmd_train_ev(cfg)
        if args.command == "bench":
            return cmd_bench(cfg, trials=args.trials)
        if args.command == "sweep":
            return cmd_sweep(cfg)
        if args.command == "pr":
            return cmd_pr(cfg)
        raise AssertionError(f"unhandled command {args.command}")
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingArtifactError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_MISSING


if __name__ == "__main__":
    sys.exit(main())
