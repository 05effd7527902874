"""Command line surface: one binary, one subcommand per pipeline stage.

Exit codes: 0 success, 1 validation error (bad flags or bad values),
2 runtime failure. Every run prints a single JSON line to stdout with
at least the resolved seed and a hash of the resolved configuration;
diagnostics go to stderr.

Config files are flat JSON. Recognized keys (all optional):
  lambda, lr, epochs, batch_size, probe_l2, mask_mode,
  patch_size, embed_dim, num_layers, num_heads, mlp_ratio
Flags override file values; file values override defaults.
"""

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from .archive import load_archive, save_archive
from .data import (
    GenConfig,
    ensure_split,
    generate_synthetic,
    prompt_vocab,
    read_manifest,
    role_samples,
    split_samples,
)
from .errors import SchemaViolation, SegpromptError, ValidationError
from .gradcheck import composite_gradcheck
from .images import load_external_mask, read_image, write_mask
from .model import ArchConfig, load_checkpoint, save_checkpoint
from .segmentation import iou, segment
from .training import (
    ProbeModel,
    TrainConfig,
    evaluate,
    extract_features,
    logistic_probe,
    run_experiment,
    train,
    write_report,
)

_CONFIG_KEYS = {
    "lambda": 0.5,
    "lr": 3e-4,
    "epochs": 30,
    "batch_size": 16,
    "probe_l2": 1e-2,
    "mask_mode": "builtin",
    "patch_size": 8,
    "embed_dim": 64,
    "num_layers": 2,
    "num_heads": 4,
    "mlp_ratio": 4,
}
_ARCH_KEYS = ("patch_size", "embed_dim", "num_layers", "num_heads", "mlp_ratio")


def _canonical(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _config_hash(obj):
    return hashlib.sha256(_canonical(obj).encode("utf-8")).hexdigest()


def _read_config_file(path):
    if path is None:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise SchemaViolation(f"config file is not valid JSON: {e}") from None
    if not isinstance(doc, dict):
        raise SchemaViolation("config file must hold a JSON object")
    unknown = sorted(set(doc) - set(_CONFIG_KEYS))
    if unknown:
        raise ValidationError(f"unknown config keys: {unknown}")
    return doc


def _resolve_train_config(manifest, config_path, seed, mask_mode=None):
    flat = dict(_CONFIG_KEYS)
    flat.update(_read_config_file(config_path))
    if mask_mode is not None:
        flat["mask_mode"] = mask_mode
    arch = ArchConfig(
        num_classes=len(manifest.classes),
        vocab=prompt_vocab(manifest.classes),
        image_size=manifest.image_size,
        **{k: flat[k] for k in _ARCH_KEYS},
    )
    return TrainConfig(
        arch=arch,
        lam=flat["lambda"],
        lr=flat["lr"],
        epochs=flat["epochs"],
        batch_size=flat["batch_size"],
        seed=seed,
        mask_mode=flat["mask_mode"],
        probe_l2=flat["probe_l2"],
    )


# --- subcommands -------------------------------------------------------------


def cmd_gen_data(args):
    cfg = GenConfig(
        num_classes=args.classes,
        per_class_train=args.per_class,
        per_class_test=max(1, args.per_class // 2),
        clutter_strength=args.clutter,
        spurious_corr_train=args.spurious_train,
        spurious_corr_test=args.spurious_test,
        seed=args.seed,
    )
    cfg_dict = {
        "num_classes": cfg.num_classes,
        "per_class_train": cfg.per_class_train,
        "per_class_test": cfg.per_class_test,
        "image_size": cfg.image_size,
        "clutter_strength": cfg.clutter_strength,
        "spurious_corr_train": cfg.spurious_corr_train,
        "spurious_corr_test": cfg.spurious_corr_test,
        "seed": cfg.seed,
    }
    manifest = generate_synthetic(cfg, args.out)
    return {
        "command": "gen-data",
        "seed": cfg.seed,
        "config_hash": _config_hash(cfg_dict),
        "root": args.out,
        "classes": manifest.classes,
        "samples": len(manifest.samples),
    }


def cmd_segment(args):
    manifest = read_manifest(args.data)
    os.makedirs(args.out, exist_ok=True)
    size = manifest.image_size
    ious = []
    for rec in manifest.samples:
        if args.external:
            mask = load_external_mask(
                os.path.join(args.external, rec["id"] + ".mask.pgm"), (size, size)
            )
        else:
            mask = segment(read_image(os.path.join(args.data, rec["image"])))
        write_mask(os.path.join(args.out, rec["id"] + ".mask.pgm"), mask)
        gt = load_external_mask(os.path.join(args.data, rec["mask"]), (size, size))
        ious.append(iou(mask, gt))
    cfg_dict = {"data": args.data, "external": args.external, "out": args.out}
    return {
        "command": "segment",
        "seed": None,
        "config_hash": _config_hash(cfg_dict),
        "masks": len(ious),
        "mean_iou_vs_gt": round(float(np.mean(ious)), 6),
        "source": "external" if args.external else "builtin",
    }


def cmd_train(args):
    manifest = read_manifest(args.data)
    cfg = _resolve_train_config(manifest, args.config, args.seed, args.mask_mode)
    split = ensure_split(manifest, args.fraction, args.seed)
    params, history = train(cfg, manifest, split, mask_dir=args.masks)
    resolved = cfg.to_dict()
    save_checkpoint(
        args.out,
        params,
        extra={
            "train_config": resolved,
            "fraction": args.fraction,
            "history": history,
        },
    )
    return {
        "command": "train",
        "seed": args.seed,
        "config_hash": _config_hash(resolved),
        "checkpoint": args.out,
        "fraction": args.fraction,
        "train_samples": sum(len(v) for v in split.selected.values()),
        "final_loss": history[-1]["loss"] if history else None,
    }


def cmd_probe(args):
    params, sidecar = load_checkpoint(args.ckpt)
    train_cfg = sidecar["train_config"]
    manifest = read_manifest(args.data)
    split = ensure_split(manifest, args.fraction, args.seed)
    feats, labels = extract_features(
        params,
        manifest,
        split_samples(manifest, split),
        train_cfg["mask_mode"],
        mask_dir=args.masks,
    )
    probe = logistic_probe(
        feats,
        labels,
        l2=train_cfg["probe_l2"],
        num_classes=params.cfg.num_classes,
    )
    save_archive(args.out, {"weights": probe.weights,
                            "bias": probe.bias.reshape(1, -1)})
    features_path = args.out + ".features.mfc1"
    save_archive(features_path, {
        "features": feats,
        "labels": labels.astype(np.float64).reshape(-1, 1),
    })
    meta = {
        "fraction": args.fraction,
        "seed": args.seed,
        "iterations": probe.iterations,
        "final_objective": probe.final_objective,
        "converged": probe.converged,
        "train_config": train_cfg,
    }
    with open(args.out + ".json", "w", encoding="utf-8") as f:
        f.write(_canonical(meta) + "\n")
    return {
        "command": "probe",
        "seed": args.seed,
        "config_hash": _config_hash(train_cfg),
        "probe": args.out,
        "features": features_path,
        "train_samples": int(labels.size),
        "iterations": probe.iterations,
        "converged": probe.converged,
    }


def cmd_eval(args):
    params, sidecar = load_checkpoint(args.ckpt)
    train_cfg = sidecar["train_config"]
    arrays = load_archive(args.probe)
    if "weights" not in arrays or "bias" not in arrays:
        raise SchemaViolation(f"{args.probe}: probe archive needs weights and bias")
    probe = ProbeModel(weights=arrays["weights"], bias=arrays["bias"].ravel())
    manifest = read_manifest(args.data)
    feats, labels = extract_features(
        params,
        manifest,
        role_samples(manifest, "test"),
        train_cfg["mask_mode"],
        mask_dir=args.masks,
    )
    metrics = evaluate(probe, feats, labels, num_classes=params.cfg.num_classes)
    doc = {
        "accuracy": metrics["accuracy"],
        "per_class_accuracy": metrics["per_class_accuracy"],
        "confusion": metrics["confusion"],
        "classes": manifest.classes,
        "test_samples": int(labels.size),
        "train_config": train_cfg,
    }
    with open(args.out, "w", encoding="utf-8") as f:
        f.write(_canonical(doc) + "\n")
    return {
        "command": "eval",
        "seed": train_cfg.get("seed"),
        "config_hash": _config_hash(train_cfg),
        "report": args.out,
        "accuracy": metrics["accuracy"],
    }


def cmd_experiment(args):
    manifest = read_manifest(args.data)
    cfg = _resolve_train_config(manifest, args.config, seed=0)
    fractions = [float(x) for x in args.fractions.split(",") if x]
    seeds = [int(x) for x in args.seeds.split(",") if x]
    if not fractions or not seeds:
        raise ValidationError("experiment needs at least one fraction and one seed")
    report = run_experiment(manifest, cfg, fractions, seeds, jobs=args.jobs)
    csv_path = write_report(args.out, report)
    means = {
        p: {f: report["aggregates"][p][f]["mean_accuracy"]
            for f in report["aggregates"][p]}
        for p in report["aggregates"]
    }
    return {
        "command": "experiment",
        "seed": seeds[0],
        "config_hash": _config_hash(report["config"]),
        "report": args.out,
        "csv": csv_path,
        "cells": len(report["cells"]),
        "mean_accuracy": means,
    }


def cmd_gradcheck(args):
    err = composite_gradcheck(trials=args.trials)
    ok = err < 1e-4
    summary = {
        "command": "gradcheck",
        "seed": 0,
        "config_hash": _config_hash({"trials": args.trials, "h": 1e-4}),
        "max_relative_error": err,
        "tolerance": 1e-4,
        "ok": ok,
    }
    return summary, 0 if ok else 2


# --- parser and dispatch -------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems as validation errors (exit 1)."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(1)


def build_parser():
    parser = _Parser(prog="segprompt",
                     description="mask-prompted dual-encoder pipeline")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("gen-data", parents=[], help="write a synthetic dataset",
                       description="Generate the synthetic organ-scan dataset.")
    p.add_argument("--out", required=True, help="dataset root to create")
    p.add_argument("--seed", type=int, default=0, help="generator seed")
    p.add_argument("--classes", type=int, default=4, help="number of classes (2-4)")
    p.add_argument("--per-class", type=int, default=100,
                   help="train samples per class (test gets half)")
    p.add_argument("--clutter", type=float, default=0.7,
                   help="background clutter strength in [0,1]")
    p.add_argument("--spurious-train", type=float, default=0.9,
                   help="P(marker encodes label) on train images")
    p.add_argument("--spurious-test", type=float, default=0.0,
                   help="P(marker encodes label) on test images")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("segment", help="write one mask per dataset image",
                       description="Run the built-in segmenter (or ingest "
                                   "external masks) over a dataset.")
    p.add_argument("--data", required=True, help="dataset root")
    p.add_argument("--out", required=True, help="directory for <id>.mask.pgm files")
    p.add_argument("--external", default=None, metavar="DIR",
                   help="ingest masks from DIR instead of segmenting")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("train", help="train the dual encoder on a split",
                       description="Train with the composite loss; writes an "
                                   "MFC1 checkpoint plus JSON sidecar.")
    p.add_argument("--data", required=True, help="dataset root")
    p.add_argument("--masks", default=None,
                   help="mask directory (mask-mode external)")
    p.add_argument("--config", default=None, help="flat JSON config file")
    p.add_argument("--fraction", type=float, default=1.0,
                   help="train fraction per class")
    p.add_argument("--seed", type=int, default=0, help="split/training seed")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--mask-mode", choices=["builtin", "external", "none"],
                   default=None, help="override config mask mode")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("probe", help="fit the linear probe on frozen features",
                       description="Extract frozen features for a split and fit "
                                   "the logistic-regression probe.")
    p.add_argument("--ckpt", required=True, help="checkpoint path")
    p.add_argument("--data", required=True, help="dataset root")
    p.add_argument("--masks", default=None,
                   help="mask directory (checkpoints trained with external masks)")
    p.add_argument("--fraction", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="probe archive path")
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("eval", help="score a probe on the test role",
                       description="Evaluate checkpoint+probe on the test set.")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--probe", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--masks", default=None,
                   help="mask directory (checkpoints trained with external masks)")
    p.add_argument("--out", required=True, help="metrics JSON path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("experiment", help="masked vs unmasked over a grid",
                       description="Train and probe both pipelines for every "
                                   "(fraction, seed); writes JSON + CSV.")
    p.add_argument("--data", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--fractions", required=True,
                   help="comma-separated fractions, e.g. 0.05,0.1")
    p.add_argument("--seeds", required=True, help="comma-separated seeds")
    p.add_argument("--out", required=True, help="report JSON path")
    p.add_argument("--jobs", type=int, default=1, help="parallel cells")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("gradcheck", help="verify gradients by finite differences",
                       description="Compare reverse-mode gradients of the "
                                   "composite loss against central differences.")
    p.add_argument("--trials", type=int, default=1,
                   help="independent random restarts")
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        result = args.func(args)
    except ValidationError as e:
        print(f"{type(e).__name__}: {e}", file=sys.stderr)
        return 1
    except (SegpromptError, OSError) as e:
        print(f"{type(e).__name__}: {e}", file=sys.stderr)
        return 2
    summary, code = result if isinstance(result, tuple) else (result, 0)
    print(_canonical(summary))
    return code


if __name__ == "__main__":
    sys.exit(main())
