"""Training on the composite objective, frozen-feature probing, experiments."""

import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import heads
from .data import ensure_split, read_manifest, role_samples, split_samples
from .errors import (
    DimensionMismatch,
    EmptySplit,
    LambdaOutOfRange,
    MissingClass,
    ValidationError,
)
from .images import load_external_mask, read_image
from .model import (
    ArchConfig,
    init_params,
    logit_scale,
    pool_project,
    text_matrix,
    vit_encode,
)
from .optim import AdamState, adam_step, collect_grads, zero_grads
from .rng import Rng
from .segmentation import apply_mask, segment

_EPOCH_TAG = 5  # rng stream for per-epoch batch order

MASK_MODES = ("builtin", "external", "none")


@dataclass
class TrainConfig:
    arch: ArchConfig
    lam: float = 0.5
    lr: float = 3e-4
    epochs: int = 30
    batch_size: int = 16
    seed: int = 0
    mask_mode: str = "builtin"
    probe_l2: float = 1e-2

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise LambdaOutOfRange(f"lambda must lie in [0, 1], got {self.lam}")
        if self.epochs < 0:
            raise ValidationError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if self.mask_mode not in MASK_MODES:
            raise ValidationError(
                f"mask_mode must be one of {MASK_MODES}, got {self.mask_mode!r}"
            )

    def to_dict(self):
        return {
            "arch": self.arch.to_dict(),
            "lambda": self.lam,
            "lr": self.lr,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "seed": self.seed,
            "mask_mode": self.mask_mode,
            "probe_l2": self.probe_l2,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        arch = ArchConfig.from_dict(d.pop("arch"))
        d["lam"] = d.pop("lambda", 0.5)
        return cls(arch=arch, **d)


# masks are a pure function of the image, so share them across cells
_BUILTIN_MASK_CACHE = {}


def mask_for(manifest, rec, mask_mode, mask_dir=None):
    """The mask a pipeline applies to one sample, or None for mode 'none'."""
    if mask_mode == "none":
        return None
    if mask_mode == "builtin":
        key = (manifest.root, rec["id"])
        if key not in _BUILTIN_MASK_CACHE:
            image = read_image(os.path.join(manifest.root, rec["image"]))
            _BUILTIN_MASK_CACHE[key] = segment(image)
        return _BUILTIN_MASK_CACHE[key]
    if mask_dir is None:
        raise ValidationError("mask_mode 'external' needs a mask directory")
    path = os.path.join(mask_dir, rec["id"] + ".mask.pgm")
    size = manifest.image_size
    return load_external_mask(path, (size, size))


def _load_input(manifest, rec, mask_mode, mask_dir):
    image = read_image(os.path.join(manifest.root, rec["image"]))
    mask = mask_for(manifest, rec, mask_mode, mask_dir)
    return image if mask is None else apply_mask(image, mask)


def batch_loss(params, images, labels, lam):
    """Composite loss over already-masked images; returns LossBreakdown."""
    texts = text_matrix(params)
    t_ctx = heads.context_embedding(texts)
    scale = logit_scale(params)
    z_rows = []
    pooled_rows = []
    for image in images:
        tokens = vit_encode(params, image)
        z_rows.append(pool_project(tokens, params))
        fused = heads.fuse(tokens, t_ctx, params)
        pooled_rows.append(ad.mean_rows(fused))
    z = ad.concat_rows(z_rows)
    logits = heads.classify_pooled(ad.concat_rows(pooled_rows), params)
    l_c = heads.contrastive_loss(z, texts, labels, scale)
    l_e = ad.cross_entropy(logits, labels)
    return heads.composite_loss(l_c, l_e, lam)


def train(cfg, manifest, split, mask_dir=None):
    """Adam over the composite loss on the split's samples.

    Returns (params, history); history has one entry per epoch with the
    mean batch losses. Deterministic for a fixed config and dataset.
    """
    records = split_samples(manifest, split)
    if not records:
        raise EmptySplit("split selects no samples")
    inputs = [_load_input(manifest, rec, cfg.mask_mode, mask_dir)
              for rec in records]
    labels = [rec["label"] for rec in records]
    params = init_params(cfg.arch, cfg.seed)
    state = AdamState(params, lr=cfg.lr)
    history = []
    n = len(records)
    for epoch in range(cfg.epochs):
        order = list(range(n))
        Rng(cfg.seed).derive(_EPOCH_TAG, epoch).shuffle(order)
        sums = {"loss": 0.0, "contrastive": 0.0, "ce": 0.0}
        batches = 0
        for start in range(0, n, cfg.batch_size):
            chunk = order[start : start + cfg.batch_size]
            breakdown = batch_loss(
                params,
                [inputs[i] for i in chunk],
                [labels[i] for i in chunk],
                cfg.lam,
            )
            zero_grads(params)
            ad.backward(breakdown.l_total)
            adam_step(params, collect_grads(params), state)
            sums["loss"] += breakdown.l_total.item()
            sums["contrastive"] += breakdown.l_contrastive.item()
            sums["ce"] += breakdown.l_ce.item()
            batches += 1
        history.append({
            "epoch": epoch,
            "loss": sums["loss"] / batches,
            "contrastive": sums["contrastive"] / batches,
            "ce": sums["ce"] / batches,
        })
    zero_grads(params)
    return params, history


def extract_features(params, manifest, records, mask_mode, mask_dir=None):
    """Frozen fused features: meanpool of M per sample, shape (len, d).

    No parameter is touched; returns (features, labels) as numpy arrays.
    """
    with ad.no_grad():
        texts = text_matrix(params)
        t_ctx = heads.context_embedding(texts)
        rows = []
        labels = []
        for rec in records:
            image = _load_input(manifest, rec, mask_mode, mask_dir)
            tokens = vit_encode(params, image)
            fused = heads.fuse(tokens, t_ctx, params)
            rows.append(ad.mean_rows(fused).data[0])
            labels.append(rec["label"])
    return np.array(rows), np.array(labels, dtype=np.int64)


# --- linear probe -----------------------------------------------------------------


@dataclass
class ProbeModel:
    """Multinomial logistic regression weights, row per class."""

    weights: np.ndarray  # (C, d)
    bias: np.ndarray  # (C,)
    iterations: int = 0
    final_objective: float = 0.0
    converged: bool = True

    def logits(self, features):
        if features.shape[1] != self.weights.shape[1]:
            raise DimensionMismatch(
                f"features have {features.shape[1]} columns, "
                f"probe expects {self.weights.shape[1]}"
            )
        return features @ self.weights.T + self.bias

    def predict(self, features):
        # np.argmax returns the first maximum: ties go to the smaller class
        return np.argmax(self.logits(features), axis=1)


def _probe_objective(x, y_onehot, w, b, l2):
    logits = x @ w + b
    m = logits.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(logits - m).sum(axis=1))
    nll = (lse - (logits * y_onehot).sum(axis=1)).mean()
    return nll + 0.5 * l2 * (w * w).sum()


def _probe_grads(x, y_onehot, w, b, l2):
    logits = x @ w + b
    m = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - m)
    p = e / e.sum(axis=1, keepdims=True)
    diff = (p - y_onehot) / x.shape[0]
    return x.T @ diff + l2 * w, diff.sum(axis=0)


def logistic_probe(features, labels, l2=1e-2, num_classes=None,
                   max_iter=10000, tol=1e-6):
    """Full-batch gradient descent with Armijo backtracking from zero init.

    The objective (mean cross-entropy plus (l2/2)*||W||^2, bias
    unregularized) is convex, so the line-searched descent converges to
    the unique optimum; we stop when the gradient infinity-norm drops
    below tol. Hitting the iteration cap is recorded on the model, not
    raised.
    """
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    c = int(num_classes) if num_classes is not None else int(y.max()) + 1
    present = np.unique(y)
    missing = sorted(set(range(c)) - set(present.tolist()))
    if missing:
        raise MissingClass(f"no samples for class ids {missing}")
    d = x.shape[1]
    onehot = np.zeros((x.shape[0], c))
    onehot[np.arange(x.shape[0]), y] = 1.0
    w = np.zeros((d, c))
    b = np.zeros(c)
    f = _probe_objective(x, onehot, w, b, l2)
    gw, gb = _probe_grads(x, onehot, w, b, l2)
    step = 1.0
    it = 0
    converged = False
    while it < max_iter:
        gnorm = max(np.abs(gw).max(), np.abs(gb).max())
        if gnorm < tol:
            converged = True
            break
        g2 = (gw * gw).sum() + (gb * gb).sum()
        t = step
        while True:
            w2 = w - t * gw
            b2 = b - t * gb
            f2 = _probe_objective(x, onehot, w2, b2, l2)
            if f2 <= f - 1e-4 * t * g2:
                break
            t *= 0.5
            if t < 1e-20:
                break
        if t < 1e-20:
            break  # no descent direction survives float precision; stop here
        w, b, f = w2, b2, f2
        gw, gb = _probe_grads(x, onehot, w, b, l2)
        step = t * 2.0
        it += 1
    return ProbeModel(
        weights=w.T.copy(),
        bias=b.copy(),
        iterations=it,
        final_objective=float(f),
        converged=converged,
    )


def evaluate(probe, features, labels, num_classes=None):
    """Accuracy, per-class accuracy, and confusion matrix (rows = true)."""
    y = np.asarray(labels, dtype=np.int64)
    c = int(num_classes) if num_classes is not None else probe.weights.shape[0]
    pred = probe.predict(np.asarray(features, dtype=np.float64))
    confusion = np.zeros((c, c), dtype=np.int64)
    for truth, guess in zip(y, pred):
        confusion[truth, guess] += 1
    row_totals = confusion.sum(axis=1)
    per_class = [
        float(confusion[i, i] / row_totals[i]) if row_totals[i] else 0.0
        for i in range(c)
    ]
    return {
        "accuracy": float((pred == y).mean()),
        "per_class_accuracy": per_class,
        "confusion": confusion.tolist(),
    }


# --- experiment runner --------------------------------------------------------------

PIPELINES = {"masked": "builtin", "unmasked": "none"}


def run_cell(root, cfg_dict, fraction, seed, pipeline):
    """Train + probe + evaluate one (pipeline, fraction, seed) cell."""
    manifest = read_manifest(root)
    cfg = TrainConfig.from_dict(cfg_dict)
    cfg.mask_mode = PIPELINES[pipeline]
    cfg.seed = seed
    split = ensure_split(manifest, fraction, seed)
    params, history = train(cfg, manifest, split)
    train_x, train_y = extract_features(
        params, manifest, split_samples(manifest, split), cfg.mask_mode
    )
    test_x, test_y = extract_features(
        params, manifest, role_samples(manifest, "test"), cfg.mask_mode
    )
    probe = logistic_probe(
        train_x, train_y, l2=cfg.probe_l2, num_classes=cfg.arch.num_classes
    )
    metrics = evaluate(probe, test_x, test_y, num_classes=cfg.arch.num_classes)
    return {
        "pipeline": pipeline,
        "fraction": fraction,
        "seed": seed,
        "accuracy": metrics["accuracy"],
        "per_class_accuracy": metrics["per_class_accuracy"],
        "confusion": metrics["confusion"],
        "train_samples": int(train_y.size),
        "probe_iterations": probe.iterations,
        "probe_converged": probe.converged,
        "final_train_loss": history[-1]["loss"] if history else None,
    }


def run_experiment(manifest, cfg, fractions, seeds, jobs=1):
    """Both pipelines on identical splits for every (fraction, seed).

    Cells may run in parallel; the report is assembled in canonical
    order (fraction asc, seed asc, pipeline asc) so its bytes do not
    depend on scheduling.
    """
    fractions = sorted(float(f) for f in fractions)
    seeds = sorted(int(s) for s in seeds)
    pipelines = sorted(PIPELINES)
    tasks = [
        (f, s, p) for f in fractions for s in seeds for p in pipelines
    ]
    cfg_dict = cfg.to_dict()
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [
                pool.submit(run_cell, manifest.root, cfg_dict, f, s, p)
                for f, s, p in tasks
            ]
            cells = [fut.result() for fut in futures]
    else:
        cells = [run_cell(manifest.root, cfg_dict, f, s, p) for f, s, p in tasks]
    cells.sort(key=lambda cell: (cell["fraction"], cell["seed"], cell["pipeline"]))
    aggregates = {}
    for p in pipelines:
        aggregates[p] = {}
        for f in fractions:
            accs = [
                c["accuracy"]
                for c in cells
                if c["pipeline"] == p and c["fraction"] == f
            ]
            aggregates[p][f"{f:g}"] = {
                "mean_accuracy": float(np.mean(accs)),
                "stddev_accuracy": float(np.std(accs)),
            }
    return {
        "classes": list(manifest.classes),
        "fractions": fractions,
        "seeds": seeds,
        "config": cfg_dict,
        "cells": cells,
        "aggregates": aggregates,
    }


def report_csv(report):
    """Table text: one pipeline per row, one fraction column, mean accuracy."""
    fractions = report["fractions"]
    lines = ["pipeline," + ",".join(f"f{f:g}" for f in fractions)]
    for p in sorted(report["aggregates"]):
        cols = [
            f"{report['aggregates'][p][f'{f:g}']['mean_accuracy']:.4f}"
            for f in fractions
        ]
        lines.append(p + "," + ",".join(cols))
    return "\n".join(lines) + "\n"


def write_report(out_path, report):
    with open(out_path, "w", encoding="utf-8") as f:
        json.dump(report, f, sort_keys=True, separators=(",", ":"))
        f.write("\n")
    csv_path = os.path.splitext(out_path)[0] + ".csv"
    with open(csv_path, "w", encoding="utf-8") as f:
        f.write(report_csv(report))
    return csv_path
