"""Synthetic organ-scan dataset with a planted background shortcut.

Each image is a dark noisy background, one bright elliptical "organ",
a class-determining lesion glyph inside the organ, clutter discs
outside it, and a small corner marker whose position encodes the label
with configurable probability. The marker is the point of the dataset:
it sits outside every organ mask, so a model that sees the whole image
can lean on it while a model restricted to the organ cannot.

Directory layout under the dataset root:
  train/<class>/<id>.pgm, test/<class>/<id>.pgm
  gt_masks/<id>.mask.pgm
  manifest.json
  splits/f<fraction>_s<seed>.json
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    EmptySplit,
    FractionOutOfRange,
    SchemaViolation,
    ValidationError,
)
from .images import Image, Mask, write_image, write_mask
from .rng import Rng

CLASS_NAMES = ("normal", "disc", "ring", "cross")

PROMPTS = {
    "normal": "a scan of a healthy organ with no lesion",
    "disc": "a scan of an organ containing a solid round lesion",
    "ring": "a scan of an organ containing a ring shaped lesion",
    "cross": "a scan of an organ containing a cross shaped lesion",
}

# rng stream tags; tag 1 is reserved for model weight init
_ROLE_TAGS = {"train": 2, "test": 3}
_SPLIT_TAG = 4


@dataclass
class GenConfig:
    num_classes: int = 4
    per_class_train: int = 100
    per_class_test: int = 50
    image_size: int = 64
    clutter_strength: float = 0.7
    spurious_corr_train: float = 0.9
    spurious_corr_test: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not 2 <= self.num_classes <= len(CLASS_NAMES):
            raise ValidationError(
                f"num_classes must be in [2, {len(CLASS_NAMES)}], got {self.num_classes}"
            )
        if self.per_class_train < 1 or self.per_class_test < 1:
            raise ValidationError("per-class sample counts must be >= 1")
        if self.image_size < 32:
            raise ValidationError("image_size must be >= 32")
        for name in ("clutter_strength", "spurious_corr_train", "spurious_corr_test"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValidationError(f"{name} must lie in [0, 1], got {v}")


@dataclass
class DatasetManifest:
    root: str
    classes: list
    image_size: int
    samples: list
    extra: dict = field(default_factory=dict)


@dataclass
class SplitManifest:
    fraction: float
    seed: int
    selected: dict  # class name -> sorted indices into that class's train list
    extra: dict = field(default_factory=dict)


def class_names(num_classes):
    return list(CLASS_NAMES[:num_classes])


def prompt_vocab(classes):
    return [PROMPTS[name] for name in classes]


def _ints(rng, n, bound):
    """n draws uniform on [0, bound) from the vectorized uniform stream."""
    return np.minimum((rng.uniforms(n) * bound).astype(np.int64), bound - 1)


def _marker_anchors(size, count):
    """Top-left corners of the 4x4 marker sites, inset 2 px from each corner."""
    far = size - 6
    return [(2, 2), (2, far), (far, 2), (far, far)][:count]


def _glyph_pixels(class_name, cy, cx, yy, xx):
    """Boolean raster of the lesion glyph centered at (cy, cx)."""
    dy = yy - cy
    dx = xx - cx
    if class_name == "normal":
        return np.zeros(yy.shape, dtype=bool)
    if class_name == "disc":
        return dy * dy + dx * dx <= 49  # radius 7
    if class_name == "ring":
        r2 = dy * dy + dx * dx
        return (r2 <= 49) & (r2 >= 25)  # annulus, outer 7 inner 5
    if class_name == "cross":
        return ((np.abs(dx) <= 2) & (np.abs(dy) <= 9)) | (
            (np.abs(dy) <= 2) & (np.abs(dx) <= 9)
        )
    raise ValidationError(f"no glyph defined for class {class_name!r}")


def _render_sample(rng, cfg, class_id, role):
    """One image + ground-truth organ mask. Draw order is fixed; see body."""
    s = cfg.image_size
    yy, xx = np.mgrid[0:s, 0:s]
    name = CLASS_NAMES[class_id]

    # 1. background: dark noise on [18, 52]
    canvas = (18 + _ints(rng, s * s, 35).reshape(s, s)).astype(np.int64)

    # 2. organ ellipse: center and semi-axes random within bounds chosen so
    #    the glyph stays linearly findable at few-shot sample counts
    c_lo, c_hi = (31 * s) // 64, (33 * s) // 64
    a_lo, a_hi = (11 * s) // 64, (17 * s) // 64
    cx = c_lo + rng.randint(c_hi - c_lo + 1)
    cy = c_lo + rng.randint(c_hi - c_lo + 1)
    ax = a_lo + rng.randint(a_hi - a_lo + 1)
    ay = a_lo + rng.randint(a_hi - a_lo + 1)
    organ = ((xx - cx) * ay) ** 2 + ((yy - cy) * ax) ** 2 <= (ax * ay) ** 2

    # 3. organ texture: base [140, 165] plus per-pixel jitter [-6, +6]
    base = 140 + rng.randint(26)
    jitter = _ints(rng, s * s, 13).reshape(s, s) - 6
    canvas[organ] = base + jitter[organ]

    # 4. lesion glyph, centered within 1 px of the organ center; the glyph
    #    reach (<= 10 px along an axis) stays inside the minimum semi-axis
    #    of 11 at s = 64
    gy = cy + rng.randint(3) - 1
    gx = cx + rng.randint(3) - 1
    glyph = _glyph_pixels(name, gy, gx, yy, xx)
    canvas[glyph] = 235 + rng.randint(16)

    # 5. clutter discs strictly outside the organ (3 px clearance so a
    #    radius-1 closing cannot bridge them to it)
    count = int(round(cfg.clutter_strength * 8))
    span = s - 20
    for _ in range(count):
        for _attempt in range(40):
            ccx = 10 + rng.randint(span)
            ccy = 10 + rng.randint(span)
            r = 2 + rng.randint(3)
            shade = 120 + rng.randint(96)
            reach = max(ax, ay) + r + 3
            if (ccx - cx) ** 2 + (ccy - cy) ** 2 > reach * reach:
                disc = (xx - ccx) ** 2 + (yy - ccy) ** 2 <= r * r
                canvas[disc] = shade
                break

    # 6. spurious marker: 4x4 block at 255 whose corner encodes the label
    #    with probability corr, else a uniformly random corner
    corr = cfg.spurious_corr_train if role == "train" else cfg.spurious_corr_test
    if rng.uniform() < corr:
        site = class_id
    else:
        site = rng.randint(cfg.num_classes)
    my, mx = _marker_anchors(s, cfg.num_classes)[site]
    canvas[my : my + 4, mx : mx + 4] = 255

    return Image(canvas.astype(np.uint8)), Mask(organ.astype(np.uint8))


def generate_synthetic(cfg, out_root):
    """Write the dataset tree and manifest; returns the manifest.

    Every sample draws from its own rng stream derived from
    (cfg.seed, role, class, index), so the output is byte-reproducible
    and order-independent.
    """
    classes = class_names(cfg.num_classes)
    os.makedirs(os.path.join(out_root, "gt_masks"), exist_ok=True)
    samples = []
    for role, per_class in (("train", cfg.per_class_train),
                            ("test", cfg.per_class_test)):
        for class_id, name in enumerate(classes):
            class_dir = os.path.join(out_root, role, name)
            os.makedirs(class_dir, exist_ok=True)
            for i in range(per_class):
                rng = Rng(cfg.seed).derive(_ROLE_TAGS[role], class_id, i)
                image, mask = _render_sample(rng, cfg, class_id, role)
                sample_id = f"{role}-{name}-{i:04d}"
                rel_image = f"{role}/{name}/{sample_id}.pgm"
                rel_mask = f"gt_masks/{sample_id}.mask.pgm"
                write_image(os.path.join(out_root, rel_image), image)
                write_mask(os.path.join(out_root, rel_mask), mask)
                samples.append({
                    "id": sample_id,
                    "image": rel_image,
                    "mask": rel_mask,
                    "label": class_id,
                    "role": role,
                })
    manifest = DatasetManifest(
        root=out_root,
        classes=classes,
        image_size=cfg.image_size,
        samples=samples,
    )
    write_manifest(manifest)
    return manifest


# --- manifest io ----------------------------------------------------------------

_REQUIRED_SAMPLE_KEYS = {"id", "image", "mask", "label", "role"}


def manifest_path(root):
    return os.path.join(root, "manifest.json")


def write_manifest(manifest):
    doc = dict(manifest.extra)
    doc["classes"] = list(manifest.classes)
    doc["image_size"] = manifest.image_size
    doc["samples"] = manifest.samples
    with open(manifest_path(manifest.root), "w", encoding="utf-8") as f:
        json.dump(doc, f, sort_keys=True, separators=(",", ":"))
        f.write("\n")


def read_manifest(root):
    """Load and validate; unknown fields ride along in .extra / the records."""
    try:
        with open(manifest_path(root), "r", encoding="utf-8") as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise SchemaViolation(f"manifest is not valid JSON: {e}") from None
    for key in ("classes", "image_size", "samples"):
        if key not in doc:
            raise SchemaViolation(f"manifest missing required field {key!r}")
    classes = doc["classes"]
    samples = doc["samples"]
    if not isinstance(classes, list) or not all(isinstance(c, str) for c in classes):
        raise SchemaViolation("manifest 'classes' must be a list of strings")
    if not isinstance(samples, list):
        raise SchemaViolation("manifest 'samples' must be a list")
    for rec in samples:
        if not isinstance(rec, dict) or not _REQUIRED_SAMPLE_KEYS <= set(rec):
            raise SchemaViolation(
                f"sample record missing fields: {rec!r}"
            )
        if not isinstance(rec["label"], int) or not 0 <= rec["label"] < len(classes):
            raise SchemaViolation(f"label out of range in record {rec['id']!r}")
        if rec["role"] not in ("train", "test"):
            raise SchemaViolation(f"unknown role {rec['role']!r} in {rec['id']!r}")
        for key in ("image", "mask"):
            path = os.path.join(root, rec[key])
            if not os.path.isfile(path):
                raise SchemaViolation(f"referenced file does not exist: {path}")
    extra = {k: v for k, v in doc.items()
             if k not in ("classes", "image_size", "samples")}
    return DatasetManifest(
        root=root,
        classes=classes,
        image_size=int(doc["image_size"]),
        samples=samples,
        extra=extra,
    )


def role_samples(manifest, role):
    return [rec for rec in manifest.samples if rec["role"] == role]


def train_by_class(manifest):
    """Per-class train records in canonical (sorted id) order."""
    groups = {name: [] for name in manifest.classes}
    for rec in role_samples(manifest, "train"):
        groups[manifest.classes[rec["label"]]].append(rec)
    for name in groups:
        groups[name].sort(key=lambda rec: rec["id"])
    return groups


# --- fraction splits --------------------------------------------------------------


def stratified_fraction_split(manifest, fraction, seed):
    """Per-class prefix of a seeded shuffle; nested across fractions.

    Selected count per class is max(1, round(fraction * class_size))
    with half-up rounding. Because each class's shuffle depends only on
    (seed, class index), a smaller fraction's selection is a strict
    prefix of a larger one's before sorting, hence a subset after.
    """
    if not 0.0 < fraction <= 1.0:
        raise FractionOutOfRange(f"fraction must lie in (0, 1], got {fraction}")
    groups = train_by_class(manifest)
    selected = {}
    for class_id, name in enumerate(manifest.classes):
        n = len(groups[name])
        if n == 0:
            raise EmptySplit(f"class {name!r} has no train samples")
        k = max(1, int(np.floor(fraction * n + 0.5)))
        order = list(range(n))
        Rng(seed).derive(_SPLIT_TAG, class_id).shuffle(order)
        selected[name] = sorted(order[:k])
    return SplitManifest(fraction=float(fraction), seed=int(seed), selected=selected)


def split_samples(manifest, split):
    """Records picked by a split, classes in manifest order, ids ascending."""
    groups = train_by_class(manifest)
    out = []
    for name in manifest.classes:
        rows = groups[name]
        for idx in split.selected[name]:
            out.append(rows[idx])
    return out


def split_path(root, fraction, seed):
    return os.path.join(root, "splits", f"f{fraction:g}_s{seed}.json")


def write_split(root, split):
    os.makedirs(os.path.join(root, "splits"), exist_ok=True)
    doc = dict(split.extra)
    doc["fraction"] = split.fraction
    doc["seed"] = split.seed
    doc["selected"] = {name: list(idx) for name, idx in split.selected.items()}
    path = split_path(root, split.fraction, split.seed)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(doc, f, sort_keys=True, separators=(",", ":"))
        f.write("\n")
    return path


def read_split(path):
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except json.JSONDecodeError as e:
        raise SchemaViolation(f"split file is not valid JSON: {e}") from None
    for key in ("fraction", "seed", "selected"):
        if key not in doc:
            raise SchemaViolation(f"split file missing required field {key!r}")
    extra = {k: v for k, v in doc.items()
             if k not in ("fraction", "seed", "selected")}
    return SplitManifest(
        fraction=float(doc["fraction"]),
        seed=int(doc["seed"]),
        selected={name: sorted(int(i) for i in idx)
                  for name, idx in doc["selected"].items()},
        extra=extra,
    )


def ensure_split(manifest, fraction, seed):
    """Load the split file if present, else compute and persist it.

    Either path yields the identical split, so concurrent creators
    converge on the same bytes.
    """
    path = split_path(manifest.root, fraction, seed)
    if os.path.isfile(path):
        return read_split(path)
    split = stratified_fraction_split(manifest, fraction, seed)
    write_split(manifest.root, split)
    return split
