"""Dual encoder: a small ViT for images and an embedding table for class text.

Vectors are rows throughout, and projections act on the right
(y = x @ W), so every parameter is a plain 2-D matrix.
"""

import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .archive import load_archive, save_archive
from .autodiff import Tensor
from .errors import (
    ArchMismatch,
    DimensionMismatch,
    IndivisibleDims,
    ShapeMismatch,
    UnknownClass,
)
from .rng import Rng

LOG_TEMP_INIT = float(np.log(1.0 / 0.07))
LOG_TEMP_MIN = float(np.log(1.0 / 100.0))
LOG_TEMP_MAX = float(np.log(100.0))


@dataclass
class ArchConfig:
    num_classes: int
    vocab: list
    image_size: int = 64
    patch_size: int = 8
    embed_dim: int = 64
    num_layers: int = 2
    num_heads: int = 4
    mlp_ratio: int = 4

    def __post_init__(self):
        if self.image_size % self.patch_size != 0:
            raise IndivisibleDims(
                f"image_size {self.image_size} not divisible by patch_size "
                f"{self.patch_size}"
            )
        if self.embed_dim % self.num_heads != 0:
            raise DimensionMismatch(
                f"embed_dim {self.embed_dim} not divisible by num_heads "
                f"{self.num_heads}"
            )
        if len(self.vocab) != self.num_classes:
            raise ArchMismatch(
                f"vocab has {len(self.vocab)} entries for {self.num_classes} classes"
            )

    @property
    def num_tokens(self):
        return (self.image_size // self.patch_size) ** 2 + 1

    def to_dict(self):
        return {
            "num_classes": self.num_classes,
            "vocab": list(self.vocab),
            "image_size": self.image_size,
            "patch_size": self.patch_size,
            "embed_dim": self.embed_dim,
            "num_layers": self.num_layers,
            "num_heads": self.num_heads,
            "mlp_ratio": self.mlp_ratio,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


class ModelParams:
    """ArchConfig plus the named parameter tensors it implies."""

    def __init__(self, cfg, tensors):
        self.cfg = cfg
        self.tensors = tensors

    def __getitem__(self, name):
        return self.tensors[name]

    def items(self):
        return self.tensors.items()

    def values(self):
        return self.tensors.values()

    def names(self):
        return list(self.tensors)


def init_params(cfg, seed):
    """Fresh parameters from one seeded stream, in documented order.

    Weight matrices and the CLS token draw Normal(0, 0.02); positional
    embeddings Normal(0, 0.01). Additive biases start at 0 and norm
    gains at 1 so every block begins as a near-identity map. The
    contrastive scale starts at ln(1/0.07): similarities are multiplied
    by exp(scale), i.e. divided by a temperature of 0.07.
    """
    rng = Rng(seed).derive(1)  # stream 1: weight init (data generation uses others)
    d = cfg.embed_dim
    n = cfg.num_tokens
    patch_len = cfg.patch_size * cfg.patch_size
    hidden = cfg.mlp_ratio * d

    def w(rows, cols, std=0.02):
        return Tensor(rng.normals(rows * cols).reshape(rows, cols) * std,
                      requires_grad=True)

    def zeros(rows, cols):
        return Tensor(np.zeros((rows, cols)), requires_grad=True)

    def ones(rows, cols):
        return Tensor(np.ones((rows, cols)), requires_grad=True)

    t = {}
    t["patch_proj"] = w(patch_len, d)
    t["patch_bias"] = zeros(1, d)
    t["cls_token"] = w(1, d)
    t["pos_embed"] = w(n, d, std=0.01)
    for i in range(cfg.num_layers):
        t[f"layer{i}.ln1_gain"] = ones(1, d)
        t[f"layer{i}.ln1_bias"] = zeros(1, d)
        t[f"layer{i}.wq"] = w(d, d)
        t[f"layer{i}.wk"] = w(d, d)
        t[f"layer{i}.wv"] = w(d, d)
        t[f"layer{i}.wo"] = w(d, d)
        t[f"layer{i}.ln2_gain"] = ones(1, d)
        t[f"layer{i}.ln2_bias"] = zeros(1, d)
        t[f"layer{i}.mlp_w1"] = w(d, hidden)
        t[f"layer{i}.mlp_b1"] = zeros(1, hidden)
        t[f"layer{i}.mlp_w2"] = w(hidden, d)
        t[f"layer{i}.mlp_b2"] = zeros(1, d)
    t["final_ln_gain"] = ones(1, d)
    t["final_ln_bias"] = zeros(1, d)
    t["img_proj"] = w(d, d)
    t["text_table"] = w(cfg.num_classes, d)
    t["text_proj"] = w(d, d)
    t["fuse_w"] = w(d, d)
    t["cls_w"] = w(d, cfg.num_classes)
    t["cls_b"] = zeros(1, cfg.num_classes)
    t["log_temperature"] = Tensor([[LOG_TEMP_INIT]], requires_grad=True)
    return ModelParams(cfg, t)


def patchify(image, patch_size):
    """Split into non-overlapping patches, row-major, scaled to [0, 1].

    Each output row is one patch flattened row-major with channels
    interleaved, so `unpatchify` can rebuild the image exactly.
    """
    px = image.pixels
    h, w = px.shape[0], px.shape[1]
    if h % patch_size or w % patch_size:
        raise IndivisibleDims(
            f"{h}x{w} image not divisible into {patch_size}x{patch_size} patches"
        )
    if px.ndim == 2:
        px = px[:, :, None]
    c = px.shape[2]
    gh, gw = h // patch_size, w // patch_size
    grid = px.reshape(gh, patch_size, gw, patch_size, c)
    rows = grid.transpose(0, 2, 1, 3, 4).reshape(gh * gw, patch_size * patch_size * c)
    return Tensor(rows.astype(np.float64) / 255.0)


def unpatchify(patches, image_size, patch_size, channels=1):
    """Inverse of patchify; exact because /255 then *255 rounds losslessly."""
    from .images import Image

    data = patches.data if isinstance(patches, Tensor) else np.asarray(patches)
    gh = gw = image_size // patch_size
    grid = data.reshape(gh, gw, patch_size, patch_size, channels)
    px = grid.transpose(0, 2, 1, 3, 4).reshape(image_size, image_size, channels)
    px = np.rint(px * 255.0).astype(np.uint8)
    if channels == 1:
        px = px[:, :, 0]
    return Image(px)


def _attention(x, params, layer, cfg):
    nh = cfg.num_heads
    dh = cfg.embed_dim // nh
    q = ad.matmul(x, params[f"layer{layer}.wq"])
    k = ad.matmul(x, params[f"layer{layer}.wk"])
    v = ad.matmul(x, params[f"layer{layer}.wv"])
    heads = []
    for h in range(nh):
        lo, hi = h * dh, (h + 1) * dh
        qh = ad.slice_cols(q, lo, hi)
        kh = ad.slice_cols(k, lo, hi)
        vh = ad.slice_cols(v, lo, hi)
        scores = ad.scale(ad.matmul(qh, ad.transpose(kh)), 1.0 / np.sqrt(dh))
        heads.append(ad.matmul(ad.softmax(scores, axis=1), vh))
    return ad.matmul(ad.concat_cols(heads), params[f"layer{layer}.wo"])


def _mlp(x, params, layer):
    hidden = ad.add(ad.matmul(x, params[f"layer{layer}.mlp_w1"]),
                    params[f"layer{layer}.mlp_b1"])
    act = ad.gelu(hidden)
    return ad.add(ad.matmul(act, params[f"layer{layer}.mlp_w2"]),
                  params[f"layer{layer}.mlp_b2"])


def vit_encode(params, image):
    """Token matrix I of shape (n, d); row 0 is the CLS token.

    Pre-norm blocks: x += attn(norm(x)); x += mlp(norm(x)); final norm.
    """
    cfg = params.cfg
    if image.pixels.shape[:2] != (cfg.image_size, cfg.image_size):
        raise ShapeMismatch(
            f"encoder expects {cfg.image_size}x{cfg.image_size} input, "
            f"got {image.pixels.shape[0]}x{image.pixels.shape[1]}"
        )
    patches = patchify(image, cfg.patch_size)
    embedded = ad.add(ad.matmul(patches, params["patch_proj"]), params["patch_bias"])
    x = ad.add(ad.concat_rows([params["cls_token"], embedded]), params["pos_embed"])
    for i in range(cfg.num_layers):
        normed = ad.layer_norm(x, params[f"layer{i}.ln1_gain"],
                               params[f"layer{i}.ln1_bias"])
        x = ad.add(x, _attention(normed, params, i, cfg))
        normed = ad.layer_norm(x, params[f"layer{i}.ln2_gain"],
                               params[f"layer{i}.ln2_bias"])
        x = ad.add(x, _mlp(normed, params, i))
    return ad.layer_norm(x, params["final_ln_gain"], params["final_ln_bias"])


def pool_project(tokens, params):
    """Unit-norm image embedding from the CLS row: normalize(cls @ W)."""
    cls_row = ad.slice_rows(tokens, 0, 1)
    return ad.l2_normalize_rows(ad.matmul(cls_row, params["img_proj"]))


def text_encode(params, class_id):
    """Unit-norm embedding of one class prompt, shape (1, d)."""
    c = params.cfg.num_classes
    if not 0 <= class_id < c:
        raise UnknownClass(f"class id {class_id} outside [0, {c})")
    row = ad.slice_rows(params["text_table"], class_id, class_id + 1)
    return ad.l2_normalize_rows(ad.matmul(row, params["text_proj"]))


def text_matrix(params):
    """All class embeddings stacked, shape (C, d), every row unit-norm."""
    projected = ad.matmul(params["text_table"], params["text_proj"])
    return ad.l2_normalize_rows(projected)


def logit_scale(params):
    """Multiplier for image/text similarities: exp(clamped log scale)."""
    return ad.exp(ad.clamp(params["log_temperature"], LOG_TEMP_MIN, LOG_TEMP_MAX))


def save_checkpoint(path, params, extra=None):
    """Archive the tensors; the JSON sidecar (<path>.json) carries the config."""
    save_archive(path, params.tensors)
    sidecar = {"arch": params.cfg.to_dict()}
    if extra:
        sidecar.update(extra)
    with open(str(path) + ".json", "w", encoding="utf-8") as f:
        json.dump(sidecar, f, sort_keys=True, separators=(",", ":"))
        f.write("\n")


def load_checkpoint(path):
    """Returns (ModelParams with requires_grad leaves, sidecar dict)."""
    with open(str(path) + ".json", "r", encoding="utf-8") as f:
        sidecar = json.load(f)
    cfg = ArchConfig.from_dict(sidecar["arch"])
    arrays = load_archive(path)
    reference = init_params(cfg, 0).tensors
    if set(reference) != set(arrays):
        missing = sorted(set(reference) - set(arrays))
        surplus = sorted(set(arrays) - set(reference))
        raise ArchMismatch(
            f"checkpoint does not match config: missing {missing}, surplus {surplus}"
        )
    for name, arr in arrays.items():
        if arr.shape != reference[name].data.shape:
            raise ArchMismatch(
                f"checkpoint tensor {name!r} has shape {arr.shape}, "
                f"config implies {reference[name].data.shape}"
            )
    tensors = {name: Tensor(arr, requires_grad=True) for name, arr in arrays.items()}
    return ModelParams(cfg, tensors), sidecar
