"""Text-conditioned fusion of image tokens, classification, and the losses."""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import LambdaOutOfRange, NonNormalizedInput


def context_embedding(text_rows):
    """Label-free conditioning vector: the mean of all class embeddings.

    Feature extraction must not peek at the label, so the same context
    row feeds fusion for every sample.
    """
    return ad.mean_rows(text_rows)


def fuse(tokens, t_ctx, params):
    """M = I + (t_ctx @ W): one projected text row added to every token."""
    shift = ad.matmul(t_ctx, params["fuse_w"])
    return ad.add(tokens, shift)


def classify_pooled(pooled, params):
    """Logits from already mean-pooled fused rows, shape (b, C)."""
    return ad.add(ad.matmul(pooled, params["cls_w"]), params["cls_b"])


def classify(fused, params):
    """Logits y = meanpool_rows(M) @ W_c + b_c, shape (1, C)."""
    return classify_pooled(ad.mean_rows(fused), params)


def _check_unit_rows(data, what):
    norms = np.sqrt((data * data).sum(axis=1))
    worst = float(np.max(np.abs(norms - 1.0))) if norms.size else 0.0
    if worst > 1e-6:
        raise NonNormalizedInput(f"{what} rows deviate from unit norm by {worst:.3g}")


def contrastive_loss(z_imgs, text_rows, labels, scale):
    """Class-anchored alignment: cross-entropy over image/text similarities.

    z_imgs is (b, d) of unit rows, text_rows (C, d) of unit rows, and
    scale multiplies the cosine similarities before softmax (inverse
    temperature). scale may be a float or a (1, 1) tensor so the
    learned value trains through this op.
    """
    _check_unit_rows(z_imgs.data, "image embedding")
    _check_unit_rows(text_rows.data, "text embedding")
    sims = ad.matmul(z_imgs, ad.transpose(text_rows))
    if isinstance(scale, Tensor):
        logits = ad.mul(sims, scale)
    else:
        logits = ad.scale(sims, float(scale))
    return ad.cross_entropy(logits, labels)


def cross_entropy(logits, label):
    """Single-sample -log softmax(logits)[label], shape (1, 1)."""
    return ad.cross_entropy(logits, [label])


@dataclass
class LossBreakdown:
    l_contrastive: Tensor
    l_ce: Tensor
    l_total: Tensor
    lam: float


def composite_loss(l_c, l_e, lam):
    """L = lam * L_c + (1 - lam) * L_e, exact at the endpoints."""
    lam = float(lam)
    if not 0.0 <= lam <= 1.0:
        raise LambdaOutOfRange(f"lambda must lie in [0, 1], got {lam}")
    total = ad.add(ad.scale(l_c, lam), ad.scale(l_e, 1.0 - lam))
    return LossBreakdown(l_contrastive=l_c, l_ce=l_e, l_total=total, lam=lam)
