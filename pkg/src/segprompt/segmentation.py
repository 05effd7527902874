"""Region-of-interest masks from classical image operations.

The pipeline in `segment` (global threshold, closing, largest blob)
stands in for a learned promptable segmenter: anything that produces a
conforming mask can feed the masking step, including files ingested via
`images.load_external_mask`.
"""

import numpy as np

from .backend import kernels as K
from .errors import DimensionMismatch, EmptyMask, NoContrast, ShapeMismatch
from .images import Image, Mask, luminance


def histogram256(image):
    """Count pixels per gray level; RGB input is luminance-converted."""
    gray = luminance(image)
    return np.bincount(gray.pixels.ravel(), minlength=256).tolist()


def otsu_threshold(hist):
    """Gray level t maximizing between-class variance of [0..t] vs [t+1..255].

    The argmax is taken with exact integer arithmetic: the variance
    ratio (s0*n1 - s1*n0)^2 / (n0*n1) is compared across candidates by
    cross-multiplication, so no float rounding can flip the winner.
    Ties go to the smaller t.
    """
    counts = [int(c) for c in hist]
    if len(counts) != 256:
        raise ShapeMismatch(f"histogram must have 256 bins, got {len(counts)}")
    if sum(1 for c in counts if c > 0) < 2:
        raise NoContrast("histogram has fewer than two occupied bins")
    total = sum(counts)
    total_mass = sum(v * c for v, c in enumerate(counts))
    best_t = -1
    best_num = 0
    best_den = 1
    n0 = 0
    s0 = 0
    for t in range(256):
        n0 += counts[t]
        s0 += t * counts[t]
        n1 = total - n0
        s1 = total_mass - s0
        if n0 == 0 or n1 == 0:
            continue
        num = (s0 * n1 - s1 * n0) ** 2
        den = n0 * n1
        if best_t < 0 or num * best_den > best_num * den:
            best_t = t
            best_num = num
            best_den = den
    return best_t


def morph_close(mask, radius):
    """Dilate then erode with a (2*radius+1) square element.

    The raster is padded by `radius` first, so the result equals the
    closing computed on an unbounded plane: pixels never vanish just
    because the structuring element ran off the edge, and the operation
    stays idempotent.
    """
    if radius < 0:
        raise ShapeMismatch(f"radius must be >= 0, got {radius}")
    if radius == 0:
        return Mask(mask.bits.copy())
    r = int(radius)
    h, w = mask.bits.shape
    padded = np.zeros((h + 2 * r, w + 2 * r), dtype=np.uint8)
    padded[r : r + h, r : r + w] = mask.bits
    closed = K.binary_erode(K.binary_dilate(padded, r), r)
    return Mask(closed[r : r + h, r : r + w])


def largest_component(mask):
    """Keep only the biggest 4-connected blob.

    Components are discovered in row-major order and np.argmax returns
    the first maximum, so a size tie resolves to the blob whose topmost,
    leftmost pixel comes first.
    """
    labels, count = K.label_components4(mask.bits)
    if count == 0:
        raise EmptyMask("mask has no foreground")
    sizes = np.bincount(labels.ravel(), minlength=count + 1)[1:]
    keep = int(np.argmax(sizes)) + 1
    return Mask((labels == keep).astype(np.uint8))


def segment(image, close_radius=1):
    """Threshold toward the brighter class, close small gaps, keep one blob."""
    gray = luminance(image)
    t = otsu_threshold(histogram256(gray))
    rough = Mask((gray.pixels > t).astype(np.uint8))
    return largest_component(morph_close(rough, close_radius))


def apply_mask(image, mask):
    """Elementwise product: background pixels become 0 in every channel."""
    if (image.height, image.width) != (mask.height, mask.width):
        raise DimensionMismatch(
            f"image {image.height}x{image.width} vs mask {mask.height}x{mask.width}"
        )
    bits = mask.bits if image.channels == 1 else mask.bits[:, :, None]
    return Image(image.pixels * bits)


def iou(a, b):
    """Intersection over union of two masks; two empty masks count as 1."""
    if a.bits.shape != b.bits.shape:
        raise DimensionMismatch(f"mask shapes differ: {a.bits.shape} vs {b.bits.shape}")
    inter = int(np.logical_and(a.bits, b.bits).sum())
    union = int(np.logical_or(a.bits, b.bits).sum())
    if union == 0:
        return 1.0
    return inter / union
