from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from segprompt.errors import DimensionMismatch, EmptyMask, NoContrast, ShapeMismatch
from segprompt.images import Image, Mask
from segprompt.rng import Rng
from segprompt.segmentation import (
    apply_mask,
    histogram256,
    iou,
    largest_component,
    morph_close,
    otsu_threshold,
    segment,
)


def brute_force_otsu(counts):
    """Reference argmax over exact rationals, no incremental updates."""
    best_t, best_score = -1, Fraction(-1)
    total = sum(counts)
    for t in range(256):
        n0 = sum(counts[: t + 1])
        n1 = total - n0
        if n0 == 0 or n1 == 0:
            continue
        mu0 = Fraction(sum(v * c for v, c in enumerate(counts[: t + 1])), n0)
        mu1 = Fraction(sum(v * c for v, c in enumerate(counts) if v > t), n1)
        score = n0 * n1 * (mu0 - mu1) ** 2
        if score > best_score:
            best_t, best_score = t, score
    return best_t


def test_otsu_two_spikes():
    counts = [0] * 256
    counts[10] = 50
    counts[200] = 50
    t = otsu_threshold(counts)
    assert 10 <= t < 200
    assert t == brute_force_otsu(counts)


def test_otsu_tie_takes_smaller_t():
    # empty bins between the two populated ones score identically; the
    # contract picks the smallest winning level
    counts = [0] * 256
    counts[0] = 1
    counts[3] = 1
    assert otsu_threshold(counts) == brute_force_otsu(counts)


def test_otsu_no_contrast():
    counts = [0] * 256
    counts[42] = 1000
    with pytest.raises(NoContrast):
        otsu_threshold(counts)


def test_otsu_wrong_bin_count():
    with pytest.raises(ShapeMismatch):
        otsu_threshold([1, 2, 3])


@settings(max_examples=60, deadline=None)
@given(st.integers(min_value=0, max_value=2**32 - 1))
def test_otsu_matches_brute_force(seed):
    rng = Rng(seed)
    counts = [0] * 256
    for _ in range(rng.randint(12) + 2):
        counts[rng.randint(256)] += rng.randint(500) + 1
    if sum(1 for c in counts if c > 0) < 2:
        counts[0] += 1
        counts[255] += 1
    assert otsu_threshold(counts) == brute_force_otsu(counts)


def test_histogram_counts():
    img = Image(np.array([[0, 0, 255], [7, 7, 7]], dtype=np.uint8))
    hist = histogram256(img)
    assert len(hist) == 256
    assert hist[0] == 2 and hist[7] == 3 and hist[255] == 1
    assert sum(hist) == 6


def test_close_bridges_gap():
    bits = np.zeros((7, 7), dtype=np.uint8)
    bits[3, 1:3] = 1
    bits[3, 4:6] = 1
    closed = morph_close(Mask(bits), 1)
    assert closed.bits[3, 3] == 1


def test_close_idempotent():
    rng = Rng(88)
    bits = (np.array([rng.randint(100) for _ in range(400)]).reshape(20, 20) < 35).astype(np.uint8)
    once = morph_close(Mask(bits), 2)
    twice = morph_close(once, 2)
    assert np.array_equal(once.bits, twice.bits)


def test_close_radius_zero_is_copy():
    bits = np.array([[1, 0], [0, 1]], dtype=np.uint8)
    out = morph_close(Mask(bits), 0)
    assert np.array_equal(out.bits, bits)
    assert out.bits is not bits


def test_close_negative_radius():
    with pytest.raises(ShapeMismatch):
        morph_close(Mask(np.ones((2, 2), dtype=np.uint8)), -1)


def test_close_never_loses_edge_pixels():
    # padding makes closing behave as on an unbounded plane: a solid
    # block touching the border survives unchanged
    bits = np.ones((5, 5), dtype=np.uint8)
    assert np.array_equal(morph_close(Mask(bits), 3).bits, bits)


@settings(max_examples=30, deadline=None)
@given(
    seed=st.integers(min_value=0, max_value=2**32 - 1),
    radius=st.integers(min_value=0, max_value=3),
)
def test_close_mirror_symmetry(seed, radius):
    # a square structuring element commutes with horizontal flips
    rng = Rng(seed)
    bits = (np.array([rng.randint(100) for _ in range(144)]).reshape(12, 12) < 40).astype(
        np.uint8
    )
    flipped = morph_close(Mask(bits[:, ::-1].copy()), radius).bits
    assert np.array_equal(morph_close(Mask(bits), radius).bits, flipped[:, ::-1])


def test_largest_component_picks_biggest():
    bits = np.zeros((6, 6), dtype=np.uint8)
    bits[0, 0] = 1
    bits[3:5, 3:5] = 1
    out = largest_component(Mask(bits))
    assert out.bits.sum() == 4
    assert out.bits[0, 0] == 0


def test_largest_component_diagonal_not_connected():
    bits = np.array([[1, 0], [0, 1]], dtype=np.uint8)
    out = largest_component(Mask(bits))
    # 4-connectivity splits the diagonal; tie resolves to the first blob
    # in row-major order
    assert out.bits.tolist() == [[1, 0], [0, 0]]


def test_largest_component_empty():
    with pytest.raises(EmptyMask):
        largest_component(Mask(np.zeros((3, 3), dtype=np.uint8)))


def test_segment_finds_bright_disc():
    px = np.full((32, 32), 30, dtype=np.uint8)
    yy, xx = np.mgrid[:32, :32]
    disc = (yy - 16) ** 2 + (xx - 16) ** 2 <= 64
    px[disc] = 220
    got = segment(Image(px))
    assert iou(got, Mask(disc.astype(np.uint8))) > 0.9


def test_segment_drops_small_satellite():
    px = np.full((32, 32), 20, dtype=np.uint8)
    px[10:20, 10:20] = 200
    px[2, 28] = 210
    got = segment(Image(px))
    assert got.bits[2, 28] == 0
    assert got.bits[15, 15] == 1


def test_apply_mask_gray_and_rgb():
    g = Image(np.full((2, 2), 9, dtype=np.uint8))
    m = Mask(np.array([[1, 0], [0, 1]], dtype=np.uint8))
    assert apply_mask(g, m).pixels.tolist() == [[9, 0], [0, 9]]
    c = Image(np.full((2, 2, 3), 5, dtype=np.uint8))
    out = apply_mask(c, m)
    assert out.pixels[0, 0].tolist() == [5, 5, 5]
    assert out.pixels[0, 1].tolist() == [0, 0, 0]


def test_apply_mask_dim_check():
    with pytest.raises(DimensionMismatch):
        apply_mask(
            Image(np.zeros((2, 2), dtype=np.uint8)),
            Mask(np.zeros((3, 3), dtype=np.uint8)),
        )


def test_iou_cases():
    a = Mask(np.array([[1, 1], [0, 0]], dtype=np.uint8))
    b = Mask(np.array([[1, 0], [1, 0]], dtype=np.uint8))
    assert iou(a, b) == 1 / 3
    assert iou(a, a) == 1.0
    z = Mask(np.zeros((2, 2), dtype=np.uint8))
    assert iou(z, z) == 1.0
    assert iou(a, z) == 0.0
    with pytest.raises(DimensionMismatch):
        iou(a, Mask(np.zeros((3, 3), dtype=np.uint8)))
