"""8-bit images and binary masks, with binary PGM/PPM file IO."""

from dataclasses import dataclass

import numpy as np

from .errors import (
    DimensionMismatch,
    MalformedHeader,
    ShapeMismatch,
    TruncatedPayload,
    UnsupportedMaxval,
)


@dataclass
class Image:
    """Row-major 8-bit raster; grayscale (h, w) or interleaved RGB (h, w, 3)."""

    pixels: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.pixels, dtype=np.uint8)
        if arr.ndim == 2:
            pass
        elif arr.ndim == 3 and arr.shape[2] == 3:
            pass
        else:
            raise ShapeMismatch(f"image must be (h, w) or (h, w, 3), got {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ShapeMismatch("image extents must be positive")
        self.pixels = np.ascontiguousarray(arr)

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]

    @property
    def channels(self):
        return 1 if self.pixels.ndim == 2 else 3


@dataclass
class Mask:
    """Binary raster; `bits` holds strictly {0, 1} as uint8."""

    bits: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.bits)
        if arr.ndim != 2:
            raise ShapeMismatch(f"mask must be 2-D, got shape {arr.shape}")
        if not np.isin(arr, (0, 1)).all():
            raise ShapeMismatch("mask values must be 0 or 1")
        self.bits = np.ascontiguousarray(arr.astype(np.uint8))

    @property
    def height(self):
        return self.bits.shape[0]

    @property
    def width(self):
        return self.bits.shape[1]


def luminance(image):
    """Collapse RGB to grayscale with integer BT.601-style weights.

    (299 r + 587 g + 114 b + 500) // 1000, so the result is exact and
    platform independent. Grayscale input passes through unchanged.
    """
    if image.channels == 1:
        return image
    p = image.pixels.astype(np.uint32)
    gray = (299 * p[:, :, 0] + 587 * p[:, :, 1] + 114 * p[:, :, 2] + 500) // 1000
    return Image(gray.astype(np.uint8))


def _read_header_tokens(blob, path):
    """Pull magic + three decimal fields, honoring '#' comments.

    Returns (magic, width, height, maxval, payload_start).
    """
    tokens = []
    i = 0
    n = len(blob)
    while len(tokens) < 4:
        while i < n and blob[i : i + 1].isspace():
            i += 1
        if i < n and blob[i : i + 1] == b"#":
            while i < n and blob[i] not in (0x0A, 0x0D):
                i += 1
            continue
        start = i
        while i < n and not blob[i : i + 1].isspace() and blob[i : i + 1] != b"#":
            i += 1
        if i == start:
            raise MalformedHeader(f"{path}: truncated header")
        tokens.append(blob[start:i])
    if i >= n or not blob[i : i + 1].isspace():
        raise MalformedHeader(f"{path}: missing whitespace after maxval")
    i += 1  # exactly one separator byte before the payload
    magic = tokens[0]
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise MalformedHeader(f"{path}: non-numeric header field") from None
    if width < 1 or height < 1:
        raise MalformedHeader(f"{path}: non-positive image extents")
    return magic, width, height, maxval, i


def read_image(path):
    """Read a binary PGM (P5) or PPM (P6) file with maxval 255."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:2] not in (b"P5", b"P6"):
        raise MalformedHeader(f"{path}: expected P5 or P6 magic")
    magic, width, height, maxval, start = _read_header_tokens(blob, path)
    if maxval != 255:
        raise UnsupportedMaxval(f"{path}: maxval must be 255, got {maxval}")
    channels = 1 if magic == b"P5" else 3
    need = width * height * channels
    payload = blob[start : start + need]
    if len(payload) < need:
        raise TruncatedPayload(f"{path}: expected {need} pixel bytes, got {len(payload)}")
    arr = np.frombuffer(payload, dtype=np.uint8)
    if channels == 1:
        return Image(arr.reshape(height, width))
    return Image(arr.reshape(height, width, 3))


def write_image(path, image):
    magic = b"P5" if image.channels == 1 else b"P6"
    header = magic + b"\n%d %d\n255\n" % (image.width, image.height)
    with open(path, "wb") as f:
        f.write(header)
        f.write(image.pixels.tobytes())


def write_mask(path, mask):
    """Store a mask as P5 with foreground 255, background 0."""
    write_image(path, Image(mask.bits * np.uint8(255)))


def load_external_mask(path, expected_dims):
    """Read a P5 file as a mask: pixel >= 128 is foreground.

    expected_dims is (height, width); a mismatch is an error because a
    mask is only meaningful against the image it was produced for.
    """
    img = read_image(path)
    if img.channels != 1:
        raise MalformedHeader(f"{path}: masks must be single-channel P5")
    if (img.height, img.width) != tuple(expected_dims):
        raise DimensionMismatch(
            f"{path}: mask is {img.height}x{img.width}, "
            f"expected {expected_dims[0]}x{expected_dims[1]}"
        )
    return Mask((img.pixels >= 128).astype(np.uint8))
