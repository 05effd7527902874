"""Pure-numpy implementations of the hot kernels.

This module and the compiled `_kernels` extension expose the same functions
with identical semantics; `segprompt.backend` picks one at import time.
Results may differ between backends in the last few ulps (BLAS reassociates
sums), never in meaning.  All float kernels take and return C-contiguous
float64 arrays; morphology and labeling work on uint8 {0,1} rasters.
"""

from __future__ import annotations

import numpy as np

NAME = "python"

_GELU_K0 = 0.7978845608028654  # sqrt(2/pi)
_GELU_K1 = 0.044715


def mix64_array(states: np.ndarray) -> np.ndarray:
    """splitmix64 finalizer applied elementwise to uint64 states."""
    with np.errstate(over="ignore"):
        z = states.astype(np.uint64, copy=True)
        z ^= z >> np.uint64(30)
        z *= np.uint64(0xBF58476D1CE4E5B9)
        z ^= z >> np.uint64(27)
        z *= np.uint64(0x94D049BB133111EB)
        z ^= z >> np.uint64(31)
    return z


# --- dense linear algebra ----------------------------------------------------

def mm(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """a @ b for 2-D float64."""
    return a @ b


def mm_at(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """a.T @ b, i.e. (k,m) x (k,n) -> (m,n)."""
    return a.T @ b


def mm_bt(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """a @ b.T, i.e. (m,k) x (n,k) -> (m,n)."""
    return a @ b.T


def softmax_rows(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def layer_norm_rows(
    x: np.ndarray, gain: np.ndarray, bias: np.ndarray, eps: float
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-row normalization; returns (y, mean, rstd) for the backward pass."""
    mean = x.mean(axis=1)
    var = ((x - mean[:, None]) ** 2).mean(axis=1)
    rstd = 1.0 / np.sqrt(var + eps)
    y = (x - mean[:, None]) * rstd[:, None] * gain + bias
    return y, mean, rstd


def layer_norm_rows_grad(
    x: np.ndarray,
    gain: np.ndarray,
    mean: np.ndarray,
    rstd: np.ndarray,
    dy: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    xhat = (x - mean[:, None]) * rstd[:, None]
    dxhat = dy * gain
    dx = rstd[:, None] * (
        dxhat
        - dxhat.mean(axis=1, keepdims=True)
        - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)
    )
    dgain = (dy * xhat).sum(axis=0)
    dbias = dy.sum(axis=0)
    return dx, dgain, dbias


def gelu(x: np.ndarray) -> np.ndarray:
    """tanh-approximation GELU: 0.5*x*(1 + tanh(k0*(x + k1*x^3)))."""
    return 0.5 * x * (1.0 + np.tanh(_GELU_K0 * (x + _GELU_K1 * x * x * x)))


def gelu_grad(x: np.ndarray, dy: np.ndarray) -> np.ndarray:
    u = _GELU_K0 * (x + _GELU_K1 * x * x * x)
    t = np.tanh(u)
    du = _GELU_K0 * (1.0 + 3.0 * _GELU_K1 * x * x)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)


def adam_update(
    p: np.ndarray,
    g: np.ndarray,
    m: np.ndarray,
    v: np.ndarray,
    step: int,
    lr: float,
    beta1: float,
    beta2: float,
    eps: float,
) -> None:
    """Fused in-place Adam update on flat float64 views (bias-corrected)."""
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    mhat = m / (1.0 - beta1**step)
    vhat = v / (1.0 - beta2**step)
    p -= lr * mhat / (np.sqrt(vhat) + eps)


# --- binary morphology and labeling ------------------------------------------

def _shift_extreme(mask: np.ndarray, radius: int, axis: int, take_min: bool) -> np.ndarray:
    out = mask.copy()
    op = np.minimum if take_min else np.maximum
    n = mask.shape[axis]
    for s in range(1, radius + 1):
        if s >= n:
            if take_min:
                out[:] = 0
            break
        if axis == 0:
            op(out[s:, :], mask[:-s, :], out=out[s:, :])
            op(out[:-s, :], mask[s:, :], out=out[:-s, :])
            if take_min:
                out[:s, :] = 0
                out[-s:, :] = 0
        else:
            op(out[:, s:], mask[:, :-s], out=out[:, s:])
            op(out[:, :-s], mask[:, s:], out=out[:, :-s])
            if take_min:
                out[:, :s] = 0
                out[:, -s:] = 0
    return out


def binary_dilate(mask: np.ndarray, radius: int) -> np.ndarray:
    """Dilation by a (2r+1)-square; cells outside the raster count as 0."""
    if radius == 0:
        return mask.copy()
    out = _shift_extreme(mask, radius, axis=0, take_min=False)
    return _shift_extreme(out, radius, axis=1, take_min=False)


def binary_erode(mask: np.ndarray, radius: int) -> np.ndarray:
    """Erosion by a (2r+1)-square; cells outside the raster count as 0."""
    if radius == 0:
        return mask.copy()
    out = _shift_extreme(mask, radius, axis=0, take_min=True)
    return _shift_extreme(out, radius, axis=1, take_min=True)


def label_components4(mask: np.ndarray) -> tuple[np.ndarray, int]:
    """4-connected labeling; labels numbered 1.. in row-major discovery order."""
    h, w = mask.shape
    labels = np.zeros((h, w), dtype=np.int32)
    current = 0
    stack: list[int] = []
    for start in range(h * w):
        y0, x0 = divmod(start, w)
        if mask[y0, x0] == 0 or labels[y0, x0] != 0:
            continue
        current += 1
        labels[y0, x0] = current
        stack.append(start)
        while stack:
            y, x = divmod(stack.pop(), w)
            if y > 0 and mask[y - 1, x] and labels[y - 1, x] == 0:
                labels[y - 1, x] = current
                stack.append((y - 1) * w + x)
            if y + 1 < h and mask[y + 1, x] and labels[y + 1, x] == 0:
                labels[y + 1, x] = current
                stack.append((y + 1) * w + x)
            if x > 0 and mask[y, x - 1] and labels[y, x - 1] == 0:
                labels[y, x - 1] = current
                stack.append(y * w + x - 1)
            if x + 1 < w and mask[y, x + 1] and labels[y, x + 1] == 0:
                labels[y, x + 1] = current
                stack.append(y * w + x + 1)
    return labels, current
