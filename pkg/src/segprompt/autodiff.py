"""Dense f64 tensors with reverse-mode automatic differentiation.

Every tensor is a 2-D matrix: row vectors are (1, d), scalars (1, 1).
Broadcasting is limited to the two patterns the encoders need (row
vector over rows, scalar over everything).  The graph is rebuilt on
each forward pass; `backward` consumes it and a second call on the
same root raises `TapeConsumed`.

A leaf that a backward pass never reaches keeps `grad = None`, which
readers must treat as zero.  This is deliberate: a disconnected leaf
is not an error.
"""

from contextlib import contextmanager

import numpy as np

from .backend import kernels as K
from .errors import (
    DimensionMismatch,
    LabelOutOfRange,
    NonFiniteValue,
    NonScalarLoss,
    ShapeMismatch,
    TapeConsumed,
    ZeroVector,
)

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (feature extraction, eval)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _coerce(data):
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise ShapeMismatch(f"tensors are 2-D matrices, got ndim={arr.ndim}")
    arr = np.ascontiguousarray(arr)
    if not np.isfinite(arr).all():
        raise NonFiniteValue("non-finite value in tensor data")
    return arr


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjps", "_spent")

    def __init__(self, data, requires_grad=False):
        self.data = _coerce(data)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._vjps = ()
        self._spent = False

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        if self.data.shape != (1, 1):
            raise ShapeMismatch(f"item() needs a scalar, got {self.data.shape}")
        return float(self.data[0, 0])

    def backward(self):
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # operator sugar; the module functions do the real work
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __neg__(self):
        return scale(self, -1.0)

    def __sub__(self, other):
        return add(self, scale(_as_tensor(other), -1.0))

    def __rsub__(self, other):
        return add(_as_tensor(other), scale(self, -1.0))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents, vjps):
    out = Tensor.__new__(Tensor)
    out.data = _coerce(data)
    out.grad = None
    out._spent = False
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjps = tuple(vjps)
    else:
        out.requires_grad = False
        out._parents = ()
        out._vjps = ()
    return out


# --- arithmetic ---------------------------------------------------------------


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    sa, sb = a.data.shape, b.data.shape
    if sa == sb:
        vja = lambda g: g
        vjb = lambda g: g
    elif sb == (1, sa[1]):
        # row vector broadcast over each row of a
        vja = lambda g: g
        vjb = lambda g: g.sum(axis=0, keepdims=True)
    elif sa == (1, sb[1]):
        vja = lambda g: g.sum(axis=0, keepdims=True)
        vjb = lambda g: g
    elif sb == (1, 1):
        vja = lambda g: g
        vjb = lambda g: np.array([[g.sum()]])
    elif sa == (1, 1):
        vja = lambda g: np.array([[g.sum()]])
        vjb = lambda g: g
    else:
        raise ShapeMismatch(f"cannot add {sa} and {sb}")
    return _result(a.data + b.data, (a, b), (vja, vjb))


def mul(a, b):
    """Elementwise product; one side may be a (1, 1) scalar."""
    a, b = _as_tensor(a), _as_tensor(b)
    sa, sb = a.data.shape, b.data.shape
    if sa == sb:
        vja = lambda g: g * b.data
        vjb = lambda g: g * a.data
    elif sb == (1, 1):
        vja = lambda g: g * b.data[0, 0]
        vjb = lambda g: np.array([[(g * a.data).sum()]])
    elif sa == (1, 1):
        vja = lambda g: np.array([[(g * b.data).sum()]])
        vjb = lambda g: g * a.data[0, 0]
    else:
        raise ShapeMismatch(f"cannot multiply {sa} and {sb}")
    return _result(a.data * b.data, (a, b), (vja, vjb))


def scale(a, c):
    """Multiply by a fixed python float (not a tensor; no grad flows to c)."""
    a = _as_tensor(a)
    c = float(c)
    return _result(a.data * c, (a,), (lambda g: g * c,))


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeMismatch(
            f"matmul inner extents differ: {a.data.shape} x {b.data.shape}"
        )
    out = K.mm(a.data, b.data)
    vja = lambda g: K.mm_bt(np.ascontiguousarray(g), b.data)
    vjb = lambda g: K.mm_at(a.data, np.ascontiguousarray(g))
    return _result(out, (a, b), (vja, vjb))


def transpose(a):
    a = _as_tensor(a)
    return _result(a.data.T, (a,), (lambda g: g.T,))


def exp(a):
    a = _as_tensor(a)
    y = np.exp(a.data)  # overflow to inf is rejected by the finite check
    return _result(y, (a,), (lambda g: g * y,))


def log(a):
    a = _as_tensor(a)
    return _result(np.log(a.data), (a,), (lambda g: g / a.data,))


def clamp(a, lo, hi):
    """Clip to [lo, hi]; gradient passes where the input is inside the range."""
    a = _as_tensor(a)
    mask = (a.data >= lo) & (a.data <= hi)
    return _result(np.clip(a.data, lo, hi), (a,), (lambda g: g * mask,))


# --- row-structured ops -------------------------------------------------------


def softmax(x, axis=1):
    x = _as_tensor(x)
    if axis in (1, -1):
        s = K.softmax_rows(x.data)
        vjp = lambda g: s * (g - (g * s).sum(axis=1, keepdims=True))
        return _result(s, (x,), (vjp,))
    if axis == 0:
        s = K.softmax_rows(np.ascontiguousarray(x.data.T)).T
        vjp = lambda g: s * (g - (g * s).sum(axis=0, keepdims=True))
        return _result(s, (x,), (vjp,))
    raise DimensionMismatch(f"softmax axis must be 0 or 1, got {axis}")


def layer_norm(x, gain, bias, eps=1e-5):
    x, gain, bias = _as_tensor(x), _as_tensor(gain), _as_tensor(bias)
    d = x.data.shape[1]
    if gain.data.shape != (1, d) or bias.data.shape != (1, d):
        raise DimensionMismatch(
            f"layer_norm affine params must be (1, {d}), got "
            f"{gain.data.shape} and {bias.data.shape}"
        )
    g1 = gain.data.ravel()
    b1 = bias.data.ravel()
    y, mean, rstd = K.layer_norm_rows(x.data, g1, b1, eps)

    # all three vjps share one kernel call; cache its output per backward
    cache = {}

    def _grads(g):
        key = id(g)
        if key not in cache:
            cache.clear()
            cache[key] = K.layer_norm_rows_grad(
                x.data, g1, mean, rstd, np.ascontiguousarray(g)
            )
        return cache[key]

    vjx = lambda g: _grads(g)[0]
    vjg = lambda g: _grads(g)[1].reshape(1, -1)
    vjb = lambda g: _grads(g)[2].reshape(1, -1)
    return _result(y, (x, gain, bias), (vjx, vjg, vjb))


def gelu(x):
    x = _as_tensor(x)
    out = K.gelu(x.data)
    vjp = lambda g: K.gelu_grad(x.data, np.ascontiguousarray(g))
    return _result(out, (x,), (vjp,))


def l2_normalize_rows(x):
    """Scale each row to unit Euclidean norm. A zero row has no direction."""
    x = _as_tensor(x)
    norms = np.sqrt((x.data * x.data).sum(axis=1, keepdims=True))
    if (norms == 0.0).any():
        raise ZeroVector("cannot l2-normalize a zero row")
    y = x.data / norms

    def vjp(g):
        inner = (g * y).sum(axis=1, keepdims=True)
        return (g - y * inner) / norms

    return _result(y, (x,), (vjp,))


# --- reductions ---------------------------------------------------------------


def sum_all(x):
    x = _as_tensor(x)
    shape = x.data.shape
    vjp = lambda g: np.full(shape, g[0, 0])
    return _result([[x.data.sum()]], (x,), (vjp,))


def mean_all(x):
    x = _as_tensor(x)
    n = x.data.size
    shape = x.data.shape
    vjp = lambda g: np.full(shape, g[0, 0] / n)
    return _result([[x.data.mean()]], (x,), (vjp,))


def mean_rows(x):
    """(n, d) -> (1, d), averaging over rows."""
    x = _as_tensor(x)
    n = x.data.shape[0]
    vjp = lambda g: np.repeat(g, n, axis=0) / n
    return _result(x.data.mean(axis=0, keepdims=True), (x,), (vjp,))


# --- shape surgery ------------------------------------------------------------


def reshape(x, rows, cols):
    x = _as_tensor(x)
    if rows * cols != x.data.size:
        raise ShapeMismatch(
            f"cannot reshape {x.data.shape} to ({rows}, {cols})"
        )
    old = x.data.shape
    vjp = lambda g: g.reshape(old)
    return _result(x.data.reshape(rows, cols), (x,), (vjp,))


def concat_rows(parts):
    parts = [_as_tensor(p) for p in parts]
    d = parts[0].data.shape[1]
    for p in parts:
        if p.data.shape[1] != d:
            raise ShapeMismatch("concat_rows parts must share column count")
    vjps = []
    start = 0
    for p in parts:
        n = p.data.shape[0]
        lo, hi = start, start + n
        vjps.append(lambda g, lo=lo, hi=hi: g[lo:hi])
        start += n
    return _result(np.vstack([p.data for p in parts]), tuple(parts), tuple(vjps))


def concat_cols(parts):
    parts = [_as_tensor(p) for p in parts]
    n = parts[0].data.shape[0]
    for p in parts:
        if p.data.shape[0] != n:
            raise ShapeMismatch("concat_cols parts must share row count")
    vjps = []
    start = 0
    for p in parts:
        d = p.data.shape[1]
        lo, hi = start, start + d
        vjps.append(lambda g, lo=lo, hi=hi: g[:, lo:hi])
        start += d
    return _result(np.hstack([p.data for p in parts]), tuple(parts), tuple(vjps))


def slice_rows(x, start, stop):
    x = _as_tensor(x)
    n, d = x.data.shape
    if not (0 <= start < stop <= n):
        raise ShapeMismatch(f"row slice [{start}:{stop}] out of range for {n} rows")

    def vjp(g):
        full = np.zeros((n, d))
        full[start:stop] = g
        return full

    return _result(x.data[start:stop], (x,), (vjp,))


def slice_cols(x, start, stop):
    x = _as_tensor(x)
    n, d = x.data.shape
    if not (0 <= start < stop <= d):
        raise ShapeMismatch(f"column slice [{start}:{stop}] out of range for {d} cols")

    def vjp(g):
        full = np.zeros((n, d))
        full[:, start:stop] = g
        return full

    return _result(x.data[:, start:stop], (x,), (vjp,))


# --- losses -------------------------------------------------------------------


def cross_entropy(logits, labels):
    """Mean negative log-likelihood of integer labels under row softmax.

    Computed via log-sum-exp rather than log(softmax(x)) so the value
    stays accurate for extreme logits.
    """
    logits = _as_tensor(logits)
    n, c = logits.data.shape
    idx = np.asarray(labels, dtype=np.int64).ravel()
    if idx.shape[0] != n:
        raise ShapeMismatch(f"{n} logit rows but {idx.shape[0]} labels")
    if idx.size and (idx.min() < 0 or idx.max() >= c):
        raise LabelOutOfRange(f"labels must lie in [0, {c})")
    x = logits.data
    m = x.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(x - m).sum(axis=1))
    value = (lse - x[np.arange(n), idx]).mean()
    probs = K.softmax_rows(x)

    def vjp(g):
        d = probs.copy()
        d[np.arange(n), idx] -= 1.0
        return d * (g[0, 0] / n)

    return _result([[value]], (logits,), (vjp,))


# --- reverse pass -------------------------------------------------------------


def backward(loss):
    """Accumulate gradients of a scalar loss into every reachable leaf.

    `grad` buffers add up across calls on different graphs (zero them
    between optimizer steps); the graph itself is single-use.
    """
    if not isinstance(loss, Tensor):
        raise TypeError("backward expects a Tensor")
    if loss.data.shape != (1, 1):
        raise NonScalarLoss(f"loss must be (1, 1), got {loss.data.shape}")
    if loss._spent:
        raise TapeConsumed("backward was already run on this graph")

    # iterative post-order over parent links
    topo = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in visited and p.requires_grad:
                stack.append((p, False))

    grads = {id(loss): np.ones((1, 1))}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if node._parents:
            node._spent = True  # interior only; leaves are reused across passes
        if g is None:
            continue
        if node._parents:
            for p, vjp in zip(node._parents, node._vjps):
                if not p.requires_grad:
                    continue
                contrib = vjp(g)
                key = id(p)
                if key in grads:
                    grads[key] = grads[key] + contrib
                else:
                    grads[key] = contrib
        elif node.requires_grad:
            node.grad = g.copy() if node.grad is None else node.grad + g
