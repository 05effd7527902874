"""Adam with bias correction over named parameter dicts."""

import numpy as np

from .backend import kernels as K
from .errors import ShapeMismatch


class AdamState:
    """Per-parameter moment buffers plus the shared step counter.

    The step counter belongs to the state, not the loop, so resuming
    from a checkpointed state keeps bias correction consistent.
    """

    def __init__(self, params, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.step = 0
        self.m = {name: np.zeros(t.data.size) for name, t in params.items()}
        self.v = {name: np.zeros(t.data.size) for name, t in params.items()}


def adam_step(params, grads, state):
    """One in-place update of every parameter.

    `grads` maps name -> gradient array (any shape with matching size);
    a missing or None entry counts as zero, so disconnected leaves are
    carried through untouched on a fresh state.
    """
    state.step += 1
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros(p.data.size)
        else:
            g = np.ascontiguousarray(np.asarray(g, dtype=np.float64).ravel())
            if g.size != p.data.size:
                raise ShapeMismatch(
                    f"grad for {name!r} has {g.size} values, param has {p.data.size}"
                )
        K.adam_update(
            p.data.ravel(),
            g,
            state.m[name],
            state.v[name],
            state.step,
            state.lr,
            state.beta1,
            state.beta2,
            state.eps,
        )


def collect_grads(params):
    """Snapshot .grad buffers (flattened) for adam_step."""
    return {
        name: None if t.grad is None else t.grad.ravel().copy()
        for name, t in params.items()
    }


def zero_grads(params):
    for t in params.values():
        t.grad = None
