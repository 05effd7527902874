"""Central-difference verification of analytic gradients."""

import numpy as np

from .autodiff import backward, no_grad


def grad_check(f, x, h=1e-4):
    """Max relative error between analytic and numeric gradients of f at x.

    f must be a pure scalar function of the tensor x (it may close over
    other tensors). Error per coordinate is
    |analytic - central_difference| / max(1, |analytic|, |numeric|),
    and the max over all coordinates of x is returned.
    """
    x.grad = None
    backward(f(x))
    analytic = np.zeros(x.data.shape) if x.grad is None else x.grad
    flat = x.data.ravel()
    aflat = analytic.ravel()
    worst = 0.0
    for i in range(flat.size):
        kept = flat[i]
        flat[i] = kept + h
        with no_grad():
            fp = f(x).item()
        flat[i] = kept - h
        with no_grad():
            fm = f(x).item()
        flat[i] = kept
        numeric = (fp - fm) / (2.0 * h)
        err = abs(aflat[i] - numeric) / max(1.0, abs(aflat[i]), abs(numeric))
        if err > worst:
            worst = err
    return float(worst)


def grad_check_params(f, params, h=1e-4):
    """Run grad_check against every named parameter; return {name: error}.

    f takes no arguments and recomputes the loss from current parameter
    values, so perturbing one coordinate reruns the whole forward pass.
    """
    return {name: grad_check(lambda _t, f=f: f(), t, h) for name, t in params.items()}


def _tiny_setup(trial=0):
    """A 2-image batch and parameters for a deliberately small model."""
    from .images import Image
    from .model import ArchConfig, init_params
    from .rng import Rng

    cfg = ArchConfig(
        num_classes=2,
        vocab=["plain tissue region", "tissue region with a lesion"],
        image_size=16,
        patch_size=8,
        embed_dim=8,
        num_layers=1,
        num_heads=2,
        mlp_ratio=2,
    )
    params = init_params(cfg, seed=trial)
    rng = Rng(1000 + trial)
    images = [
        Image((rng.uniforms(256) * 256).astype(np.uint8).reshape(16, 16))
        for _ in range(2)
    ]
    return params, images, [0, 1]


def composite_gradcheck(trials=1, h=1e-4, lam=0.5):
    """Worst grad_check error of the full composite loss, all parameters.

    Uses a deliberately small architecture so exhaustive per-coordinate
    central differences stay cheap; the loss expression itself is the
    production one (contrastive + cross-entropy through the whole dual
    encoder and fusion path).
    """
    from .training import batch_loss

    worst = 0.0
    for trial in range(trials):
        params, images, labels = _tiny_setup(trial)

        def loss():
            return batch_loss(params, images, labels, lam).l_total

        errors = grad_check_params(loss, params.tensors, h)
        worst = max(worst, max(errors.values()))
    return worst
