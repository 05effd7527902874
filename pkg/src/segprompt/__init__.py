"""Mask-prompted dual-encoder classification at desk scale.

A small ViT over mask-restricted images, a class-text embedding
encoder, additive text-context fusion, a contrastive + cross-entropy
composite objective, and a frozen-feature linear probe, together with
a synthetic dataset whose background shortcut makes the value of the
mask measurable.
"""

from .autodiff import Tensor, backward, no_grad
from .backend import BACKEND
from .model import ArchConfig, init_params, load_checkpoint, save_checkpoint
from .rng import Rng
from .training import TrainConfig, evaluate, logistic_probe, run_experiment, train

__version__ = "0.1.0"

__all__ = [
    "ArchConfig",
    "BACKEND",
    "Rng",
    "Tensor",
    "TrainConfig",
    "backward",
    "evaluate",
    "init_params",
    "load_checkpoint",
    "logistic_probe",
    "no_grad",
    "run_experiment",
    "save_checkpoint",
    "train",
    "__version__",
]
