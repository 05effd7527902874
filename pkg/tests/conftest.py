import pytest

from segprompt.data import GenConfig, generate_synthetic, read_manifest, prompt_vocab
from segprompt.model import ArchConfig


@pytest.fixture(scope="session")
def tiny_root(tmp_path_factory):
    """32 train / 16 test images across 4 classes; fast to train against."""
    root = tmp_path_factory.mktemp("tiny_data")
    generate_synthetic(
        GenConfig(per_class_train=8, per_class_test=4, seed=7), str(root)
    )
    return str(root)


@pytest.fixture(scope="session")
def tiny_manifest(tiny_root):
    return read_manifest(tiny_root)


@pytest.fixture(scope="session")
def default_root(tmp_path_factory):
    """The full default dataset (400 train / 200 test, seed 0)."""
    root = tmp_path_factory.mktemp("default_data")
    generate_synthetic(GenConfig(seed=0), str(root))
    return str(root)


@pytest.fixture(scope="session")
def default_manifest(default_root):
    return read_manifest(default_root)


@pytest.fixture()
def small_arch(tiny_manifest):
    """One-layer 16-dim encoder over the tiny dataset's classes."""
    return ArchConfig(
        num_classes=4,
        vocab=prompt_vocab(tiny_manifest.classes),
        image_size=64,
        patch_size=16,
        embed_dim=16,
        num_layers=1,
        num_heads=2,
        mlp_ratio=2,
    )
