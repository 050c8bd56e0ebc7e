"""Shared test fixtures for shrinknet."""

import os
from pathlib import Path

import numpy as np
import pytest

from shrinknet import linalg
from shrinknet.data import Batch, Dataset, TargetKind, one_hot, synth_blobs
from shrinknet.model import Activation, Loss, OutputUnit, init_params


@pytest.fixture
def blobs() -> Dataset:
    """Small well-separated 3-class problem, 4 features."""
    return synth_blobs(n=120, p=4, c=3, spread=0.1, seed=3)


@pytest.fixture
def tiny_params():
    """A seeded 4-3-2 tanh / sigmoid / sum-squared network."""
    return init_params([4, 3, 2], Activation.TANH, OutputUnit.SIGMOID, Loss.SUM_SQUARED, seed=11)


@pytest.fixture
def tiny_batch() -> Batch:
    """Three samples for the 4-3-2 network."""
    rng = np.random.default_rng(5)
    return Batch(
        sample_indices=np.arange(3),
        features=linalg.matrix(rng.uniform(-1.0, 1.0, size=(4, 3))),
        targets=one_hot(np.array([0, 1, 1]), 2),
    )


def make_dataset(features_rows, labels, n_classes: int) -> Dataset:
    """Dataset from per-sample feature rows and integer labels."""
    return Dataset(
        features=linalg.matrix(np.asarray(features_rows, dtype=np.float64).T),
        targets=one_hot(np.asarray(labels), n_classes),
        kind=TargetKind.ONE_HOT,
    )


MNIST_DIR = os.environ.get("SHRINKNET_MNIST_DIR")

requires_mnist = pytest.mark.skipif(
    not MNIST_DIR, reason="set SHRINKNET_MNIST_DIR to the directory holding the MNIST IDX files"
)


def mnist_paths() -> dict[str, Path]:
    root = Path(MNIST_DIR or ".")
    return {
        "train_images": root / "train-images-idx3-ubyte",
        "train_labels": root / "train-labels-idx1-ubyte",
        "test_images": root / "t10k-images-idx3-ubyte",
        "test_labels": root / "t10k-labels-idx1-ubyte",
    }
