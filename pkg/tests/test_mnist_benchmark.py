"""Desk-scale MNIST benchmarks.

Skipped unless SHRINKNET_MNIST_DIR points at a directory holding the four
standard MNIST IDX files. The full run takes several minutes.
"""

import statistics

import pytest

from shrinknet.data import load_idx, take
from shrinknet.shrinkage import Mode, ShrinkConfig
from shrinknet.trainer import TrainConfig, baseline_config, speedup, train
from tests.conftest import mnist_paths, requires_mnist

pytestmark = requires_mnist


@pytest.fixture(scope="module")
def mnist():
    paths = mnist_paths()
    train_ds = load_idx(paths["train_images"], paths["train_labels"], classes=range(10))
    test_ds = load_idx(paths["test_images"], paths["test_labels"], classes=range(10))
    return train_ds, test_ds


def test_shrink_recall_speedup(mnist):
    """10k/2k subset, 784-100-10: median speedup >= 1.4 over three seeds."""
    train_ds, test_ds = take(mnist[0], 10_000), take(mnist[1], 2_000)
    ratios = []
    for seed in range(3):
        cfg = TrainConfig(
            arch=(784, 100, 10),
            eta=1.0,
            batch_size=100,
            epochs=30,
            seed=seed,
            shrink=ShrinkConfig(s=0.2, t_frac=0.2, alpha=0.5, mode=Mode.SHRINK_RECALL),
        )
        _, base = train(train_ds, test_ds, baseline_config(cfg))
        _, variant = train(train_ds, test_ds, cfg)
        ratios.append(speedup(base, variant))
        assert variant.final_test_error <= base.final_test_error + 0.02
        assert variant.sample_evaluations < cfg.epochs * train_ds.n
        assert variant.sample_evaluations == sum(r.active_count for r in variant.records)
    assert statistics.median(ratios) >= 1.4, ratios


def test_shrinking_lowers_training_loss(mnist):
    """On 1k samples, shrinking ends epoch 20 with no higher mean loss in 2 of 3 seeds."""
    train_ds = take(mnist[0], 1_000)
    wins = 0
    for seed in range(3):
        cfg = TrainConfig(
            arch=(784, 100, 10),
            epochs=20,
            seed=seed,
            shrink=ShrinkConfig(s=0.2, t_frac=0.2, mode=Mode.SHRINK),
        )
        _, base = train(train_ds, train_ds, baseline_config(cfg))
        _, variant = train(train_ds, train_ds, cfg)
        wins += variant.records[-1].mean_loss <= base.records[-1].mean_loss
    assert wins >= 2
