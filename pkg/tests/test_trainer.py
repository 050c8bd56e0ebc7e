"""Tests for the training loop and benchmark quantities."""

import math
from dataclasses import replace

import numpy as np
import pytest

from shrinknet.data import load_csv, synth_blobs
from shrinknet.model import Loss, OutputUnit
from shrinknet.report import render_metrics
from shrinknet.shrinkage import Mode, RecallPolicy, Selection, ShrinkConfig
from shrinknet.trainer import (
    RunSummary,
    TrainConfig,
    TrainingError,
    baseline_config,
    improvement,
    median_speedup,
    speedup,
    train,
)


def _summary(ms: float) -> RunSummary:
    return RunSummary(records=[], total_train_ms=ms, final_train_error=0.0, final_test_error=0.0)


def _without_timing(records):
    return [
        (
            r.epoch,
            r.active_count,
            r.train_error,
            r.test_error,
            r.mean_loss,
            r.active_loss,
            r.evaluations,
            r.thresholds,
        )
        for r in records
    ]


def _metrics_without_wall(records):
    rows = render_metrics(records).splitlines()
    out = []
    for row in rows:
        cells = row.split(",")
        out.append(cells[:2] + cells[3:])
    return out


class TestTrainConfig:
    """Training configuration checks."""

    def test_arch_coerced_to_tuple(self):
        """A list architecture is stored as a tuple."""
        assert TrainConfig(arch=[4, 3, 2]).arch == (4, 3, 2)

    @pytest.mark.parametrize("kwargs", [{"epochs": 0}, {"batch_size": 0}, {"eta": 0.0}])
    def test_invalid(self, kwargs):
        """Non-positive epochs, batch size or learning rate are refused."""
        with pytest.raises(TrainingError):
            TrainConfig(arch=(4, 3, 2), **kwargs)

    def test_baseline_config_only_switches_mode(self):
        """The baseline differs from the variant in mode only."""
        cfg = TrainConfig(arch=(4, 3, 2), seed=5, shrink=ShrinkConfig(s=0.3, mode=Mode.SHRINK_RECALL))
        base = baseline_config(cfg)
        assert base.shrink.mode is Mode.FULL
        assert base.shrink.s == 0.3
        assert replace(base, shrink=cfg.shrink) == cfg


class TestTrain:
    """The epoch loop."""

    def test_learns_separated_blobs(self):
        """Well-separated blobs reach 5% training error in 30 epochs."""
        ds = synth_blobs(n=500, p=10, c=3, spread=0.1, seed=7)
        cfg = TrainConfig(
            arch=(10, 16, 3),
            output_unit=OutputUnit.SOFTMAX,
            loss=Loss.SOFTMAX_CROSS_ENTROPY,
            eta=1.0,
            batch_size=50,
            epochs=30,
            seed=7,
        )
        params, summary = train(ds, ds, cfg)
        assert summary.final_train_error <= 0.05
        assert len(summary.records) == 30
        assert params.arch == (10, 16, 3)

    def test_records_and_totals(self, blobs):
        """One record per epoch; total time is the sum of epoch times."""
        cfg = TrainConfig(arch=(4, 5, 3), epochs=3, batch_size=16, seed=1)
        _, summary = train(blobs, blobs, cfg)
        assert [r.epoch for r in summary.records] == [1, 2, 3]
        assert summary.total_train_ms == pytest.approx(sum(r.wall_ms for r in summary.records))
        assert summary.final_test_error == summary.records[-1].test_error
        assert all(r.wall_ms > 0 for r in summary.records)

    def test_same_seed_same_run(self, blobs):
        """Same seed, same records and weights."""
        cfg = TrainConfig(
            arch=(4, 5, 3), epochs=4, batch_size=16, seed=2, shrink=ShrinkConfig(mode=Mode.SHRINK)
        )
        p1, s1 = train(blobs, blobs, cfg)
        p2, s2 = train(blobs, blobs, cfg)
        assert _without_timing(s1.records) == _without_timing(s2.records)
        for a, b in zip(p1.layers, p2.layers):
            np.testing.assert_array_equal(a.weights, b.weights)

    @pytest.mark.parametrize("mode", [Mode.SHRINK, Mode.SHRINK_RECALL])
    @pytest.mark.parametrize("seed", range(5))
    def test_zero_rate_matches_full_training(self, mode, seed):
        """With s = 0 every mode reproduces full training exactly."""
        ds = synth_blobs(n=500, p=10, c=3, spread=0.5, seed=seed)
        base = TrainConfig(arch=(10, 6, 3), epochs=3, batch_size=50, seed=seed)
        variant = replace(base, shrink=ShrinkConfig(s=0.0, mode=mode))

        p_full, s_full = train(ds, ds, base)
        p_var, s_var = train(ds, ds, variant)
        assert _without_timing(s_full.records) == _without_timing(s_var.records)
        assert _metrics_without_wall(s_full.records) == _metrics_without_wall(s_var.records)
        for a, b in zip(p_full.layers, p_var.layers):
            np.testing.assert_array_equal(a.weights, b.weights)
            np.testing.assert_array_equal(a.bias, b.bias)

    def test_active_counts_decay_then_recall(self):
        """Active counts follow the 20% decay and recall at t."""
        ds = synth_blobs(n=1000, p=4, c=2, spread=1.0, seed=0)
        cfg = TrainConfig(
            arch=(4, 3, 2),
            epochs=11,
            batch_size=100,
            seed=0,
            shrink=ShrinkConfig(s=0.2, t_frac=0.2, mode=Mode.SHRINK_RECALL),
        )
        _, summary = train(ds, ds, cfg)
        counts = [r.active_count for r in summary.records]
        assert counts == [1000, 800, 640, 512, 410, 328, 263, 211, 169, 1000, 800]

    def test_evaluations_equal_active_counts(self, blobs):
        """Forward passes per epoch equal the active count."""
        cfg = TrainConfig(
            arch=(4, 5, 3), epochs=8, batch_size=10, seed=3, shrink=ShrinkConfig(mode=Mode.SHRINK)
        )
        _, summary = train(blobs, blobs, cfg)
        assert [r.evaluations for r in summary.records] == [r.active_count for r in summary.records]
        assert summary.sample_evaluations == sum(r.active_count for r in summary.records)
        assert summary.sample_evaluations < cfg.epochs * blobs.n

    def test_batchwise_shrinks_and_traces_thresholds(self, blobs):
        """Batchwise runs shrink monotonically and record one threshold per batch."""
        cfg = TrainConfig(
            arch=(4, 5, 3),
            epochs=4,
            batch_size=20,
            seed=4,
            shrink=ShrinkConfig(s=0.2, alpha=0.5, mode=Mode.SHRINK, selection=Selection.BATCHWISE),
        )
        _, summary = train(blobs, blobs, cfg)
        counts = [r.active_count for r in summary.records]
        assert counts[0] == blobs.n
        assert all(b <= a for a, b in zip(counts, counts[1:]))
        assert counts[-1] < blobs.n
        first = summary.records[0].thresholds
        assert len(first) == math.ceil(blobs.n / 20)
        assert first[0][0] == first[0][1]

    def test_sticky_recall_stays_full(self):
        """Once recalled under the sticky policy, every epoch uses all samples."""
        ds = synth_blobs(n=100, p=4, c=2, spread=1.0, seed=0)
        cfg = TrainConfig(
            arch=(4, 3, 2),
            epochs=14,
            batch_size=25,
            seed=0,
            shrink=ShrinkConfig(mode=Mode.SHRINK_RECALL, recall_policy=RecallPolicy.STICKY),
        )
        _, summary = train(ds, ds, cfg)
        counts = [r.active_count for r in summary.records]
        recalled = counts.index(100, 1)
        assert all(c == 100 for c in counts[recalled:])

    def test_on_batch_hook_sees_every_batch(self, blobs):
        """The hook is called once per batch with the epoch number."""
        seen = []
        cfg = TrainConfig(arch=(4, 5, 3), epochs=2, batch_size=50, seed=0)
        train(blobs, blobs, cfg, on_batch=lambda epoch, batch: seen.append((epoch, len(batch))))
        assert seen == [(1, 50), (1, 50), (1, 20), (2, 50), (2, 50), (2, 20)]

    def test_no_shuffle_visits_in_order(self, blobs):
        """shuffle=False visits batches in index order."""
        firsts = []
        cfg = TrainConfig(arch=(4, 5, 3), epochs=1, batch_size=40, seed=0, shuffle=False)
        train(blobs, blobs, cfg, on_batch=lambda _, b: firsts.append(int(b.sample_indices[0])))
        assert firsts == [0, 40, 80]

    def test_dimension_mismatch(self, blobs):
        """An input width different from p is refused."""
        with pytest.raises(TrainingError):
            train(blobs, blobs, TrainConfig(arch=(5, 3)))

    def test_mean_loss_covers_full_training_set(self, blobs):
        """Mean loss is reported for the full and the active set."""
        cfg = TrainConfig(
            arch=(4, 5, 3), epochs=3, batch_size=10, seed=0, shrink=ShrinkConfig(mode=Mode.SHRINK)
        )
        _, summary = train(blobs, blobs, cfg)
        for r in summary.records:
            assert r.mean_loss > 0
            assert r.active_loss > 0

    def test_real_valued_targets_report_mse(self, tmp_path):
        """Real-valued targets are scored by mean squared error."""
        path = tmp_path / "reg.csv"
        rng = np.random.default_rng(0)
        x = rng.random((40, 2))
        y = (x.sum(axis=1) / 2.0)[:, None]
        path.write_text("\n".join(",".join(repr(float(v)) for v in row) for row in np.hstack([x, y])))
        ds = load_csv(path, target_cols=1)
        _, summary = train(ds, ds, TrainConfig(arch=(2, 4, 1), epochs=2, batch_size=10))
        assert 0.0 <= summary.final_train_error < 1.0


class TestBenchmarkQuantities:
    """Speedup and improvement ratios."""

    def test_speedup(self):
        """Baseline time over variant time."""
        assert round(speedup(_summary(1653.0), _summary(805.0)), 2) == 2.05
        assert round(speedup(_summary(1627.0), _summary(700.0)), 2) == 2.32
        assert speedup(_summary(10.0), _summary(10.0)) == 1.0

    def test_speedup_needs_positive_times(self):
        """A zero baseline time is refused."""
        with pytest.raises(TrainingError):
            speedup(_summary(0.0), _summary(1.0))

    def test_improvement(self):
        """Relative test-error reduction, negative when worse."""
        assert round(improvement(0.0387, 0.0324), 3) == 0.163
        assert improvement(0.05, 0.05) == 0.0
        assert round(improvement(0.0072, 0.0073), 4) == -0.0139

    def test_improvement_needs_positive_baseline(self):
        """A zero baseline error is refused."""
        with pytest.raises(TrainingError):
            improvement(0.0, 0.1)

    def test_median_speedup(self):
        """The median of per-seed speedups."""
        pairs = [
            (_summary(300.0), _summary(100.0)),
            (_summary(200.0), _summary(100.0)),
            (_summary(100.0), _summary(100.0)),
        ]
        assert median_speedup(pairs) == 2.0
