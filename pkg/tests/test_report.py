"""Tests for metrics CSV, threshold traces, summaries and parameter dumps."""

import numpy as np
import yaml

from shrinknet.model import Activation, Loss, OutputUnit, init_params
from shrinknet.report import (
    METRICS_HEADER,
    THRESHOLDS_HEADER,
    atomic_write,
    config_dict,
    render_metrics,
    save_params,
    summary_dict,
    write_metrics_csv,
    write_summary,
    write_thresholds_csv,
)
from shrinknet.shrinkage import Mode, ShrinkConfig
from shrinknet.trainer import EpochRecord, RunSummary, TrainConfig


def _records():
    return [
        EpochRecord(1, 100, 12.5, 0.25, 0.3, 0.125, evaluations=100, thresholds=[(0.1, 0.1), (0.3, 0.2)]),
        EpochRecord(2, 80, 10.0, 0.2, 0.25, 0.1, evaluations=80),
    ]


class TestMetricsCsv:
    """Per-epoch metrics and threshold CSV output."""

    def test_header_and_rows(self):
        """Header first, then one row per epoch."""
        lines = render_metrics(_records()).splitlines()
        assert lines[0] == METRICS_HEADER
        assert lines[1] == "1,100,12.500,0.25,0.3,0.125"
        assert len(lines) == 3

    def test_write(self, tmp_path):
        """Parent directories are created and rows written."""
        path = tmp_path / "out" / "m.csv"
        write_metrics_csv(_records(), path)
        assert path.read_text().splitlines()[2].startswith("2,80,10.000,")

    def test_thresholds(self, tmp_path):
        """One row per batch with raw and smoothed values."""
        path = tmp_path / "t.csv"
        write_thresholds_csv(_records(), path)
        assert path.read_text().splitlines() == [THRESHOLDS_HEADER, "1,1,0.1,0.1", "1,2,0.3,0.2"]


class TestAtomicWrite:
    """Temp-file plus rename writes."""

    def test_replaces_content_and_leaves_no_temp(self, tmp_path):
        """A rewrite replaces the content and leaves no temp file."""
        path = tmp_path / "f.txt"
        atomic_write(path, b"one")
        atomic_write(path, b"two")
        assert path.read_bytes() == b"two"
        assert [p.name for p in tmp_path.iterdir()] == ["f.txt"]


class TestSummary:
    """YAML run summaries."""

    def test_yaml_round_trip(self, tmp_path):
        """Config and run sections load back in order."""
        cfg = TrainConfig(arch=(4, 5, 3), shrink=ShrinkConfig(mode=Mode.SHRINK_RECALL))
        summary = RunSummary(
            records=_records(), total_train_ms=22.5, final_train_error=0.2, final_test_error=0.25
        )
        path = tmp_path / "s.yaml"
        write_summary({"config": config_dict(cfg), "run": summary_dict(summary)}, path)

        loaded = yaml.safe_load(path.read_text())
        assert loaded["config"]["net"] == "4-5-3"
        assert loaded["config"]["mode"] == "shrink_recall"
        assert loaded["run"]["sample_evaluations"] == 180
        assert loaded["run"]["active_counts"] == [100, 80]
        assert list(loaded) == ["config", "run"]


class TestSaveParams:
    """Parameter dumps."""

    def test_npz_layout(self, tmp_path):
        """The archive holds arch plus w<k>, b<k> per layer."""
        params = init_params([4, 3, 2], Activation.TANH, OutputUnit.SIGMOID, Loss.SUM_SQUARED, 0)
        path = tmp_path / "p.npz"
        save_params(params, path)
        with np.load(path) as z:
            assert z["arch"].tolist() == [4, 3, 2]
            np.testing.assert_array_equal(z["w1"], params.layers[1].weights)
            np.testing.assert_array_equal(z["b0"], params.layers[0].bias)
