"""Result files: per-epoch metrics CSV, threshold traces, run summaries."""

from __future__ import annotations

import csv
import io
import logging
import os
import tempfile
from collections.abc import Iterable, Sequence
from pathlib import Path
from typing import TYPE_CHECKING, Any

import numpy as np
import yaml

if TYPE_CHECKING:
    from shrinknet.model import MlpParams
    from shrinknet.trainer import EpochRecord, RunSummary, TrainConfig

logger = logging.getLogger(__name__)

METRICS_FIELDS = ("epoch", "active_count", "wall_ms", "train_err", "test_err", "mean_loss")
THRESHOLDS_FIELDS = ("epoch", "batch", "raw", "smoothed")
METRICS_HEADER = ",".join(METRICS_FIELDS)
THRESHOLDS_HEADER = ",".join(THRESHOLDS_FIELDS)


def atomic_write(path: Path, content: bytes) -> None:
    """Atomic write: temp-file in same dir, then os.replace."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=str(path.parent), suffix=".tmp", prefix=".shrinknet-")
    try:
        os.write(fd, content)
        os.close(fd)
        fd = -1
        os.replace(tmp, str(path))
    except BaseException:
        if fd >= 0:
            os.close(fd)
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def render_csv(header: Sequence[str] | None, rows: Iterable[Sequence[Any]]) -> str:
    """CSV text with '\\n' line endings; floats keep their shortest repr."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if header is not None:
        writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def render_metrics(records: Sequence[EpochRecord]) -> str:
    return render_csv(
        METRICS_FIELDS,
        (
            [
                r.epoch,
                r.active_count,
                f"{r.wall_ms:.3f}",
                float(r.train_error),
                float(r.test_error),
                float(r.mean_loss),
            ]
            for r in records
        ),
    )


def write_metrics_csv(records: Sequence[EpochRecord], path: str | Path) -> None:
    atomic_write(Path(path), render_metrics(records).encode("utf-8"))
    logger.info("Wrote %d epoch rows to %s", len(records), path)


def write_thresholds_csv(records: Sequence[EpochRecord], path: str | Path) -> None:
    """Per-batch (raw, smoothed) elimination thresholds of every epoch."""
    rows = (
        [r.epoch, i, float(raw), float(smoothed)]
        for r in records
        for i, (raw, smoothed) in enumerate(r.thresholds, start=1)
    )
    atomic_write(Path(path), render_csv(THRESHOLDS_FIELDS, rows).encode("utf-8"))


def config_dict(cfg: TrainConfig) -> dict[str, Any]:
    return {
        "net": "-".join(map(str, cfg.arch)),
        "activation": cfg.activation.value,
        "output": cfg.output_unit.value,
        "loss": cfg.loss.value,
        "lr": cfg.eta,
        "batch": cfg.batch_size,
        "epochs": cfg.epochs,
        "seed": cfg.seed,
        "shuffle": cfg.shuffle,
        "mode": cfg.shrink.mode.value,
        "selection": cfg.shrink.selection.value,
        "recall": cfg.shrink.recall_policy.value,
        "s": cfg.shrink.s,
        "t": cfg.shrink.t_frac,
        "alpha": cfg.shrink.alpha,
    }


def summary_dict(summary: RunSummary) -> dict[str, Any]:
    return {
        "total_train_ms": round(summary.total_train_ms, 3),
        "final_train_error": summary.final_train_error,
        "final_test_error": summary.final_test_error,
        "sample_evaluations": summary.sample_evaluations,
        "active_counts": [r.active_count for r in summary.records],
    }


def write_summary(payload: dict[str, Any], path: str | Path) -> None:
    text = yaml.safe_dump(payload, default_flow_style=False, sort_keys=False)
    atomic_write(Path(path), text.encode("utf-8"))
    logger.info("Wrote run summary to %s", path)


def save_params(params: MlpParams, path: str | Path) -> None:
    """Flat .npz dump: w0, b0, w1, b1, ... plus the architecture."""
    arrays: dict[str, np.ndarray] = {"arch": np.array(params.arch, dtype=np.int64)}
    for k, layer in enumerate(params.layers):
        arrays[f"w{k}"] = np.asarray(layer.weights)
        arrays[f"b{k}"] = np.asarray(layer.bias)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        np.savez(f, **arrays)
    logger.info("Saved %d parameters to %s", params.n_params, path)
