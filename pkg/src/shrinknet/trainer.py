"""Epoch loop for full, shrinking and shrinking-with-recall training.

One run owns its parameters and a single random stream, consumed in a
fixed order: parameter initialisation first, then one permutation per
epoch. Only the batch loop is timed; train/test evaluation happens after
the clock stops.
"""

from __future__ import annotations

import logging
import statistics
import time
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field, replace

import numpy as np

from shrinknet.data import Batch, Dataset, batches
from shrinknet.model import (
    Activation,
    Loss,
    MlpParams,
    OutputUnit,
    backward,
    classify_error,
    dataset_losses,
    forward,
    init_params,
    mse_error,
    per_sample_loss,
    sgd_step,
)
from shrinknet.shrinkage import (
    ActiveSet,
    Mode,
    Selection,
    ShrinkConfig,
    SmootherState,
    epoch_transition,
    per_batch_quota,
    select_elimination_batchwise,
    will_eliminate,
)

logger = logging.getLogger(__name__)

BatchHook = Callable[[int, Batch], None]


class TrainingError(ValueError):
    """Training inputs or benchmark quantities are invalid."""


@dataclass(frozen=True)
class TrainConfig:
    arch: tuple[int, ...]
    activation: Activation = Activation.TANH
    output_unit: OutputUnit = OutputUnit.SIGMOID
    loss: Loss = Loss.SUM_SQUARED
    eta: float = 1.0
    batch_size: int = 100
    epochs: int = 30
    seed: int = 0
    shrink: ShrinkConfig = field(default_factory=ShrinkConfig)
    shuffle: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "arch", tuple(self.arch))
        if self.epochs < 1:
            raise TrainingError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise TrainingError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.eta > 0:
            raise TrainingError(f"Learning rate must be > 0, got {self.eta}")


@dataclass
class EpochRecord:
    """Telemetry for one epoch."""

    epoch: int
    active_count: int
    wall_ms: float
    train_error: float
    test_error: float
    mean_loss: float
    active_loss: float = 0.0
    evaluations: int = 0
    thresholds: list[tuple[float, float]] = field(default_factory=list)


@dataclass
class RunSummary:
    records: list[EpochRecord]
    total_train_ms: float
    final_train_error: float
    final_test_error: float

    @property
    def sample_evaluations(self) -> int:
        """Per-sample forward evaluations across all epochs."""
        return sum(r.evaluations for r in self.records)


def train(
    ds_train: Dataset,
    ds_test: Dataset,
    cfg: TrainConfig,
    on_batch: BatchHook | None = None,
) -> tuple[MlpParams, RunSummary]:
    """Train per cfg.shrink.mode and return final parameters plus telemetry.

    Each epoch: batch the active set, forward, record per-sample losses,
    backward, SGD step; then let the scheduler pick next epoch's active set.
    `on_batch(epoch, batch)` is called before every forward pass.
    """
    _check_dims(ds_train, ds_test, cfg.arch)
    if ds_train.kind is not ds_test.kind:
        raise TrainingError("Train and test sets have different target kinds")

    rng = np.random.default_rng(cfg.seed)
    params = init_params(cfg.arch, cfg.activation, cfg.output_unit, cfg.loss, rng)
    shrink = cfg.shrink
    active = ActiveSet.full(ds_train.n)
    loss_buffer = np.zeros(ds_train.n, dtype=np.float64)
    recall_fired = False
    records: list[EpochRecord] = []
    total_ms = 0.0

    logger.info(
        "Training %s, mode=%s selection=%s s=%.3f t=%d alpha=%.2f, n=%d, %d epochs",
        "-".join(map(str, cfg.arch)),
        shrink.mode.value,
        shrink.selection.value,
        shrink.s,
        shrink.stop_threshold(ds_train.n),
        shrink.alpha,
        ds_train.n,
        cfg.epochs,
    )

    for epoch in range(1, cfg.epochs + 1):
        batchwise = (
            shrink.selection is Selection.BATCHWISE
            and will_eliminate(active, shrink, recall_fired)
        )
        smoother = SmootherState()
        selected: set[int] = set()
        thresholds: list[tuple[float, float]] = []
        evaluations = 0

        start = time.perf_counter()
        for batch in batches(
            ds_train, active, cfg.batch_size, rng if cfg.shuffle else None
        ):
            if on_batch is not None:
                on_batch(epoch, batch)
            trace = forward(params, batch)
            losses = per_sample_loss(trace, batch.targets)
            loss_buffer[batch.sample_indices] = losses
            evaluations += len(batch)
            if batchwise:
                quota = per_batch_quota(len(batch), shrink.s)
                chosen, smoother = select_elimination_batchwise(
                    batch, losses, quota, smoother, shrink.alpha
                )
                selected |= chosen
                if quota:
                    thresholds.append((smoother.last_raw, smoother.prev_smoothed))
            params = sgd_step(params, backward(params, trace, batch.targets), cfg.eta)

        epoch_errors = loss_buffer[active.indices]
        next_active, recall_fired = epoch_transition(
            active,
            shrink,
            epoch_errors,
            recall_fired,
            batch_selected=selected if batchwise else None,
        )
        wall_ms = (time.perf_counter() - start) * 1000.0
        total_ms += wall_ms

        train_err, mean_loss = _evaluate(params, ds_train, with_loss=True)
        test_err, _ = _evaluate(params, ds_test, with_loss=False)
        record = EpochRecord(
            epoch=epoch,
            active_count=len(active),
            wall_ms=wall_ms,
            train_error=train_err,
            test_error=test_err,
            mean_loss=mean_loss,
            active_loss=float(np.mean(epoch_errors)),
            evaluations=evaluations,
            thresholds=thresholds,
        )
        records.append(record)
        logger.info(
            "Epoch %d: active=%d wall=%.1fms train_err=%.4f test_err=%.4f loss=%.5f",
            epoch,
            record.active_count,
            wall_ms,
            train_err,
            test_err,
            mean_loss,
        )
        active = next_active

    summary = RunSummary(
        records=records,
        total_train_ms=total_ms,
        final_train_error=records[-1].train_error,
        final_test_error=records[-1].test_error,
    )
    return params, summary


def _check_dims(ds_train: Dataset, ds_test: Dataset, arch: Sequence[int]) -> None:
    for name, ds in (("train", ds_train), ("test", ds_test)):
        if ds.p != arch[0] or ds.c != arch[-1]:
            raise TrainingError(
                f"{name} set is {ds.p} features -> {ds.c} targets, "
                f"network is {'-'.join(map(str, arch))}"
            )


def _evaluate(params: MlpParams, ds: Dataset, with_loss: bool) -> tuple[float, float]:
    """(error, mean per-sample loss); classification error or MSE by target kind."""
    err = classify_error(params, ds) if ds.is_classification else mse_error(params, ds)
    mean_loss = float(np.mean(dataset_losses(params, ds))) if with_loss else 0.0
    return err, mean_loss


# ---------------------------------------------------------------------------
# Benchmark quantities
# ---------------------------------------------------------------------------


def speedup(baseline: RunSummary, variant: RunSummary) -> float:
    """Baseline training time over variant training time."""
    if baseline.total_train_ms <= 0 or variant.total_train_ms <= 0:
        raise TrainingError(
            f"Training times must be positive, got {baseline.total_train_ms} ms "
            f"and {variant.total_train_ms} ms"
        )
    return baseline.total_train_ms / variant.total_train_ms


def improvement(err_base: float, err_variant: float) -> float:
    """Relative error improvement (err_base - err_variant) / err_base."""
    if err_base <= 0:
        raise TrainingError(f"Baseline error must be > 0 to compute IMP, got {err_base}")
    return (err_base - err_variant) / err_base


def median_speedup(pairs: Sequence[tuple[RunSummary, RunSummary]]) -> float:
    return statistics.median(speedup(base, variant) for base, variant in pairs)


def baseline_config(cfg: TrainConfig) -> TrainConfig:
    """Same run with the scheduler switched off."""
    return replace(cfg, shrink=replace(cfg.shrink, mode=Mode.FULL))
