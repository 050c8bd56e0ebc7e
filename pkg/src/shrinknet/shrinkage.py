"""Active-set scheduling: low-loss sample elimination and recall.

Each epoch trains on the active set only. After the epoch the samples with
the smallest per-sample losses are dropped, either all at once across the
active set (global selection) or batch by batch against an exponentially
smoothed threshold (batchwise selection). Once the active set falls below
the stop threshold t, elimination stops (shrink) or the full training set
is recalled (shrink_recall).

All functions here are pure: they take values and return new values.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Iterable
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from shrinknet.data import Batch

logger = logging.getLogger(__name__)

# Absorbs products like 0.29 * 100 == 28.999999999999996 before floor/ceil.
_ROUNDING_SLACK = 1e-9


class ShrinkageError(ValueError):
    """Invalid scheduler configuration or selection input."""


class Mode(Enum):
    FULL = "full"
    SHRINK = "shrink"
    SHRINK_RECALL = "shrink_recall"


class Selection(Enum):
    GLOBAL = "global"
    BATCHWISE = "batchwise"


class RecallPolicy(Enum):
    REPEATING = "repeating"
    STICKY = "sticky"


# ---------------------------------------------------------------------------
# Data model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ActiveSet:
    """Strictly increasing global indices of the samples still in training."""

    indices: np.ndarray
    n_total: int

    def __post_init__(self) -> None:
        idx = np.array(self.indices, dtype=np.int64)
        if idx.ndim != 1 or idx.size == 0:
            raise ShrinkageError("Active set must be a nonempty index list")
        if idx[0] < 0 or idx[-1] >= self.n_total:
            raise ShrinkageError(
                f"Active indices must lie in [0, {self.n_total}), "
                f"got [{idx[0]}, {idx[-1]}]"
            )
        if idx.size > 1 and not np.all(np.diff(idx) > 0):
            raise ShrinkageError("Active indices must be strictly increasing")
        idx.flags.writeable = False
        object.__setattr__(self, "indices", idx)

    @classmethod
    def full(cls, n_total: int) -> ActiveSet:
        return cls(indices=np.arange(n_total, dtype=np.int64), n_total=n_total)

    @classmethod
    def of(cls, indices: Iterable[int], n_total: int) -> ActiveSet:
        return cls(indices=np.array(sorted(set(indices)), dtype=np.int64), n_total=n_total)

    def __len__(self) -> int:
        return int(self.indices.size)

    @property
    def is_full(self) -> bool:
        return len(self) == self.n_total


@dataclass(frozen=True)
class ShrinkConfig:
    """Scheduler knobs: elimination rate s, stop threshold t, smoothing alpha."""

    s: float = 0.2
    t_frac: float = 0.2
    alpha: float = 0.5
    mode: Mode = Mode.FULL
    selection: Selection = Selection.GLOBAL
    recall_policy: RecallPolicy = RecallPolicy.REPEATING

    def __post_init__(self) -> None:
        if not 0.0 <= self.s < 1.0:
            raise ShrinkageError(f"Elimination rate s must be in [0, 1), got {self.s}")
        if not 0.0 < self.t_frac <= 1.0:
            raise ShrinkageError(f"Stop threshold t must be in (0, 1], got {self.t_frac}")
        _check_alpha(self.alpha)

    def stop_threshold(self, n_total: int) -> int:
        """t as an absolute sample count, ceil(t_frac * n)."""
        return math.ceil(self.t_frac * n_total - _ROUNDING_SLACK)


@dataclass(frozen=True)
class SmootherState:
    """Previous smoothed threshold t'_i; None before the first batch."""

    prev_smoothed: float | None = None
    last_raw: float | None = field(default=None, compare=False)


def _check_alpha(alpha: float) -> None:
    if not 0.0 <= alpha < 1.0:
        raise ShrinkageError(f"Smoothing weight alpha must be in [0, 1), got {alpha}")


# ---------------------------------------------------------------------------
# Global selection
# ---------------------------------------------------------------------------


def elimination_count(n_active: int, s: float) -> int:
    """floor(n_active * s)."""
    return math.floor(n_active * s + _ROUNDING_SLACK)


def select_elimination_global(
    errors: np.ndarray, active: ActiveSet, s: float
) -> frozenset[int]:
    """The floor(|A| * s) active samples with the smallest errors.

    Ties go to the smaller global index.
    """
    errors = np.asarray(errors, dtype=np.float64)
    if errors.shape != (len(active),):
        raise ShrinkageError(
            f"{errors.shape[0] if errors.ndim == 1 else errors.shape} errors "
            f"for {len(active)} active samples"
        )
    if not 0.0 <= s < 1.0:
        raise ShrinkageError(f"Elimination rate s must be in [0, 1), got {s}")
    k = elimination_count(len(active), s)
    if k == 0:
        return frozenset()
    # active.indices is increasing, so a stable sort breaks ties by index
    order = np.argsort(errors, kind="stable")[:k]
    return frozenset(int(i) for i in active.indices[order])


# ---------------------------------------------------------------------------
# Batchwise selection with exponential smoothing
# ---------------------------------------------------------------------------


def per_batch_quota(batch_len: int, s: float) -> int:
    """round(batch_len * s), halves rounding up."""
    return math.floor(batch_len * s + 0.5 + _ROUNDING_SLACK)


def raw_batch_threshold(batch_errors: np.ndarray, k: int) -> float:
    """The k-th smallest error in the batch (1-based k)."""
    batch_errors = np.asarray(batch_errors, dtype=np.float64)
    if not 1 <= k <= batch_errors.size:
        raise ShrinkageError(f"k={k} out of range for a batch of {batch_errors.size}")
    return float(np.partition(batch_errors, k - 1)[k - 1])


def smooth_threshold(
    state: SmootherState, raw: float, alpha: float
) -> tuple[float, SmootherState]:
    """t'_{i+1} = alpha * t'_i + (1 - alpha) * t_{i+1}, with t'_1 = t_1."""
    _check_alpha(alpha)
    raw = float(raw)
    if state.prev_smoothed is None:
        smoothed = raw
    else:
        prev = state.prev_smoothed
        smoothed = alpha * prev + (1.0 - alpha) * raw
        # keep the convex combination inside [prev, raw] despite rounding
        smoothed = min(max(smoothed, min(prev, raw)), max(prev, raw))
    return smoothed, SmootherState(prev_smoothed=smoothed, last_raw=raw)


def select_elimination_batchwise(
    batch: Batch,
    batch_errors: np.ndarray,
    quota: int,
    smoother: SmootherState,
    alpha: float,
) -> tuple[frozenset[int], SmootherState]:
    """Samples of this batch whose error is <= the smoothed threshold.

    The raw threshold is the k-th smallest batch error, k = min(quota,
    batch size). A zero quota eliminates nothing and leaves the smoother
    untouched.
    """
    batch_errors = np.asarray(batch_errors, dtype=np.float64)
    if batch_errors.shape != (len(batch),):
        raise ShrinkageError(
            f"{batch_errors.size} errors for a batch of {len(batch)} samples"
        )
    if quota < 0:
        raise ShrinkageError(f"Per-batch quota must be >= 0, got {quota}")
    if quota == 0:
        return frozenset(), smoother

    k = min(quota, len(batch))
    raw = raw_batch_threshold(batch_errors, k)
    smoothed, smoother = smooth_threshold(smoother, raw, alpha)
    chosen = batch.sample_indices[batch_errors <= smoothed]
    return frozenset(int(i) for i in chosen), smoother


# ---------------------------------------------------------------------------
# Active-set transitions
# ---------------------------------------------------------------------------


def apply_elimination(active: ActiveSet, eliminated: Iterable[int]) -> ActiveSet:
    """A - S. S must be a proper subset of A."""
    drop = np.array(sorted(set(eliminated)), dtype=np.int64)
    if drop.size == 0:
        return active
    missing = np.setdiff1d(drop, active.indices, assume_unique=True)
    if missing.size:
        raise ShrinkageError(
            f"Cannot eliminate samples outside the active set: {missing[:5].tolist()}"
        )
    if drop.size == len(active):
        raise ShrinkageError("Eliminating every active sample would empty the active set")
    kept = np.setdiff1d(active.indices, drop, assume_unique=True)
    return ActiveSet(indices=kept, n_total=active.n_total)


def will_eliminate(active: ActiveSet, cfg: ShrinkConfig, recall_fired: bool) -> bool:
    """Whether the coming epoch-end transition eliminates samples.

    The trainer uses this to decide whether batchwise selection runs
    during the epoch.
    """
    if cfg.mode is Mode.FULL or cfg.s == 0.0:
        return False
    if len(active) < cfg.stop_threshold(active.n_total):
        return False
    if (
        cfg.mode is Mode.SHRINK_RECALL
        and cfg.recall_policy is RecallPolicy.STICKY
        and recall_fired
    ):
        return False
    return True


def epoch_transition(
    active: ActiveSet,
    cfg: ShrinkConfig,
    epoch_errors: np.ndarray,
    recall_fired_before: bool,
    batch_selected: Iterable[int] | None = None,
) -> tuple[ActiveSet, bool]:
    """Active set for the next epoch, and whether a recall has fired so far.

    `epoch_errors` are aligned with active.indices. With batchwise
    selection, `batch_selected` is the union of the per-batch eliminations
    collected during the epoch.
    """
    epoch_errors = np.asarray(epoch_errors, dtype=np.float64)
    if epoch_errors.shape != (len(active),):
        raise ShrinkageError(
            f"{epoch_errors.size} epoch errors for {len(active)} active samples"
        )
    if cfg.mode is Mode.FULL:
        return active, recall_fired_before

    t = cfg.stop_threshold(active.n_total)
    if len(active) < t:
        if cfg.mode is Mode.SHRINK:
            return active, recall_fired_before
        logger.info(
            "Recall: %d active samples < t=%d, restoring all %d",
            len(active),
            t,
            active.n_total,
        )
        return ActiveSet.full(active.n_total), True

    if not will_eliminate(active, cfg, recall_fired_before):
        return active, recall_fired_before

    if cfg.selection is Selection.GLOBAL:
        eliminated = select_elimination_global(epoch_errors, active, cfg.s)
    else:
        if batch_selected is None:
            raise ShrinkageError("Batchwise selection needs the per-batch eliminations")
        eliminated = _cap_batchwise(frozenset(batch_selected), active, epoch_errors)

    logger.debug("Eliminating %d of %d active samples", len(eliminated), len(active))
    return apply_elimination(active, eliminated), recall_fired_before


def _cap_batchwise(
    eliminated: frozenset[int], active: ActiveSet, epoch_errors: np.ndarray
) -> frozenset[int]:
    """Keep the highest-error sample when batchwise picks would empty the set."""
    if len(eliminated) < len(active):
        return eliminated
    order = np.lexsort((active.indices, epoch_errors))
    keep = int(active.indices[order[-1]])
    return eliminated - {keep}
