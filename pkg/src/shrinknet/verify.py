"""Independent oracles for the model and the scheduler.

- central finite differences against backward()
- empirical check that samples with larger loss have larger gradients
- a full-sort reference for low-loss sample selection
"""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
from scipy import stats

from shrinknet import linalg
from shrinknet.data import Batch, Dataset, dataset_batch, one_hot
from shrinknet.model import (
    Activation,
    Gradients,
    Layer,
    Loss,
    MlpParams,
    OutputUnit,
    backward,
    forward,
    init_params,
    per_sample_loss,
)

logger = logging.getLogger(__name__)

REL_ERROR_FLOOR = 1e-8
MIN_LEMMA_SAMPLES = 30


class OracleError(ValueError):
    """Invalid oracle arguments."""


@dataclass(frozen=True)
class GradCheckReport:
    max_rel_error: float
    worst_param: tuple[int, int, int | None]  # (layer, row, col); col None for a bias
    passed: bool
    tolerance: float


@dataclass(frozen=True)
class Lemma1Report:
    """Correlation between per-sample loss and per-sample gradient norm.

    pearson/spearman are None when either series has zero variance.
    """

    pearson: float | None
    spearman: float | None
    n_samples: int
    degenerate: bool = False


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------


def relative_error(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """|a - b| / max(|a|, |b|, 1e-8), entrywise."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), REL_ERROR_FLOOR)
    return np.abs(a - b) / denom


def mean_batch_loss(params: MlpParams, batch: Batch) -> float:
    losses = per_sample_loss(forward(params, batch), batch.targets)
    return math.fsum(losses) / len(batch)


def _replace_layer(params: MlpParams, k: int, weights: np.ndarray, bias: np.ndarray) -> MlpParams:
    layers = list(params.layers)
    layers[k] = Layer(
        weights=linalg.matrix(weights),
        bias=linalg.vector(bias),
        activation=layers[k].activation,
    )
    return MlpParams(layers=tuple(layers), output_unit=params.output_unit, loss=params.loss)


def finite_diff_grad(params: MlpParams, batch: Batch, h: float = 1e-5) -> Gradients:
    """(L(w + h) - L(w - h)) / 2h for every scalar parameter.

    L is the mean per-sample loss over the batch.
    """
    if not h > 0:
        raise OracleError(f"Step h must be > 0, got {h}")
    grad_w: list[linalg.Matrix] = []
    grad_b: list[linalg.Vector] = []
    for k, layer in enumerate(params.layers):
        w = np.array(layer.weights)
        b = np.array(layer.bias)

        gw = np.zeros_like(w)
        for idx in np.ndindex(*w.shape):
            orig = w[idx]
            w[idx] = orig + h
            plus = mean_batch_loss(_replace_layer(params, k, w, b), batch)
            w[idx] = orig - h
            minus = mean_batch_loss(_replace_layer(params, k, w, b), batch)
            w[idx] = orig
            gw[idx] = (plus - minus) / (2.0 * h)

        gb = np.zeros_like(b)
        for i in range(b.shape[0]):
            orig = b[i]
            b[i] = orig + h
            plus = mean_batch_loss(_replace_layer(params, k, w, b), batch)
            b[i] = orig - h
            minus = mean_batch_loss(_replace_layer(params, k, w, b), batch)
            b[i] = orig
            gb[i] = (plus - minus) / (2.0 * h)

        grad_w.append(linalg.matrix(gw))
        grad_b.append(linalg.vector(gb))
    return Gradients(weights=tuple(grad_w), biases=tuple(grad_b))


def grad_check(
    params: MlpParams,
    batch: Batch,
    h: float = 1e-5,
    tolerance: float = 1e-6,
) -> GradCheckReport:
    """Compare backward() with central finite differences."""
    trace = forward(params, batch)
    analytic = backward(params, trace, batch.targets)
    numeric = finite_diff_grad(params, batch, h)

    worst = -1.0
    worst_param: tuple[int, int, int | None] = (0, 0, 0)
    for k in range(len(params.layers)):
        rel_w = relative_error(analytic.weights[k], numeric.weights[k])
        if rel_w.size and rel_w.max() > worst:
            row, col = np.unravel_index(int(np.argmax(rel_w)), rel_w.shape)
            worst, worst_param = float(rel_w.max()), (k, int(row), int(col))
        rel_b = relative_error(analytic.biases[k], numeric.biases[k])
        if rel_b.size and rel_b.max() > worst:
            worst, worst_param = float(rel_b.max()), (k, int(np.argmax(rel_b)), None)

    report = GradCheckReport(
        max_rel_error=worst,
        worst_param=worst_param,
        passed=worst < tolerance,
        tolerance=tolerance,
    )
    logger.debug("Gradient check: %s", report)
    return report


def gradcheck_fixture(
    arch: Sequence[int],
    activation: Activation,
    output_unit: OutputUnit,
    loss: Loss,
    seed: int,
    batch_size: int = 1,
) -> tuple[MlpParams, Batch]:
    """A random network, random inputs and random one-hot targets.

    Input magnitudes lie in [0.5, 1.5] with random signs, keeping input
    weight gradients away from zero.
    """
    rng = np.random.default_rng(seed)
    params = init_params(arch, activation, output_unit, loss, rng)
    shape = (arch[0], batch_size)
    features = rng.uniform(0.5, 1.5, size=shape) * rng.choice([-1.0, 1.0], size=shape)
    labels = rng.integers(0, arch[-1], size=batch_size)
    batch = Batch(
        sample_indices=np.arange(batch_size),
        features=linalg.matrix(features),
        targets=one_hot(labels, arch[-1]),
    )
    return params, batch


# ---------------------------------------------------------------------------
# Loss / gradient-norm correlation
# ---------------------------------------------------------------------------


def per_sample_gradient_norms(
    params: MlpParams, ds: Dataset, sample_cap: int
) -> tuple[np.ndarray, np.ndarray]:
    """(e_i, ||grad e_i||_2) for the first min(sample_cap, n) samples."""
    n = min(sample_cap, ds.n)
    errors = np.empty(n, dtype=np.float64)
    norms = np.empty(n, dtype=np.float64)
    for i in range(n):
        batch = dataset_batch(ds, np.array([i]))
        trace = forward(params, batch)
        errors[i] = per_sample_loss(trace, batch.targets)[0]
        norms[i] = backward(params, trace, batch.targets).norm()
    return errors, norms


def lemma1_correlation(params: MlpParams, ds: Dataset, sample_cap: int = 200) -> Lemma1Report:
    """Pearson and Spearman correlation between e_i and ||grad e_i||."""
    if sample_cap < MIN_LEMMA_SAMPLES:
        raise OracleError(f"sample_cap must be >= {MIN_LEMMA_SAMPLES}, got {sample_cap}")
    if ds.n < MIN_LEMMA_SAMPLES:
        raise OracleError(f"Need at least {MIN_LEMMA_SAMPLES} samples, dataset has {ds.n}")

    errors, norms = per_sample_gradient_norms(params, ds, sample_cap)
    n = errors.shape[0]
    if np.ptp(errors) == 0.0 or np.ptp(norms) == 0.0:
        logger.warning("Loss or gradient-norm series has zero variance over %d samples", n)
        return Lemma1Report(pearson=None, spearman=None, n_samples=n, degenerate=True)

    pearson = float(np.clip(stats.pearsonr(errors, norms)[0], -1.0, 1.0))
    spearman = float(np.clip(stats.spearmanr(errors, norms)[0], -1.0, 1.0))
    return Lemma1Report(pearson=pearson, spearman=spearman, n_samples=n)


# ---------------------------------------------------------------------------
# Selection reference
# ---------------------------------------------------------------------------


def brute_select(
    errors: Sequence[float] | np.ndarray,
    k: int,
    indices: Sequence[int] | np.ndarray | None = None,
) -> frozenset[int]:
    """The k smallest errors by (error, index) order.

    Positions are reported, or indices[position] when indices is given.
    """
    values = [float(e) for e in errors]
    if not 0 <= k <= len(values):
        raise OracleError(f"k={k} out of range for {len(values)} errors")
    ids = list(range(len(values))) if indices is None else [int(i) for i in indices]
    ranked = sorted(zip(values, ids))
    return frozenset(i for _, i in ranked[:k])
