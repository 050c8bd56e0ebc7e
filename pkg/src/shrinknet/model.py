"""Multilayer perceptron: forward pass, per-sample losses, backprop, SGD.

Activations are stored one column per sample, matching the dataset's
p x n feature layout. Network outputs are returned as b x c, one row per
sample, matching the target layout.
"""

from __future__ import annotations

import logging
from collections.abc import Sequence
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import expit

from shrinknet import linalg
from shrinknet.data import Batch, Dataset, dataset_batch
from shrinknet.linalg import Matrix, Vector

logger = logging.getLogger(__name__)

LOG_CLAMP = 1e-12
EVAL_CHUNK = 10_000


class ModelError(ValueError):
    """Invalid network configuration or incompatible model inputs."""


class Activation(Enum):
    TANH = "tanh"
    SIGMOID = "sigmoid"
    IDENTITY = "identity"


class OutputUnit(Enum):
    SIGMOID = "sigmoid"
    SOFTMAX = "softmax"
    IDENTITY = "identity"


class Loss(Enum):
    SUM_SQUARED = "sse"
    SOFTMAX_CROSS_ENTROPY = "softmax"


# ---------------------------------------------------------------------------
# Data model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Layer:
    """Affine map (out x in weights, out bias) followed by an activation."""

    weights: Matrix
    bias: Vector
    activation: Activation

    @property
    def fan_in(self) -> int:
        return self.weights.shape[1]

    @property
    def fan_out(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True)
class MlpParams:
    """Network parameters w plus the output unit and loss they train with.

    The last layer's activation is always identity; the output unit is
    applied on top of it.
    """

    layers: tuple[Layer, ...]
    output_unit: OutputUnit
    loss: Loss

    def __post_init__(self) -> None:
        if not self.layers:
            raise ModelError("A network needs at least one layer")
        _check_loss_output(self.loss, self.output_unit)
        for k, layer in enumerate(self.layers):
            if layer.bias.shape != (layer.fan_out,):
                raise ModelError(
                    f"Layer {k}: bias shape {layer.bias.shape} does not match "
                    f"{layer.fan_out} outputs"
                )
            if k > 0 and self.layers[k - 1].fan_out != layer.fan_in:
                raise ModelError(
                    f"Layer {k - 1} outputs {self.layers[k - 1].fan_out} units "
                    f"but layer {k} expects {layer.fan_in}"
                )
            if not (np.isfinite(layer.weights).all() and np.isfinite(layer.bias).all()):
                raise ModelError(f"Layer {k} has non-finite parameters")
        if self.layers[-1].activation is not Activation.IDENTITY:
            raise ModelError("The last layer's activation must be identity")

    @property
    def arch(self) -> tuple[int, ...]:
        return (self.layers[0].fan_in, *(layer.fan_out for layer in self.layers))

    @property
    def n_params(self) -> int:
        return sum(layer.weights.size + layer.bias.size for layer in self.layers)


@dataclass(frozen=True)
class ForwardTrace:
    """Everything backward() needs from a forward pass.

    activations[0] is the input batch; activations[k + 1] is the output of
    layer k (before the output unit for the last layer).
    """

    pre_activations: tuple[Matrix, ...]
    activations: tuple[Matrix, ...]
    outputs: Matrix
    output_unit: OutputUnit
    loss: Loss
    arch: tuple[int, ...]


@dataclass(frozen=True)
class Gradients:
    """Per-layer weight and bias gradients, shaped like MlpParams."""

    weights: tuple[Matrix, ...]
    biases: tuple[Vector, ...]

    def norm(self) -> float:
        """Euclidean norm over every parameter gradient."""
        total = sum(float(np.sum(g * g)) for g in self.weights)
        total += sum(float(np.sum(g * g)) for g in self.biases)
        return float(np.sqrt(total))


# ---------------------------------------------------------------------------
# Construction
# ---------------------------------------------------------------------------


def parse_arch(text: str) -> list[int]:
    """Parse an architecture string such as '784-1000-10'."""
    try:
        arch = [int(part) for part in text.strip().split("-")]
    except ValueError:
        raise ModelError(f"Architecture must look like 784-1000-10, got {text!r}") from None
    _check_arch(arch)
    return arch


def _check_arch(arch: Sequence[int]) -> None:
    if len(arch) < 2:
        raise ModelError(f"Architecture needs at least 2 layer sizes, got {list(arch)}")
    if any(d < 1 for d in arch):
        raise ModelError(f"Layer sizes must be >= 1, got {list(arch)}")


def _check_loss_output(loss: Loss, output_unit: OutputUnit) -> None:
    if (loss is Loss.SOFTMAX_CROSS_ENTROPY) != (output_unit is OutputUnit.SOFTMAX):
        raise ModelError(
            f"Loss {loss.value} cannot be paired with a {output_unit.value} output; "
            "softmax cross-entropy needs a softmax output and vice versa"
        )


def init_params(
    arch: Sequence[int],
    activation: Activation,
    output_unit: OutputUnit,
    loss: Loss,
    seed: int | np.random.Generator,
) -> MlpParams:
    """Glorot-uniform weights, zero biases.

    `seed` may be a generator, which is advanced layer by layer; this lets a
    training run draw initialisation and shuffles from one stream.
    """
    _check_arch(arch)
    _check_loss_output(loss, output_unit)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

    layers = []
    for k, (fan_in, fan_out) in enumerate(zip(arch[:-1], arch[1:])):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        last = k == len(arch) - 2
        layers.append(
            Layer(
                weights=linalg.matrix(rng.uniform(-limit, limit, size=(fan_out, fan_in))),
                bias=linalg.vector(np.zeros(fan_out)),
                activation=Activation.IDENTITY if last else activation,
            )
        )
    return MlpParams(layers=tuple(layers), output_unit=output_unit, loss=loss)


# ---------------------------------------------------------------------------
# Activations
# ---------------------------------------------------------------------------


def _activate(z: Matrix, kind: Activation) -> Matrix:
    if kind is Activation.TANH:
        return linalg.elementwise(z, np.tanh)
    if kind is Activation.SIGMOID:
        return linalg.elementwise(z, expit)
    return z


def _activation_slope(a: Matrix, kind: Activation) -> Matrix:
    """Derivative of the activation, expressed through its output a."""
    if kind is Activation.TANH:
        return linalg.elementwise(a, lambda v: 1.0 - v * v)
    if kind is Activation.SIGMOID:
        return linalg.elementwise(a, lambda v: v * (1.0 - v))
    return linalg.elementwise(a, np.ones_like)


def softmax_rows(z: Matrix) -> Matrix:
    """Row-wise softmax with per-row max subtraction."""
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return linalg.matrix(e / e.sum(axis=1, keepdims=True))


def _apply_output_unit(z_rows: Matrix, unit: OutputUnit) -> Matrix:
    if unit is OutputUnit.SOFTMAX:
        return softmax_rows(z_rows)
    if unit is OutputUnit.SIGMOID:
        return linalg.elementwise(z_rows, expit)
    return z_rows


# ---------------------------------------------------------------------------
# Forward / loss / backward
# ---------------------------------------------------------------------------


def forward(params: MlpParams, batch: Batch) -> ForwardTrace:
    """Affine + activation per layer, then the output unit."""
    x = batch.features
    if x.shape[0] != params.arch[0]:
        raise ModelError(
            f"Batch has {x.shape[0]} features but the network expects {params.arch[0]}"
        )
    pre: list[Matrix] = []
    acts: list[Matrix] = [x]
    a = x
    for layer in params.layers:
        z = linalg.add_bias(linalg.matmul(layer.weights, a), layer.bias)
        a = _activate(z, layer.activation)
        pre.append(z)
        acts.append(a)
    outputs = _apply_output_unit(linalg.transpose(a), params.output_unit)
    return ForwardTrace(
        pre_activations=tuple(pre),
        activations=tuple(acts),
        outputs=outputs,
        output_unit=params.output_unit,
        loss=params.loss,
        arch=params.arch,
    )


def _check_targets(trace: ForwardTrace, targets: Matrix) -> None:
    if targets.shape != trace.outputs.shape:
        raise ModelError(
            f"Targets shape {targets.shape} does not match outputs {trace.outputs.shape}"
        )


def per_sample_loss(trace: ForwardTrace, targets: Matrix) -> Vector:
    """Loss e_i of every sample in the trace.

    Sum-squared: e_i = 1/2 * sum_k (y_ik - y0_ik)^2.
    Softmax cross-entropy: e_i = -sum_k y0_ik * log(max(p_ik, 1e-12)).
    """
    _check_targets(trace, targets)
    if trace.loss is Loss.SOFTMAX_CROSS_ENTROPY:
        logp = np.log(np.maximum(trace.outputs, LOG_CLAMP))
        return linalg.vector(-np.sum(targets * logp, axis=1))
    residual = trace.outputs - targets
    return linalg.vector(0.5 * np.sum(residual * residual, axis=1))


def output_delta(trace: ForwardTrace, targets: Matrix) -> Matrix:
    """Error signal at the output layer's pre-activation, b x c.

    (y - y0) * g'(z) for sum-squared, p - y0 for softmax cross-entropy.
    """
    _check_targets(trace, targets)
    residual = linalg.matrix(trace.outputs - targets)
    if trace.loss is Loss.SOFTMAX_CROSS_ENTROPY:
        return residual
    if trace.output_unit is OutputUnit.SIGMOID:
        y = trace.outputs
        return linalg.hadamard(residual, linalg.elementwise(y, lambda v: v * (1.0 - v)))
    return residual


def backward(params: MlpParams, trace: ForwardTrace, targets: Matrix) -> Gradients:
    """Gradients of the mean batch loss with respect to every parameter."""
    if trace.arch != params.arch:
        raise ModelError(
            f"Trace was produced by a {trace.arch} network, params are {params.arch}"
        )
    if trace.loss is not params.loss or trace.output_unit is not params.output_unit:
        raise ModelError("Trace loss/output unit differ from the parameters'")
    b = trace.outputs.shape[0]
    delta = linalg.transpose(output_delta(trace, targets))  # c x b

    grad_w: list[Matrix] = [linalg.zeros(0, 0)] * len(params.layers)
    grad_b: list[Vector] = [linalg.vector([])] * len(params.layers)
    for k in range(len(params.layers) - 1, -1, -1):
        a_prev = trace.activations[k]
        grad_w[k] = linalg.scale(linalg.matmul(delta, linalg.transpose(a_prev)), 1.0 / b)
        grad_b[k] = linalg.vector(delta.mean(axis=1))
        if k > 0:
            below = params.layers[k - 1]
            back = linalg.matmul(linalg.transpose(params.layers[k].weights), delta)
            delta = linalg.hadamard(back, _activation_slope(a_prev, below.activation))
    return Gradients(weights=tuple(grad_w), biases=tuple(grad_b))


def sgd_step(params: MlpParams, grads: Gradients, eta: float) -> MlpParams:
    """w <- w - eta * grad for every weight and bias."""
    if not eta > 0:
        raise ModelError(f"Learning rate must be > 0, got {eta}")
    if len(grads.weights) != len(params.layers) or len(grads.biases) != len(params.layers):
        raise ModelError(
            f"{len(grads.weights)} gradient layers for {len(params.layers)} parameter layers"
        )
    layers = []
    for k, (layer, gw, gb) in enumerate(zip(params.layers, grads.weights, grads.biases)):
        if gw.shape != layer.weights.shape or gb.shape != layer.bias.shape:
            raise ModelError(
                f"Layer {k}: gradient shapes {gw.shape}/{gb.shape} do not match "
                f"{layer.weights.shape}/{layer.bias.shape}"
            )
        w = layer.weights - eta * gw
        bias = layer.bias - eta * gb
        if not (np.isfinite(w).all() and np.isfinite(bias).all()):
            raise ModelError(
                f"Layer {k} diverged to non-finite values (learning rate {eta})"
            )
        layers.append(
            Layer(
                weights=linalg.matrix(w),
                bias=linalg.vector(bias),
                activation=layer.activation,
            )
        )
    return MlpParams(layers=tuple(layers), output_unit=params.output_unit, loss=params.loss)


# ---------------------------------------------------------------------------
# Whole-dataset evaluation
# ---------------------------------------------------------------------------


def _chunks(ds: Dataset):
    for start in range(0, ds.n, EVAL_CHUNK):
        yield dataset_batch(ds, np.arange(start, min(start + EVAL_CHUNK, ds.n)))


def predict(params: MlpParams, ds: Dataset) -> Matrix:
    """Network outputs for every sample, n x c."""
    _check_dataset(params, ds)
    return linalg.matrix(np.vstack([forward(params, b).outputs for b in _chunks(ds)]))


def dataset_losses(params: MlpParams, ds: Dataset) -> Vector:
    """Per-sample loss e_i over the whole dataset."""
    _check_dataset(params, ds)
    parts = []
    for batch in _chunks(ds):
        parts.append(per_sample_loss(forward(params, batch), batch.targets))
    return linalg.vector(np.concatenate(parts))


def classify_error(params: MlpParams, ds: Dataset) -> float:
    """Fraction of samples whose argmax output differs from the argmax target."""
    if not ds.is_classification:
        raise ModelError("classify_error needs one-hot targets; use mse_error")
    outputs = predict(params, ds)
    wrong = np.argmax(outputs, axis=1) != ds.labels()
    return float(np.mean(wrong))


def mse_error(params: MlpParams, ds: Dataset) -> float:
    """sum_i ||y_i - y0_i||^2 / n."""
    residual = predict(params, ds) - ds.targets
    return float(np.sum(residual * residual) / ds.n)


def _check_dataset(params: MlpParams, ds: Dataset) -> None:
    if ds.p != params.arch[0] or ds.c != params.arch[-1]:
        raise ModelError(
            f"Dataset is {ds.p} -> {ds.c} but the network is {'-'.join(map(str, params.arch))}"
        )
