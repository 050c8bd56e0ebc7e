"""Dataset ingestion and mini-batch iteration.

Loaders for MNIST-style IDX files, numeric CSV and a seeded Gaussian-blob
generator, plus writers for the IDX and CSV formats. Features are stored
one column per sample (p x n); targets one row per sample (n x c).
"""

from __future__ import annotations

import csv
import logging
import struct
from collections.abc import Iterable, Iterator
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from shrinknet import linalg
from shrinknet.linalg import Matrix
from shrinknet.report import atomic_write, render_csv

if TYPE_CHECKING:
    from shrinknet.shrinkage import ActiveSet

logger = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class DatasetError(ValueError):
    """A dataset could not be loaded, built or iterated."""


class BadMagicError(DatasetError):
    pass


class TruncatedFileError(DatasetError):
    pass


class CountMismatchError(DatasetError):
    pass


class RaggedRowError(DatasetError):
    pass


class NonNumericCellError(DatasetError):
    pass


class EmptyActiveSetError(DatasetError):
    pass


class TargetKind(Enum):
    ONE_HOT = "classification-one-hot"
    REAL_VALUED = "real-valued-targets"


# ---------------------------------------------------------------------------
# Data model
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Dataset:
    """Feature matrix (p x n) plus per-sample target rows (n x c)."""

    features: Matrix
    targets: Matrix
    kind: TargetKind

    def __post_init__(self) -> None:
        p, n = self.features.shape
        if n < 1 or p < 1 or self.targets.ndim != 2 or self.targets.shape[1] < 1:
            raise DatasetError(
                f"Dataset needs n, p, c >= 1 (features {self.features.shape}, "
                f"targets {self.targets.shape})"
            )
        if self.targets.shape[0] != n:
            raise CountMismatchError(
                f"{n} feature columns but {self.targets.shape[0]} target rows"
            )
        if not np.all(np.isfinite(self.features)):
            raise DatasetError("Features must be finite")
        if self.kind is TargetKind.ONE_HOT and not _is_one_hot(self.targets):
            raise DatasetError("Classification targets must be one-hot rows")
        if self.kind is TargetKind.REAL_VALUED and (
            self.targets.min() < 0.0 or self.targets.max() > 1.0
        ):
            raise DatasetError("Real-valued targets must lie in [0, 1]")

    @property
    def n(self) -> int:
        return self.features.shape[1]

    @property
    def p(self) -> int:
        return self.features.shape[0]

    @property
    def c(self) -> int:
        return self.targets.shape[1]

    @property
    def is_classification(self) -> bool:
        return self.kind is TargetKind.ONE_HOT

    def labels(self) -> np.ndarray:
        """Class index per sample (argmax of each target row)."""
        return np.argmax(self.targets, axis=1)


@dataclass(frozen=True)
class Batch:
    """A slice of a dataset addressed by global sample indices."""

    sample_indices: np.ndarray
    features: Matrix
    targets: Matrix

    def __len__(self) -> int:
        return int(self.sample_indices.shape[0])


def _is_one_hot(targets: np.ndarray) -> bool:
    ones = targets == 1.0
    zeros = targets == 0.0
    return bool(np.all(ones | zeros) and np.all(ones.sum(axis=1) == 1))


def one_hot(labels: np.ndarray, n_classes: int) -> Matrix:
    out = np.zeros((labels.shape[0], n_classes), dtype=np.float64)
    out[np.arange(labels.shape[0]), labels] = 1.0
    return linalg.matrix(out)


def take(ds: Dataset, limit: int | None) -> Dataset:
    """First `limit` samples of a dataset (all of them when limit is None)."""
    if limit is None or limit >= ds.n:
        return ds
    if limit < 1:
        raise DatasetError(f"Sample limit must be >= 1, got {limit}")
    idx = np.arange(limit)
    return Dataset(
        features=linalg.col_slice(ds.features, idx),
        targets=linalg.row_slice(ds.targets, idx),
        kind=ds.kind,
    )


# ---------------------------------------------------------------------------
# IDX
# ---------------------------------------------------------------------------


def _read_header(blob: bytes, fields: int, path: Path) -> tuple[int, ...]:
    size = 4 * fields
    if len(blob) < size:
        raise TruncatedFileError(
            f"{path}: header needs {size} bytes, file has {len(blob)}"
        )
    return struct.unpack(f">{fields}I", blob[:size])


def _label_count(blob: bytes, path: Path) -> int:
    magic, count = _read_header(blob, 2, path)
    if magic != IDX_LABELS_MAGIC:
        raise BadMagicError(
            f"{path}: labels magic 0x{magic:08x}, expected 0x{IDX_LABELS_MAGIC:08x}"
        )
    return count


def _label_bytes(blob: bytes, count: int, path: Path) -> np.ndarray:
    labels = np.frombuffer(blob, dtype=np.uint8, offset=8)
    if labels.size < count:
        raise TruncatedFileError(
            f"{path}: expected {count} label bytes, found {labels.size}"
        )
    return labels[:count].astype(np.int64)


def idx_label_values(labels_path: str | Path) -> list[int]:
    """Sorted distinct label values of an IDX labels file."""
    labels_path = Path(labels_path)
    blob = labels_path.read_bytes()
    count = _label_count(blob, labels_path)
    return np.unique(_label_bytes(blob, count, labels_path)).tolist()


def load_idx(
    images_path: str | Path,
    labels_path: str | Path,
    classes: Iterable[int] | None = None,
) -> Dataset:
    """Load an IDX image/label pair.

    Pixels are scaled to [0, 1] by dividing by 255. Labels are one-hot
    encoded over the sorted distinct label values, so labels {1, 2} give
    two columns. Pass `classes` (e.g. the training file's values) to encode
    a test file over the same alphabet even when it lacks some of them.
    """
    images_path, labels_path = Path(images_path), Path(labels_path)
    img_blob = images_path.read_bytes()
    lbl_blob = labels_path.read_bytes()

    magic, count, rows, cols = _read_header(img_blob, 4, images_path)
    if magic != IDX_IMAGES_MAGIC:
        raise BadMagicError(
            f"{images_path}: images magic 0x{magic:08x}, "
            f"expected 0x{IDX_IMAGES_MAGIC:08x}"
        )
    lcount = _label_count(lbl_blob, labels_path)
    if count != lcount:
        raise CountMismatchError(
            f"{count} images in {images_path} but {lcount} labels in {labels_path}"
        )

    p = rows * cols
    pixels = np.frombuffer(img_blob, dtype=np.uint8, offset=16)
    if pixels.size < count * p:
        raise TruncatedFileError(
            f"{images_path}: expected {count * p} pixel bytes, found {pixels.size}"
        )
    labels = _label_bytes(lbl_blob, count, labels_path)
    if count == 0:
        raise DatasetError(f"{labels_path}: no samples")

    images = pixels[: count * p].reshape(count, p).astype(np.float64) / 255.0
    if classes is None:
        values = np.unique(labels)
    else:
        values = np.unique(np.fromiter(classes, dtype=np.int64))
    unknown = np.setdiff1d(labels, values)
    if unknown.size:
        raise DatasetError(
            f"{labels_path}: label {int(unknown[0])} is not one of {values.tolist()}"
        )
    logger.info(
        "Loaded %d images (%dx%d) with %d classes from %s",
        count,
        rows,
        cols,
        values.size,
        images_path,
    )
    return Dataset(
        features=linalg.matrix(images.T),
        targets=one_hot(np.searchsorted(values, labels), values.size),
        kind=TargetKind.ONE_HOT,
    )


def rescale_unit(ds: Dataset) -> Dataset:
    """Min-max rescale all features into [0, 1] with one shared affine map.

    Constant features map to 0. Class geometry is kept up to scale.
    """
    lo, hi = float(ds.features.min()), float(ds.features.max())
    span = hi - lo
    scaled = (ds.features - lo) / span if span > 0 else np.zeros_like(ds.features)
    logger.info("Rescaled features from [%.4g, %.4g] to [0, 1]", lo, hi)
    return Dataset(features=linalg.matrix(scaled), targets=ds.targets, kind=ds.kind)


def write_idx(
    ds: Dataset,
    images_path: str | Path,
    labels_path: str | Path,
    shape: tuple[int, int] | None = None,
) -> None:
    """Write a classification dataset as an IDX image/label pair.

    Features must lie in [0, 1] (see rescale_unit); they are quantised to
    bytes as round(x * 255). `shape` gives (rows, cols) of each image;
    defaults to (1, p).
    """
    if not ds.is_classification:
        raise DatasetError("IDX output needs a classification dataset")
    rows, cols = shape if shape is not None else (1, ds.p)
    if rows * cols != ds.p:
        raise DatasetError(f"Image shape {rows}x{cols} does not match p={ds.p}")
    if ds.c > 256:
        raise DatasetError(f"IDX labels are bytes; {ds.c} classes do not fit")
    lo, hi = float(ds.features.min()), float(ds.features.max())
    if lo < 0.0 or hi > 1.0:
        raise DatasetError(
            f"IDX pixels need features in [0, 1], got [{lo:.4g}, {hi:.4g}]; "
            "rescale first"
        )

    pixels = np.rint(ds.features.T * 255.0).astype(np.uint8)
    header = struct.pack(">4I", IDX_IMAGES_MAGIC, ds.n, rows, cols)
    atomic_write(Path(images_path), header + pixels.tobytes())

    labels = ds.labels().astype(np.uint8)
    header = struct.pack(">2I", IDX_LABELS_MAGIC, ds.n)
    atomic_write(Path(labels_path), header + labels.tobytes())


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def load_csv(path: str | Path, target_cols: int, header: bool = False) -> Dataset:
    """Load a numeric CSV whose last `target_cols` columns are targets.

    The target kind is one-hot when every target row is a valid one-hot
    row, otherwise real-valued.
    """
    path = Path(path)
    if target_cols < 1:
        raise DatasetError(f"target_cols must be >= 1, got {target_cols}")

    rows: list[list[float]] = []
    width: int | None = None
    with open(path, newline="") as f:
        reader = csv.reader(f)
        for line_no, record in enumerate(reader, start=1):
            if header and line_no == 1:
                continue
            if not record or all(not cell.strip() for cell in record):
                continue
            if width is None:
                width = len(record)
            elif len(record) != width:
                raise RaggedRowError(
                    f"{path}: row {line_no} has {len(record)} columns, expected {width}"
                )
            values = []
            for col_no, cell in enumerate(record, start=1):
                try:
                    values.append(float(cell))
                except ValueError:
                    raise NonNumericCellError(
                        f"{path}: row {line_no}, column {col_no}: "
                        f"{cell!r} is not a number"
                    ) from None
            rows.append(values)

    if not rows or width is None:
        raise DatasetError(f"{path}: no data rows")
    if width <= target_cols:
        raise DatasetError(
            f"{path}: {width} columns leave no features for {target_cols} targets"
        )

    table = np.array(rows, dtype=np.float64)
    targets = table[:, width - target_cols :]
    kind = TargetKind.ONE_HOT if _is_one_hot(targets) else TargetKind.REAL_VALUED
    logger.info(
        "Loaded %d rows from %s (%d features, %d targets, %s)",
        table.shape[0],
        path,
        width - target_cols,
        target_cols,
        kind.value,
    )
    return Dataset(
        features=linalg.matrix(table[:, : width - target_cols].T),
        targets=linalg.matrix(targets),
        kind=kind,
    )


def write_csv(ds: Dataset, path: str | Path, header: bool = False) -> None:
    """Write features then targets, one sample per row."""
    names = None
    if header:
        names = [f"x{j}" for j in range(ds.p)] + [f"y{k}" for k in range(ds.c)]
    table = np.hstack([ds.features.T, ds.targets]).tolist()
    atomic_write(Path(path), render_csv(names, table).encode("utf-8"))


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------


def synth_blobs(n: int, p: int, c: int, spread: float, seed: int) -> Dataset:
    """Gaussian clusters, one per class, with balanced class counts.

    Class means are exactly one unit apart pairwise. With c <= p, class k
    sits at e_k / sqrt(2), so every mean has the same norm; otherwise the
    means lie on the diagonal at k / sqrt(p) per coordinate. Per-coordinate
    std is `spread`. Samples are class-interleaved (sample i belongs to
    class i mod c), so lower class indices get the extra samples.
    """
    if c < 2 or n < c:
        raise DatasetError(f"synth_blobs needs n >= c >= 2 (n={n}, c={c})")
    if p < 1:
        raise DatasetError(f"synth_blobs needs p >= 1, got {p}")
    if spread < 0:
        raise DatasetError(f"spread must be >= 0, got {spread}")

    rng = np.random.default_rng(seed)
    labels = np.arange(n) % c
    if c <= p:
        means = np.eye(c, p, dtype=np.float64) / np.sqrt(2.0)
    else:
        means = np.repeat(np.arange(c, dtype=np.float64)[:, np.newaxis], p, axis=1) / np.sqrt(p)
    noise = rng.standard_normal((n, p)) * spread
    features = means[labels] + noise
    return Dataset(
        features=linalg.matrix(features.T),
        targets=one_hot(labels, c),
        kind=TargetKind.ONE_HOT,
    )


def parse_synth_spec(spec: str) -> tuple[int, int, int, float]:
    """Parse 'n,p,c,spread' into typed fields."""
    parts = [s.strip() for s in spec.split(",")]
    if len(parts) != 4:
        raise DatasetError(f"Synthetic spec must be n,p,c,spread; got {spec!r}")
    try:
        return int(parts[0]), int(parts[1]), int(parts[2]), float(parts[3])
    except ValueError:
        raise DatasetError(f"Synthetic spec must be n,p,c,spread; got {spec!r}") from None


# ---------------------------------------------------------------------------
# Batching
# ---------------------------------------------------------------------------


def batches(
    ds: Dataset,
    active: ActiveSet,
    batch_size: int,
    shuffle: int | np.random.Generator | None = None,
) -> Iterator[Batch]:
    """Partition the active indices into consecutive batches.

    `shuffle` is a seed or a generator; when given, the active order is
    permuted first. A generator is advanced by exactly one permutation.
    """
    if batch_size < 1:
        raise DatasetError(f"batch_size must be >= 1, got {batch_size}")
    order = np.asarray(active.indices, dtype=np.int64)
    if order.size == 0:
        raise EmptyActiveSetError("Cannot batch an empty active set")
    if shuffle is not None:
        rng = (
            shuffle
            if isinstance(shuffle, np.random.Generator)
            else np.random.default_rng(shuffle)
        )
        order = order[rng.permutation(order.size)]
    return _iter_batches(ds, order, batch_size)


def _iter_batches(ds: Dataset, order: np.ndarray, batch_size: int) -> Iterator[Batch]:
    for start in range(0, order.size, batch_size):
        idx = order[start : start + batch_size]
        yield Batch(
            sample_indices=idx,
            features=linalg.col_slice(ds.features, idx),
            targets=linalg.row_slice(ds.targets, idx),
        )


def dataset_batch(ds: Dataset, indices: np.ndarray | None = None) -> Batch:
    """The whole dataset (or the given samples) as a single batch."""
    idx = np.arange(ds.n) if indices is None else np.asarray(indices, dtype=np.int64)
    return Batch(
        sample_indices=idx,
        features=linalg.col_slice(ds.features, idx),
        targets=linalg.row_slice(ds.targets, idx),
    )


