"""Datasets: IDX and CSV loaders, Gaussian blobs, batching and flips."""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801


class DataError(ValueError):
    pass


@dataclass
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    class_count: int
    split: str = "train"

    def __post_init__(self):
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise DataError(f"{self.inputs.shape[0]} inputs but {self.labels.shape[0]} labels")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            bad = int(np.flatnonzero((self.labels < 0) | (self.labels >= self.class_count))[0])
            raise DataError(f"label {self.labels[bad]} at sample {bad} outside [0, {self.class_count})")
        if not np.all(np.isfinite(self.inputs)):
            raise DataError("inputs contain NaN or Inf")

    def __len__(self) -> int:
        return self.labels.shape[0]

    def subset(self, index: np.ndarray, split: str | None = None) -> Dataset:
        return Dataset(self.inputs[index], self.labels[index], self.class_count, split or self.split)


def _read_idx(path: Path, expected_magic: int) -> tuple[tuple[int, ...], bytes]:
    data = Path(path).read_bytes()
    if len(data) < 4:
        raise DataError(f"{path}: file too short for an IDX header")
    (magic,) = struct.unpack(">I", data[:4])
    if magic != expected_magic:
        raise DataError(f"{path}: bad IDX magic 0x{magic:08x} (expected 0x{expected_magic:08x})")
    ndim = magic & 0xFF
    if len(data) < 4 + 4 * ndim:
        raise DataError(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{ndim}I", data[4 : 4 + 4 * ndim])
    body = data[4 + 4 * ndim :]
    if len(body) != int(np.prod(dims)):
        raise DataError(f"{path}: expected {int(np.prod(dims))} data bytes, found {len(body)}")
    return dims, body


def load_idx(images_path, labels_path, class_count: int | None = None, split: str = "train") -> Dataset:
    """Unsigned-byte IDX image/label pair; pixels scaled to [0, 1], shape (N, 1, H, W)."""
    dims, body = _read_idx(Path(images_path), IDX_IMAGES)
    ldims, lbody = _read_idx(Path(labels_path), IDX_LABELS)
    if dims[0] != ldims[0]:
        raise DataError(f"{images_path} has {dims[0]} images but {labels_path} has {ldims[0]} labels")
    images = np.frombuffer(body, dtype=np.uint8).reshape(dims[0], 1, dims[1], dims[2]) / 255.0
    labels = np.frombuffer(lbody, dtype=np.uint8).astype(np.int64)
    if class_count is None:
        class_count = int(labels.max()) + 1 if labels.size else 1
    return Dataset(images, labels, class_count, split)


def load_csv(path, feature_count: int, class_count: int | None = None, split: str = "train") -> Dataset:
    """Rows of ``label,feature_1,...,feature_k``; no header."""
    if feature_count < 1:
        raise DataError("feature_count must be at least 1")
    labels, rows = [], []
    with open(path, newline="") as fh:
        for rownum, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            if len(row) != feature_count + 1:
                raise DataError(f"{path}: row {rownum} has {len(row)} fields, expected {feature_count + 1}")
            try:
                label = float(row[0])
                feats = [float(c) for c in row[1:]]
            except ValueError:
                raise DataError(f"{path}: row {rownum} has a non-numeric cell") from None
            if label != int(label) or label < 0:
                raise DataError(f"{path}: row {rownum} label {row[0]!r} is not a class index")
            if class_count is not None and label >= class_count:
                raise DataError(f"{path}: row {rownum} label {int(label)} outside [0, {class_count})")
            labels.append(int(label))
            rows.append(feats)
    if not rows:
        raise DataError(f"{path}: no data rows")
    labels_arr = np.array(labels, dtype=np.int64)
    if class_count is None:
        class_count = int(labels_arr.max()) + 1
    return Dataset(np.array(rows, dtype=np.float64), labels_arr, class_count, split)


def synth_gaussian_blobs(
    classes: int, dim: int, samples: int, separation: float, seed: int, split: str = "train"
) -> Dataset:
    """Unit-covariance Gaussian clusters, one per class.

    With ``dim >= classes`` the means sit on a scaled simplex, every pair
    ``separation`` apart; otherwise they sit on the first axis, consecutive
    means ``separation`` apart. Labels cycle through the classes.
    """
    if classes < 2:
        raise DataError("need at least two classes")
    if separation < 0:
        raise DataError("separation must be non-negative")
    rng = np.random.default_rng(seed)
    means = np.zeros((classes, dim))
    if dim >= classes:
        means[np.arange(classes), np.arange(classes)] = separation / np.sqrt(2.0)
    else:
        means[:, 0] = separation * np.arange(classes)
    labels = np.arange(samples) % classes
    labels = labels[rng.permutation(samples)]
    inputs = means[labels] + rng.standard_normal((samples, dim))
    return Dataset(inputs, labels.astype(np.int64), classes, split)


def train_val_split(ds: Dataset, val_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    if not 0.0 < val_fraction < 1.0:
        raise DataError("val_fraction must lie in (0, 1)")
    perm = np.random.default_rng(seed).permutation(len(ds))
    n_val = max(1, int(round(val_fraction * len(ds))))
    return ds.subset(np.sort(perm[n_val:]), "train"), ds.subset(np.sort(perm[:n_val]), "validation")


def augment_hflip(batch: np.ndarray, p: float, seed) -> np.ndarray:
    """Mirror each image (N, C, H, W) along its width with probability ``p``."""
    if batch.ndim != 4:
        raise DataError("horizontal flip needs image-shaped (N, C, H, W) input")
    flip = np.random.default_rng(seed).random(batch.shape[0]) < p
    out = batch.copy()
    out[flip] = out[flip][..., ::-1]
    return out


def batches(ds: Dataset, batch_size: int, seed: int, epoch: int) -> list[np.ndarray]:
    """Index arrays partitioning the dataset, shuffled per (seed, epoch)."""
    if batch_size < 1:
        raise DataError("batch_size must be at least 1")
    order = np.random.default_rng([seed, epoch]).permutation(len(ds))
    return [order[k : k + batch_size] for k in range(0, len(ds), batch_size)]


def standardize_channels(train: Dataset, *others: Dataset) -> list[Dataset]:
    """Per-channel (or per-feature) zero mean, unit variance using train statistics."""
    axes = (0,) + tuple(range(2, train.inputs.ndim))
    mean = train.inputs.mean(axis=axes, keepdims=True)
    std = train.inputs.std(axis=axes, keepdims=True)
    std[std == 0] = 1.0
    return [Dataset((d.inputs - mean) / std, d.labels, d.class_count, d.split) for d in (train, *others)]
