"""Datasets, client partitioning, and fine-tuning set extraction.

Features are float64 in [0, 1]; labels are int64 class indices. The
fine-tuning set is always carved out of the source data before client
sharding, so no client ever holds a fine-tuning sample.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegeneratePartitionError,
    IdxCountMismatchError,
    IdxMagicError,
    IdxTruncatedError,
    InputError,
)
from .seeding import stream

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


@dataclass(frozen=True)
class Dataset:
    """Feature matrix (N, D) plus label vector (N,)."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if features.ndim != 2:
            raise InputError(f"features must be 2-D, got shape {features.shape}")
        if labels.ndim != 1 or labels.shape[0] != features.shape[0]:
            raise InputError(
                f"labels shape {labels.shape} does not match {features.shape[0]} samples"
            )
        if features.size and (features.min() < 0.0 or features.max() > 1.0):
            raise InputError("features must lie in [0, 1]")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    def subset(self, indices: np.ndarray) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.features[idx], self.labels[idx])


@dataclass(frozen=True)
class PartitionPlan:
    """Disjoint index lists: one per client, plus the fine-tuning reserve."""

    client_indices: tuple[np.ndarray, ...]
    finetune_indices: np.ndarray


def gen_synthetic(
    seed: int,
    num_classes: int,
    dim: int,
    per_class: int,
    noise: float = 0.08,
    separation: float = 1.0,
) -> Dataset:
    """Generate Gaussian-blob classification data, clamped to [0, 1].

    Class means are drawn uniformly and redrawn (bounded retries) until every
    pair is at least 0.4 apart, which keeps the classes linearly separable at
    the default noise level. ``separation`` rescales the spread of the means
    around 0.5; values below 1 create class overlap for harder desk-scale
    tasks. Deterministic per seed.

    Args:
        seed: base seed for the mean/noise streams.
        num_classes: number of class blobs (>= 2).
        dim: feature dimensionality (>= 4).
        per_class: samples generated for each class.
        noise: per-coordinate Gaussian noise std.
        separation: multiplier on the class-mean spread (default 1.0).

    Returns:
        Dataset with ``num_classes * per_class`` samples, grouped by label.
    """
    if num_classes < 2:
        raise InputError("num_classes must be >= 2")
    if dim < 4:
        raise InputError("dim must be >= 4")
    if per_class < 1:
        raise InputError("per_class must be >= 1")
    if separation <= 0:
        raise InputError("separation must be > 0")

    mean_rng = stream(seed, "means")
    min_separation = 0.4
    best_means = None
    best_gap = -1.0
    for _ in range(100):
        means = mean_rng.uniform(0.2, 0.8, size=(num_classes, dim))
        diffs = means[:, None, :] - means[None, :, :]
        dist = np.sqrt((diffs**2).sum(axis=2))
        gap = dist[~np.eye(num_classes, dtype=bool)].min()
        if gap > best_gap:
            best_gap = gap
            best_means = means
        if gap >= min_separation:
            break
    means = 0.5 + separation * (best_means - 0.5)

    labels = np.repeat(np.arange(num_classes, dtype=np.int64), per_class)
    noise_rng = stream(seed, "noise")
    features = means[labels] + noise_rng.normal(0.0, noise, size=(len(labels), dim))
    return Dataset(np.clip(features, 0.0, 1.0), labels)


def _read_idx_header(buf: bytes, path: str, magic: int, num_dims: int) -> tuple[int, ...]:
    header_len = 4 * (1 + num_dims)
    if len(buf) < header_len:
        raise IdxTruncatedError(f"{path}: file shorter than its {header_len}-byte header")
    fields = struct.unpack(f">{1 + num_dims}I", buf[:header_len])
    if fields[0] != magic:
        raise IdxMagicError(f"{path}: magic 0x{fields[0]:08x}, expected 0x{magic:08x}")
    return fields[1:]


def load_idx(image_path: str, label_path: str) -> Dataset:
    """Load an IDX image/label file pair (the MNIST container format).

    Big-endian headers: images carry magic 0x00000803 and dims
    [count, rows, cols]; labels carry magic 0x00000801 and dims [count].
    Pixels (unsigned bytes) are scaled to [0, 1] and flattened per image.
    """
    with open(image_path, "rb") as f:
        image_buf = f.read()
    with open(label_path, "rb") as f:
        label_buf = f.read()

    count, rows, cols = _read_idx_header(image_buf, image_path, IDX_IMAGE_MAGIC, 3)
    pixel_bytes = count * rows * cols
    if len(image_buf) < 16 + pixel_bytes:
        raise IdxTruncatedError(
            f"{image_path}: header declares {pixel_bytes} pixel bytes, "
            f"found {len(image_buf) - 16}"
        )
    (label_count,) = _read_idx_header(label_buf, label_path, IDX_LABEL_MAGIC, 1)
    if len(label_buf) < 8 + label_count:
        raise IdxTruncatedError(
            f"{label_path}: header declares {label_count} labels, found {len(label_buf) - 8}"
        )
    if label_count != count:
        raise IdxCountMismatchError(
            f"{image_path} has {count} images but {label_path} has {label_count} labels"
        )

    pixels = np.frombuffer(image_buf, dtype=np.uint8, count=pixel_bytes, offset=16)
    features = pixels.astype(np.float64).reshape(count, rows * cols) / 255.0
    labels = np.frombuffer(label_buf, dtype=np.uint8, count=count, offset=8).astype(np.int64)
    return Dataset(features, labels)


def _draw_finetune(n_samples: int, finetune_fraction: float, seed: int):
    perm = stream(seed, "partition").permutation(n_samples)
    ft_size = int(round(finetune_fraction * n_samples))
    return perm[:ft_size], perm[ft_size:]


def partition_iid(
    dataset: Dataset, n: int, finetune_fraction: float, seed: int
) -> PartitionPlan:
    """Reserve the fine-tuning set, then split the rest into n near-equal shards.

    Shard sizes differ by at most one. Deterministic per seed.
    """
    if n < 1:
        raise InputError("n must be >= 1")
    if not 0.0 <= finetune_fraction < 1.0:
        raise InputError("finetune_fraction must be in [0, 1)")
    finetune, rest = _draw_finetune(len(dataset), finetune_fraction, seed)
    if n > len(rest):
        raise InputError(f"cannot split {len(rest)} remaining samples into {n} shards")
    shards = tuple(np.array(s) for s in np.array_split(rest, n))
    return PartitionPlan(shards, finetune)


def partition_dirichlet(
    dataset: Dataset,
    n: int,
    alpha: float,
    finetune_fraction: float,
    seed: int,
    max_retries: int = 100,
) -> PartitionPlan:
    """Non-IID split: per class, client proportions drawn from Dirichlet(alpha).

    The fine-tuning set is reserved first, exactly as in ``partition_iid``.
    Plans leaving any client without a single sample are redrawn up to
    ``max_retries`` times before giving up.
    """
    if n < 1:
        raise InputError("n must be >= 1")
    if alpha <= 0:
        raise InputError("alpha must be > 0")
    if not 0.0 <= finetune_fraction < 1.0:
        raise InputError("finetune_fraction must be in [0, 1)")
    finetune, rest = _draw_finetune(len(dataset), finetune_fraction, seed)

    rest_labels = dataset.labels[rest]
    classes = np.unique(rest_labels)
    for attempt in range(max_retries):
        rng = stream(seed, "dirichlet", attempt)
        per_client: list[list[np.ndarray]] = [[] for _ in range(n)]
        for c in classes:
            cls_idx = rest[rest_labels == c]
            props = rng.dirichlet(np.full(n, alpha))
            counts = rng.multinomial(len(cls_idx), props)
            splits = np.split(cls_idx, np.cumsum(counts)[:-1])
            for client, part in enumerate(splits):
                per_client[client].append(part)
        shards = tuple(
            np.concatenate(parts) if parts else np.array([], dtype=np.int64)
            for parts in per_client
        )
        if all(len(s) > 0 for s in shards):
            return PartitionPlan(shards, finetune)
    raise DegeneratePartitionError(
        f"no valid Dirichlet({alpha}) partition for n={n} after {max_retries} attempts"
    )
