"""Datasets, IDX ingestion, synthetic data and contributor partitioning."""
from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DataError, IngestionError

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    """Images (N, H, W, C) in [0, 1] with integer labels stored alongside."""

    images: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        images = np.asarray(self.images, dtype=np.float32)
        labels = np.asarray(self.labels)
        if images.ndim == 3:
            images = images[..., None]
        if images.ndim != 4:
            raise DataError(f"images must be (N, H, W, C), got shape {images.shape}")
        if len(images) < 1:
            raise DataError("dataset must contain at least one sample")
        if labels.shape != (len(images),):
            raise DataError(f"{len(images)} images but labels of shape {labels.shape}")
        if not np.issubdtype(labels.dtype, np.integer):
            raise DataError("labels must be integers")
        labels = labels.astype(np.int64)
        if self.num_classes < 2:
            raise DataError("num_classes must be >= 2")
        if labels.min() < 0 or labels.max() >= self.num_classes:
            raise DataError(f"labels must lie in [0, {self.num_classes})")
        if images.min() < 0 or images.max() > 1 or not np.isfinite(images).all():
            raise DataError("pixel values must lie in [0, 1]")
        images.flags.writeable = False
        labels.flags.writeable = False
        object.__setattr__(self, "images", images)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return len(self.labels)

    @property
    def image_shape(self):
        return self.images.shape[1:]

    def subset(self, indices):
        indices = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(self.images[indices], self.labels[indices], self.num_classes)

    def head(self, n):
        return self.subset(np.arange(min(n, len(self))))

    @staticmethod
    def concatenate(parts):
        parts = list(parts)
        return LabeledDataset(
            np.concatenate([p.images for p in parts]),
            np.concatenate([p.labels for p in parts]),
            parts[0].num_classes,
        )


# --- IDX -------------------------------------------------------------------

def _open(path):
    path = Path(path)
    if not path.exists():
        raise IngestionError(path, "file does not exist")
    return gzip.open(path, "rb") if path.suffix == ".gz" else open(path, "rb")


def _read_idx(path, magic, ndims):
    try:
        with _open(path) as fh:
            raw = fh.read()
    except OSError as exc:
        raise IngestionError(path, f"cannot read: {exc}") from exc
    header = 4 + 4 * ndims
    if len(raw) < header:
        raise IngestionError(path, "truncated header")
    found = struct.unpack(">I", raw[:4])[0]
    if found != magic:
        raise IngestionError(path, f"bad magic number 0x{found:08x}, expected 0x{magic:08x}")
    dims = struct.unpack(f">{ndims}I", raw[4:header])
    size = int(np.prod(dims))
    if len(raw) - header < size:
        raise IngestionError(path, f"truncated data: expected {size} bytes, found {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(dims)


def load_idx(images_path, labels_path, num_classes=10, limit=None):
    """Read an MNIST-style IDX image/label pair (optionally gzipped).

    Pixels are scaled from bytes to [0, 1].  ``limit`` keeps the first
    ``limit`` samples.
    """
    images = _read_idx(images_path, IMAGES_MAGIC, 3)
    labels = _read_idx(labels_path, LABELS_MAGIC, 1)
    if len(images) != len(labels):
        raise IngestionError(
            labels_path, f"count mismatch: {len(labels)} labels for {len(images)} images in {images_path}"
        )
    if limit is not None:
        images, labels = images[:limit], labels[:limit]
    if labels.size and labels.max() >= num_classes:
        raise IngestionError(labels_path, f"label {labels.max()} outside [0, {num_classes})")
    return LabeledDataset(images[..., None].astype(np.float32) / 255.0, labels.astype(np.int64), num_classes)


def write_idx(dataset, images_path, labels_path):
    """Write a single-channel dataset as IDX files; pixels are rounded to bytes."""
    if dataset.images.shape[3] != 1:
        raise ConfigurationError("IDX export supports single-channel images only")
    n, h, w, _ = dataset.images.shape
    pixels = np.rint(dataset.images[..., 0] * 255).astype(np.uint8)
    for path, head, body in (
        (images_path, struct.pack(">IIII", IMAGES_MAGIC, n, h, w), pixels.tobytes()),
        (labels_path, struct.pack(">II", LABELS_MAGIC, n), dataset.labels.astype(np.uint8).tobytes()),
    ):
        path = Path(path)
        opener = gzip.open if path.suffix == ".gz" else open
        with opener(path, "wb") as fh:
            fh.write(head + body)


# --- synthetic ---------------------------------------------------------------

@dataclass(frozen=True)
class SyntheticSpec:
    """Class-blob images: each class is a Gaussian blob at its own position.

    Blob centers sit on a ring around the image center so the corners stay
    empty for trigger patches.  Per-sample amplitude jitter keeps the σ = 0
    case separable (every class is a ray through a distinct template).
    """

    num_classes: int = 4
    samples_per_class: int = 100
    image_side: int = 12
    noise: float = 0.1
    blob_width: float = 0.12
    amplitude_range: tuple = (0.8, 1.0)
    channels: int = 1

    def __post_init__(self):
        if self.image_side < 8:
            raise ConfigurationError("image_side must be >= 8")
        if self.noise < 0:
            raise ConfigurationError("noise must be nonnegative")
        if self.num_classes < 2 or self.samples_per_class < 1 or self.channels < 1:
            raise ConfigurationError("invalid synthetic class counts")
        lo, hi = self.amplitude_range
        if not 0 < lo <= hi <= 1:
            raise ConfigurationError("amplitude_range must satisfy 0 < lo <= hi <= 1")

    def templates(self):
        side = self.image_side
        coords = (np.arange(side) + 0.5) / side
        yy, xx = np.meshgrid(coords, coords, indexing="ij")
        out = np.empty((self.num_classes, side, side, self.channels), dtype=np.float64)
        for c in range(self.num_classes):
            angle = 2 * np.pi * c / self.num_classes
            cy, cx = 0.5 + 0.2 * np.sin(angle), 0.5 + 0.2 * np.cos(angle)
            blob = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * self.blob_width ** 2))
            out[c] = blob[..., None]
        return out


def gen_synthetic(spec, seed):
    rng = np.random.default_rng(seed)
    templates = spec.templates()
    labels = np.repeat(np.arange(spec.num_classes), spec.samples_per_class)
    amp = rng.uniform(*spec.amplitude_range, size=len(labels))
    images = templates[labels] * amp[:, None, None, None]
    if spec.noise > 0:
        images = images + rng.normal(0.0, spec.noise, size=images.shape)
    images = np.clip(images, 0.0, 1.0)
    order = rng.permutation(len(labels))
    return LabeledDataset(images[order].astype(np.float32), labels[order], spec.num_classes)


# --- contributors -------------------------------------------------------------

@dataclass(frozen=True)
class ContributorPartition:
    """Disjoint index sets keyed by contributor id (1..J)."""

    assignments: dict

    @property
    def num_contributors(self):
        return len(self.assignments)

    @property
    def contributor_ids(self):
        return sorted(self.assignments)

    def sizes(self):
        return {j: len(idx) for j, idx in sorted(self.assignments.items())}

    def validate(self, n):
        seen = np.zeros(n, dtype=np.int64)
        for j, idx in self.assignments.items():
            if len(idx) == 0:
                raise ConfigurationError(f"contributor {j} has no data")
            if idx.min() < 0 or idx.max() >= n:
                raise ConfigurationError(f"contributor {j} has indices outside [0, {n})")
            np.add.at(seen, idx, 1)
        if not (seen == 1).all():
            raise ConfigurationError("contributor index sets must be disjoint and cover the dataset")


def _round_half_up(x):
    return int(Decimal(x).quantize(Decimal(1), rounding=ROUND_HALF_UP))


def partition_contributors(n, num_contributors, adversary_ids=(), adv_fraction=0.1, seed=0):
    """Randomly split ``range(n)`` among contributors ``1..num_contributors``.

    Each adversary receives ``round(adv_fraction * n)`` samples (half up); the
    rest is split evenly, earlier good-faith contributors taking the extra
    sample when the division is not exact.
    """
    adversary_ids = sorted(set(adversary_ids))
    if num_contributors < 2:
        raise ConfigurationError("at least two contributors are required")
    if any(j < 1 or j > num_contributors for j in adversary_ids):
        raise ConfigurationError(f"adversary ids must lie in [1, {num_contributors}]")
    if adversary_ids and not adv_fraction > 0:
        raise ConfigurationError("adv_fraction must be positive")
    if len(adversary_ids) * adv_fraction >= 1:
        raise ConfigurationError("adversaries would own the whole dataset")
    clean_ids = [j for j in range(1, num_contributors + 1) if j not in adversary_ids]
    if not clean_ids:
        raise ConfigurationError("at least one good-faith contributor is required")

    adv_size = _round_half_up(Decimal(repr(adv_fraction)) * n) if adversary_ids else 0
    remaining = n - adv_size * len(adversary_ids)
    if adv_size < 1 and adversary_ids:
        raise ConfigurationError(f"adv_fraction {adv_fraction} gives empty adversary sets for n={n}")
    if remaining < len(clean_ids):
        raise ConfigurationError("not enough samples for every good-faith contributor")
    base, extra = divmod(remaining, len(clean_ids))
    sizes = {j: adv_size for j in adversary_ids}
    for k, j in enumerate(clean_ids):
        sizes[j] = base + (1 if k < extra else 0)

    perm = np.random.default_rng(seed).permutation(n)
    assignments, start = {}, 0
    for j in range(1, num_contributors + 1):
        assignments[j] = np.sort(perm[start:start + sizes[j]])
        start += sizes[j]
    return ContributorPartition(assignments)
