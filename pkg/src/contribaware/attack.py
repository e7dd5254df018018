"""BadNets-style patch triggers and the poisoning adversary."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from decimal import Decimal

import numpy as np

from .data import LabeledDataset
from .errors import ConfigurationError

CORNERS = ("bottom-right", "bottom-left", "top-right", "top-left")
PATTERNS = ("square", "checkerboard", "frame", "cross", "plus")

# default (pattern, corner) for the first, second, third ... adversary
DEFAULT_TRIGGERS = (
    ("square", "bottom-right"),
    ("checkerboard", "bottom-left"),
    ("frame", "top-right"),
    ("plus", "top-left"),
)


@dataclass(frozen=True)
class Placement:
    """Where a patch goes.

    kind is one of ``corner`` (uses ``corner`` and ``margin``), ``offset``
    (uses ``row``/``col``) or ``random-region`` (uses ``region``, given as
    fractional (top, left, bottom, right) bounds; a fresh location is drawn
    for every image).
    """

    kind: str = "corner"
    corner: str = "bottom-right"
    margin: int = 1
    row: int = 0
    col: int = 0
    region: tuple = (0.25, 0.25, 0.75, 0.75)

    def __post_init__(self):
        if self.kind not in ("corner", "offset", "random-region"):
            raise ConfigurationError(f"unknown placement kind {self.kind!r}")
        if self.kind == "corner" and self.corner not in CORNERS:
            raise ConfigurationError(f"unknown corner {self.corner!r}")
        if self.margin < 0:
            raise ConfigurationError("margin must be nonnegative")
        top, left, bottom, right = self.region
        if not (0 <= top < bottom <= 1 and 0 <= left < right <= 1):
            raise ConfigurationError(f"invalid region {self.region}")

    @property
    def is_fixed(self):
        return self.kind != "random-region"


@dataclass(frozen=True, eq=False)
class TriggerSpec:
    patch: np.ndarray
    placement: Placement = field(default_factory=Placement)
    trigger_id: str = "trigger"

    def __post_init__(self):
        patch = np.asarray(self.patch, dtype=np.float32)
        if patch.ndim == 2:
            patch = patch[..., None]
        if patch.ndim != 3 or min(patch.shape) < 1:
            raise ConfigurationError(f"patch must be (h, w, C), got shape {patch.shape}")
        if patch.min() < 0 or patch.max() > 1:
            raise ConfigurationError("patch values must lie in [0, 1]")
        patch.flags.writeable = False
        object.__setattr__(self, "patch", patch)

    @property
    def size(self):
        return self.patch.shape[:2]


def make_patch(pattern="square", size=3, intensity=1.0, channels=1):
    if pattern not in PATTERNS:
        raise ConfigurationError(f"unknown trigger pattern {pattern!r}; choose from {PATTERNS}")
    if size < 1:
        raise ConfigurationError("trigger size must be >= 1")
    if not 0 < intensity <= 1:
        raise ConfigurationError("intensity must be in (0, 1]")
    i, j = np.indices((size, size))
    if pattern == "square":
        mask = np.ones((size, size), dtype=bool)
    elif pattern == "checkerboard":
        mask = (i + j) % 2 == 0
    elif pattern == "frame":
        mask = (i == 0) | (j == 0) | (i == size - 1) | (j == size - 1)
    elif pattern == "cross":
        mask = (i == j) | (i + j == size - 1)
    else:
        mid = size // 2
        mask = (i == mid) | (j == mid)
    patch = mask.astype(np.float32) * intensity
    return np.repeat(patch[..., None], channels, axis=2)


def load_patch(path, channels=1):
    """Read a small image file as a patch in [0, 1]."""
    from PIL import Image

    img = Image.open(path).convert("L" if channels == 1 else "RGB")
    arr = np.asarray(img, dtype=np.float32) / 255.0
    return arr[..., None] if arr.ndim == 2 else arr


def default_trigger(index, size=3, intensity=1.0, channels=1):
    """Trigger for the ``index``-th adversary (0-based) with a distinct pattern and corner."""
    pattern, corner = DEFAULT_TRIGGERS[index % len(DEFAULT_TRIGGERS)]
    return TriggerSpec(
        make_patch(pattern, size, intensity, channels),
        Placement(kind="corner", corner=corner),
        trigger_id=f"{pattern}-{corner}",
    )


def resolve_positions(n, image_shape, trigger, seed=None):
    """Top-left (rows, cols) of the patch for ``n`` images."""
    height, width = image_shape[:2]
    ph, pw = trigger.size
    if ph >= height or pw >= width:
        raise ConfigurationError(f"patch {ph}x{pw} does not fit image {height}x{width}")
    pl = trigger.placement
    if pl.kind == "corner":
        top = pl.corner.startswith("top")
        left = pl.corner.endswith("left")
        r = pl.margin if top else height - ph - pl.margin
        c = pl.margin if left else width - pw - pl.margin
        rows, cols = np.full(n, r), np.full(n, c)
    elif pl.kind == "offset":
        rows, cols = np.full(n, pl.row), np.full(n, pl.col)
    else:
        t, l, b, rr = pl.region
        r0, r1 = int(math.floor(t * height)), int(math.ceil(b * height)) - ph
        c0, c1 = int(math.floor(l * width)), int(math.ceil(rr * width)) - pw
        if r1 < r0 or c1 < c0:
            raise ConfigurationError(f"patch {ph}x{pw} does not fit region {pl.region}")
        rng = np.random.default_rng(seed)
        rows = rng.integers(r0, r1 + 1, size=n)
        cols = rng.integers(c0, c1 + 1, size=n)
    if rows.size and (rows.min() < 0 or cols.min() < 0 or rows.max() + ph > height or cols.max() + pw > width):
        raise ConfigurationError(f"patch {ph}x{pw} does not fit image {height}x{width} at the requested placement")
    return rows, cols


def trigger_mask(image_shape, trigger, seed=None, n=1):
    """Boolean (n, H, W) masks marking the pixels the patch will overwrite."""
    rows, cols = resolve_positions(n, image_shape, trigger, seed)
    ph, pw = trigger.size
    mask = np.zeros((n, *image_shape[:2]), dtype=bool)
    for k, (r, c) in enumerate(zip(rows, cols)):
        mask[k, r:r + ph, c:c + pw] = True
    return mask


def apply_trigger(images, trigger, seed=None):
    """Overwrite the patch region of one image (H, W, C) or a batch (N, H, W, C)."""
    images = np.asarray(images, dtype=np.float32)
    single = images.ndim == 3
    batch = images[None] if single else images
    if batch.ndim != 4:
        raise ConfigurationError(f"expected (H, W, C) or (N, H, W, C) images, got {images.shape}")
    patch = trigger.patch
    if patch.shape[2] not in (1, batch.shape[3]):
        raise ConfigurationError(f"patch has {patch.shape[2]} channels, images have {batch.shape[3]}")
    patch = np.broadcast_to(patch, (*patch.shape[:2], batch.shape[3]))
    rows, cols = resolve_positions(len(batch), batch.shape[1:], trigger, seed)
    out = batch.copy()
    ph, pw = trigger.size
    if trigger.placement.is_fixed:
        if len(out):
            r, c = rows[0], cols[0]
            out[:, r:r + ph, c:c + pw, :] = patch
    else:
        for k, (r, c) in enumerate(zip(rows, cols)):
            out[k, r:r + ph, c:c + pw, :] = patch
    return out[0] if single else out


@dataclass(frozen=True)
class AdversaryProfile:
    contributor_id: int
    trigger: TriggerSpec
    target_class: int
    poison_fraction: float = 1.0

    def __post_init__(self):
        if not 0 < self.poison_fraction <= 1:
            raise ConfigurationError("poison_fraction must be in (0, 1]")
        if self.target_class < 0:
            raise ConfigurationError("target_class must be nonnegative")


def num_poisoned(n, fraction):
    return min(n, math.ceil(Decimal(repr(fraction)) * n))


def poison_contribution(subset, profile, seed):
    """Trigger and relabel ``ceil(poison_fraction * len(subset))`` samples."""
    if profile.target_class >= subset.num_classes:
        raise ConfigurationError(
            f"target class {profile.target_class} outside [0, {subset.num_classes})"
        )
    n = len(subset)
    k = num_poisoned(n, profile.poison_fraction)
    rng = np.random.default_rng(seed)
    chosen = np.arange(n) if k == n else np.sort(rng.choice(n, size=k, replace=False))
    images = np.array(subset.images)
    labels = np.array(subset.labels)
    images[chosen] = apply_trigger(images[chosen], profile.trigger, rng.integers(2**32))
    labels[chosen] = profile.target_class
    return LabeledDataset(images, labels, subset.num_classes)


def make_adversarial_testset(clean_test, trigger, seed=None):
    """Trigger every test image; true labels are kept."""
    return LabeledDataset(apply_trigger(clean_test.images, trigger, seed), clean_test.labels, clean_test.num_classes)
