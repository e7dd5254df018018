"""Supervised and pseudo-labeling semi-supervised trainers."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigurationError
from .nn import SgdHyper, init_params, loss_and_grad, predict, sgd_step

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SslHyper:
    """Self-training schedule.

    ``warmup_epochs`` supervised epochs on the labeled data, then ``rounds``
    rounds of pseudo-labeling, each followed by ``base.epochs`` epochs on
    labeled plus accepted pseudo-labeled samples.
    """

    base: SgdHyper = SgdHyper()
    warmup_epochs: int = 10
    confidence_threshold: float = 0.95
    unlabeled_weight: float = 1.0
    rounds: int = 3

    def __post_init__(self):
        if self.warmup_epochs < 1 or self.rounds < 1:
            raise ConfigurationError("warmup_epochs and rounds must be positive")
        # 1.0 is allowed: it accepts only saturated predictions
        if not 0.5 < self.confidence_threshold <= 1.0:
            raise ConfigurationError("confidence_threshold must be in (0.5, 1]")
        if self.unlabeled_weight < 0:
            raise ConfigurationError("unlabeled_weight must be nonnegative")

    @property
    def total_epochs(self):
        return self.warmup_epochs + self.rounds * self.base.epochs


def random_shift(images, max_shift, rng):
    """Translate each image by up to ``max_shift`` pixels, zero filling."""
    if max_shift == 0 or len(images) == 0:
        return images
    n, h, w, _ = images.shape
    s = max_shift
    padded = np.pad(images, ((0, 0), (s, s), (s, s), (0, 0)))
    dy = rng.integers(-s, s + 1, size=n)
    dx = rng.integers(-s, s + 1, size=n)
    rows = (s - dy)[:, None] + np.arange(h)
    cols = (s - dx)[:, None] + np.arange(w)
    return padded[np.arange(n)[:, None, None], rows[:, :, None], cols[:, None, :]]


class _Loop:
    """Epoch runner with separate random streams for labeled and pseudo-labeled data.

    Keeping the streams apart makes the labeled path independent of whatever
    happens on the unlabeled side.
    """

    def __init__(self, arch, hyper, seed):
        init_seq, labeled_seq, unlabeled_seq = np.random.SeedSequence(seed).spawn(3)
        self.arch = arch
        self.hyper = hyper
        self.params = init_params(arch, init_seq)
        self.rng = np.random.default_rng(labeled_seq)
        self.rng_u = np.random.default_rng(unlabeled_seq)

    def epoch(self, images, labels, pseudo_images=None, pseudo_labels=None, pseudo_weight=0.0):
        h = self.hyper
        n = len(labels)
        steps = math.ceil(n / h.batch_size)
        order = self.rng.permutation(n)
        use_pseudo = pseudo_labels is not None and len(pseudo_labels) > 0 and pseudo_weight > 0
        if use_pseudo:
            m = len(pseudo_labels)
            order_u = self.rng_u.permutation(m)
            ubs = math.ceil(m / steps)
        for s in range(steps):
            idx = order[s * h.batch_size:(s + 1) * h.batch_size]
            xb = random_shift(images[idx], h.augment_shift, self.rng)
            yb = labels[idx]
            if use_pseudo:
                uidx = order_u[s * ubs:(s + 1) * ubs]
                if len(uidx):
                    xu = random_shift(pseudo_images[uidx], h.augment_shift, self.rng_u)
                    weights = np.concatenate([
                        np.full(len(idx), 1.0 / len(idx)),
                        np.full(len(uidx), pseudo_weight / len(uidx)),
                    ])
                    _, grads = loss_and_grad(
                        self.arch, self.params, np.concatenate([xb, xu]),
                        np.concatenate([yb, pseudo_labels[uidx]]), sample_weight=weights,
                    )
                    sgd_step(self.params, grads, h)
                    continue
            _, grads = loss_and_grad(self.arch, self.params, xb, yb)
            sgd_step(self.params, grads, h)


def _require_data(data, what):
    if data is None or len(data) == 0:
        raise ConfigurationError(f"{what} is empty")
    return data


def train_supervised(arch, train, hyper, seed):
    """Plain mini-batch SGD on ``train`` for ``hyper.epochs`` epochs."""
    _require_data(train, "training set")
    if train.num_classes != arch.num_classes:
        raise ConfigurationError("dataset and architecture disagree on num_classes")
    loop = _Loop(arch, hyper, seed)
    for _ in range(hyper.epochs):
        loop.epoch(train.images, train.labels)
    return loop.params


def select_pseudo_labels(arch, params, pool, threshold):
    """Indices and predicted labels of pool images with confidence >= threshold."""
    if len(pool) == 0:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    labels, conf = predict(arch, params, pool)
    keep = np.flatnonzero(conf >= threshold)
    return keep, labels[keep]


def train_ssl(arch, labeled, unlabeled, hyper, seed):
    """Confidence-threshold self-training.

    ``unlabeled`` is an image array only; no labels of the pool are ever seen.
    With an empty pool, or ``unlabeled_weight == 0``, the result equals
    ``train_supervised`` run for ``hyper.total_epochs`` epochs.
    """
    _require_data(labeled, "labeled set")
    if labeled.num_classes != arch.num_classes:
        raise ConfigurationError("dataset and architecture disagree on num_classes")
    pool = np.asarray(unlabeled, dtype=np.float32)
    if len(pool) and pool.shape[1:] != labeled.image_shape:
        raise ConfigurationError(
            f"unlabeled images {pool.shape[1:]} do not match labeled images {labeled.image_shape}"
        )
    loop = _Loop(arch, hyper.base, seed)
    for _ in range(hyper.warmup_epochs):
        loop.epoch(labeled.images, labeled.labels)
    for r in range(hyper.rounds):
        if hyper.unlabeled_weight > 0:
            keep, pseudo = select_pseudo_labels(arch, loop.params, pool, hyper.confidence_threshold)
        else:
            keep, pseudo = np.empty(0, dtype=np.int64), None
        log.debug("round %d: accepted %d of %d pool images", r + 1, len(keep), len(pool))
        for _ in range(hyper.base.epochs):
            loop.epoch(labeled.images, labeled.labels, pool[keep], pseudo, hyper.unlabeled_weight)
    return loop.params


def supervised_equivalent(hyper):
    """SgdHyper whose supervised run matches ``train_ssl`` on an empty pool."""
    return replace(hyper.base, epochs=hyper.total_epochs)
