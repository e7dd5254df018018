"""Learning-from-crowds aggregation of ensemble votes."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DataError

WEIGHT_FLOOR = 1e-6


@dataclass(frozen=True, eq=False)
class VoteMatrix:
    """Predicted labels and confidences, one column per ensemble member."""

    labels: np.ndarray
    confidences: np.ndarray
    member_ids: tuple
    num_classes: int

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        conf = np.asarray(self.confidences, dtype=np.float64)
        if labels.ndim != 2 or conf.shape != labels.shape:
            raise DataError(f"labels {labels.shape} and confidences {conf.shape} must be matching N x J arrays")
        if labels.shape[1] != len(self.member_ids):
            raise DataError("one member id per column is required")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise DataError(f"vote labels must lie in [0, {self.num_classes})")
        if conf.size and (conf.min() < 0 or conf.max() > 1):
            raise DataError("confidences must lie in [0, 1]")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "confidences", conf)
        object.__setattr__(self, "member_ids", tuple(self.member_ids))

    @classmethod
    def from_labels(cls, labels, num_classes=None, confidences=None):
        labels = np.asarray(labels, dtype=np.int64)
        if num_classes is None:
            num_classes = int(labels.max()) + 1
        if confidences is None:
            confidences = np.ones(labels.shape)
        return cls(labels, confidences, tuple(range(1, labels.shape[1] + 1)), max(num_classes, 2))

    @property
    def shape(self):
        return self.labels.shape


@dataclass(frozen=True, eq=False)
class VoterWeights:
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 1 or (w < 0).any() or abs(w.sum() - 1) > 1e-9:
            raise DataError("voter weights must be a nonnegative vector summing to 1")
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, j):
        return cls(np.full(j, 1.0 / j))


def _class_scores(votes, column_weights):
    """(N, C) sums of ``column_weights`` per voted class, columns added left to right."""
    n, j = votes.shape
    scores = np.zeros((n, votes.num_classes))
    rows = np.arange(n)
    for col in range(j):
        scores[rows, votes.labels[:, col]] += column_weights[:, col]
    return scores


def _pick(primary, votes):
    """Argmax of ``primary`` per row; ties go to larger summed confidence, then lowest class."""
    conf = _class_scores(votes, votes.confidences)
    cand = primary == primary.max(axis=1, keepdims=True)
    conf = np.where(cand, conf, -np.inf)
    cand &= conf == conf.max(axis=1, keepdims=True)
    return cand.argmax(axis=1)


def majority_vote(votes):
    n, j = votes.shape
    if j < 1:
        raise DataError("at least one voter is required")
    return _pick(_class_scores(votes, np.ones((n, j))), votes)


def weighted_majority_vote(votes, weights):
    w = weights.weights if isinstance(weights, VoterWeights) else np.asarray(weights, dtype=np.float64)
    n, j = votes.shape
    if w.shape != (j,):
        raise DataError(f"{len(w)} weights for {j} voters")
    return _pick(_class_scores(votes, np.broadcast_to(w, (n, j))), votes)


def estimate_voter_weights(votes, iterations=5):
    """Iterative agreement weighting.

    Start uniform; each iteration takes the weighted-majority consensus and
    sets every voter's weight to its agreement rate with it (floored at
    1e-6), then renormalizes.
    """
    n, j = votes.shape
    if n < 1:
        raise DataError("at least one vote row is required")
    w = np.full(j, 1.0 / j)
    for _ in range(iterations):
        consensus = weighted_majority_vote(votes, w)
        agree = (votes.labels == consensus[:, None]).mean(axis=0)
        raw = np.maximum(agree, WEIGHT_FLOOR)
        w = raw / raw.sum()
    return VoterWeights(w)


def weighted_majority(votes, iterations=5):
    """Aggregator: estimate voter weights from the votes, then vote."""
    return weighted_majority_vote(votes, estimate_voter_weights(votes, iterations))


def _opinion_rank(votes):
    raise ConfigurationError("the 'opinion-rank' aggregator is a reserved slot and is not implemented")


AGGREGATORS = {
    "majority": majority_vote,
    "weighted-majority": weighted_majority,
    "opinion-rank": _opinion_rank,
}


def get_aggregator(name):
    try:
        return AGGREGATORS[name]
    except KeyError:
        raise ConfigurationError(f"unknown aggregator {name!r}; choose from {sorted(AGGREGATORS)}") from None


def register_aggregator(name, fn):
    """Make ``fn(votes) -> labels`` available under ``name``."""
    AGGREGATORS[name] = fn
