"""Contributor-aware ensembles: one self-trained member per contributor."""
from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, TrainingError
from .lfc import VoteMatrix, get_aggregator
from .nn import ClassifierArch, ClassifierParams, check_params, predict
from .training import train_ssl

log = logging.getLogger(__name__)

MODEL_FORMAT = "contribaware-ensemble"
MODEL_VERSION = 1


@dataclass
class Ensemble:
    arch: ClassifierArch
    members: list  # [(contributor_id, ClassifierParams), ...] in contributor order

    @property
    def member_ids(self):
        return tuple(j for j, _ in self.members)

    def member(self, contributor_id):
        for j, params in self.members:
            if j == contributor_id:
                return params
        raise KeyError(contributor_id)


def member_seed(seed, contributor_id):
    return int(seed) ^ int(contributor_id)


def member_training_split(data, partition, contributor_id):
    """Labeled set of one contributor and the image-only pool of everyone else.

    Returns ``(labeled, pool_images, pool_indices)``.
    """
    own = partition.assignments[contributor_id]
    others = [idx for j, idx in partition.assignments.items() if j != contributor_id]
    pool_idx = np.sort(np.concatenate(others)) if others else np.empty(0, dtype=np.int64)
    return data.subset(own), data.images[pool_idx], pool_idx


def _train_member(args):
    arch, contributor_id, labeled, pool, hyper, seed = args
    try:
        return contributor_id, train_ssl(arch, labeled, pool, hyper, seed)
    except Exception as exc:
        raise TrainingError(contributor_id, exc) from exc


def train_contributor_ensemble(data, partition, ssl_hyper, seed, arch, workers=1, member_seeds=None):
    """Train one SSL member per contributor.

    Member ``j`` sees labels only from its own contributor; every other
    contributor's images form its unlabeled pool.  Member seeds default to
    ``seed ^ j``; ``member_seeds`` (id -> seed) overrides them.  Results do
    not depend on ``workers``.
    """
    partition.validate(len(data))
    if partition.num_contributors < 2:
        raise ConfigurationError("an ensemble needs at least two contributors")
    tasks = []
    for j in partition.contributor_ids:
        labeled, pool, _ = member_training_split(data, partition, j)
        s = member_seeds[j] if member_seeds is not None else member_seed(seed, j)
        tasks.append((arch, j, labeled, pool, ssl_hyper, s))
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
            results = list(pool.map(_train_member, tasks))
    else:
        results = []
        for task in tasks:
            results.append(_train_member(task))
            log.info("trained member for contributor %d", task[1])
    return Ensemble(arch, sorted(results, key=lambda r: r[0]))


def collect_votes(ensemble, images):
    """Run every member on ``images``; column j holds member j's predictions."""
    labels, conf = [], []
    for _, params in ensemble.members:
        lab, c = predict(ensemble.arch, params, images)
        labels.append(lab)
        conf.append(c)
    return VoteMatrix(
        np.stack(labels, axis=1),
        np.clip(np.stack(conf, axis=1).astype(np.float64), 0.0, 1.0),
        ensemble.member_ids,
        ensemble.arch.num_classes,
    )


def ensemble_predict(votes, lfc="majority"):
    """Aggregate a vote matrix row-wise with an aggregator name or callable."""
    fn = get_aggregator(lfc) if isinstance(lfc, str) else lfc
    return np.asarray(fn(votes), dtype=np.int64)


def save_ensemble(path, ensemble):
    arrays = {
        "format": np.array(MODEL_FORMAT),
        "version": np.array(MODEL_VERSION),
        "arch": np.array(json.dumps(ensemble.arch.to_dict())),
        "member_ids": np.array(ensemble.member_ids, dtype=np.int64),
    }
    for j, params in ensemble.members:
        for i, (w, b) in enumerate(zip(params.weights, params.biases)):
            arrays[f"m{j}_w{i}"] = w
            arrays[f"m{j}_b{i}"] = b
    with open(path, "wb") as fh:
        np.savez_compressed(fh, **arrays)


def load_ensemble(path):
    path = Path(path)
    with np.load(path, allow_pickle=False) as z:
        if "format" not in z or str(z["format"]) != MODEL_FORMAT:
            raise ConfigurationError(f"{path}: not an ensemble model file")
        if int(z["version"]) != MODEL_VERSION:
            raise ConfigurationError(f"{path}: unsupported model version {int(z['version'])}")
        arch = ClassifierArch.from_dict(json.loads(str(z["arch"])))
        n_layers = len(arch.layers())
        members = []
        for j in z["member_ids"].tolist():
            params = ClassifierParams(
                [z[f"m{j}_w{i}"] for i in range(n_layers)],
                [z[f"m{j}_b{i}"] for i in range(n_layers)],
            )
            check_params(arch, params)
            members.append((j, params))
    return Ensemble(arch, members)
