"""End-to-end experiment runner: baseline versus contributor-aware ensemble."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .attack import apply_trigger, make_adversarial_testset, poison_contribution
from .data import LabeledDataset, partition_contributors
from .ensemble import collect_votes, ensemble_predict, save_ensemble, train_contributor_ensemble
from .errors import ConfigurationError
from .evaluation import RunResult, evaluate_predictions
from .nn import predict
from .report import ExperimentReport, write_report
from .training import train_supervised

log = logging.getLogger(__name__)


def _derived_seed(*parts):
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def build_poisoned_training_set(train, partition, adversaries, seed):
    """Apply every adversary's poisoning to its own contribution.

    Sample order is preserved, so ``partition`` still indexes the result.
    """
    images = np.array(train.images)
    labels = np.array(train.labels)
    for profile in adversaries:
        idx = partition.assignments[profile.contributor_id]
        poisoned = poison_contribution(train.subset(idx), profile, _derived_seed(seed, profile.contributor_id))
        images[idx] = poisoned.images
        labels[idx] = poisoned.labels
    return LabeledDataset(images, labels, train.num_classes)


@dataclass
class RunArtifacts:
    """Everything one run produced (kept in memory for tests and inspection)."""

    result: RunResult
    training_set: LabeledDataset
    partition: object
    baseline_params: object
    ensemble: object
    clean_votes: object
    adversarial_votes: dict


def run_once(config, train, test, run_index, seed, workers=1):
    adv_ids = config.adversary_ids
    partition = partition_contributors(len(train), config.contributors, adv_ids, config.adversary_fraction, seed)
    data = build_poisoned_training_set(train, partition, config.adversaries, seed)

    t0 = time.perf_counter()
    baseline = train_supervised(config.arch, data, config.supervised, seed)
    log.info("run %d: baseline trained in %.1fs", run_index, time.perf_counter() - t0)
    t0 = time.perf_counter()
    ens = train_contributor_ensemble(data, partition, config.ssl, seed, config.arch, workers=workers)
    log.info("run %d: ensemble trained in %.1fs", run_index, time.perf_counter() - t0)

    adv_tests = {
        str(k + 1): (make_adversarial_testset(test, p.trigger, _derived_seed(seed, 7919, k)), p.target_class)
        for k, p in enumerate(config.adversaries)
    }
    base_clean, _ = predict(config.arch, baseline, test.images)
    base_adv = {}
    for key, (adv, target) in adv_tests.items():
        base_adv[key] = (predict(config.arch, baseline, adv.images)[0], adv.labels, target)

    clean_votes = collect_votes(ens, test.images)
    ens_clean = ensemble_predict(clean_votes, config.aggregator)
    adv_votes, ens_adv, agreement = {}, {}, {}
    for key, (adv, target) in adv_tests.items():
        votes = collect_votes(ens, adv.images)
        adv_votes[key] = votes
        ens_adv[key] = (ensemble_predict(votes, config.aggregator), adv.labels, target)
        agreement[key] = {
            str(j): float(np.mean(clean_votes.labels[:, c] == votes.labels[:, c]))
            for c, j in enumerate(votes.member_ids)
        }
    member_acc = {
        str(j): float(np.mean(clean_votes.labels[:, c] == test.labels))
        for c, j in enumerate(clean_votes.member_ids)
    }
    result = RunResult(
        run=run_index,
        seed=seed,
        baseline=evaluate_predictions(base_clean, test.labels, base_adv, test.num_classes),
        ensemble=evaluate_predictions(ens_clean, test.labels, ens_adv, test.num_classes),
        member_agreement=agreement,
        member_clean_accuracy=member_acc,
    )
    return RunArtifacts(result, data, partition, baseline, ens, clean_votes, adv_votes)


def run_experiment(config, out_dir=None, workers=None, seed=None, keep_artifacts=False):
    """Run ``config.runs`` repetitions and write the report.

    Run ``r`` uses seed ``base + r``.  Returns the :class:`ExperimentReport`
    (and the per-run artifacts when ``keep_artifacts`` is set).
    """
    out_dir = Path(out_dir) if out_dir is not None else config.output_dir
    workers = workers if workers is not None else config.workers
    base_seed = seed if seed is not None else config.seed
    train, test = config.dataset.load()
    if train.image_shape != config.arch.input_shape:
        raise ConfigurationError(
            f"{config.path or '<config>'}: arch.input_shape {config.arch.input_shape} "
            f"does not match dataset images {train.image_shape}"
        )
    runs, artifacts = [], []
    for r in range(config.runs):
        s = base_seed + r
        art = run_once(config, train, test, r, s, workers)
        runs.append(art.result)
        if config.save_models:
            out_dir.mkdir(parents=True, exist_ok=True)
            save_ensemble(out_dir / f"ensemble_run{r}.npz", art.ensemble)
        if keep_artifacts:
            artifacts.append(art)
    echo = dict(config.raw)
    echo["seed"] = base_seed
    report = ExperimentReport.build(echo, runs)
    write_report(report, out_dir)
    return (report, artifacts) if keep_artifacts else report


def preview_poison(config, count, out_dir):
    """Write ``count`` clean/triggered PNG pairs per adversary; returns the paths."""
    from PIL import Image

    if not config.adversaries:
        raise ConfigurationError(f"{config.path or '<config>'}: no adversaries configured")
    if count < 1:
        raise ConfigurationError("count must be >= 1")
    _, test = config.dataset.load()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sample = test.images[:count]
    written = []
    for k, profile in enumerate(config.adversaries):
        triggered = apply_trigger(sample, profile.trigger, _derived_seed(config.seed, 7919, k))
        for i in range(len(sample)):
            for tag, img in (("clean", sample[i]), ("triggered", triggered[i])):
                path = out_dir / f"adv{k + 1}_{i:03d}_{tag}.png"
                pixels = np.rint(img * 255).astype(np.uint8)
                mode = "L" if pixels.shape[2] == 1 else "RGB"
                Image.fromarray(pixels[..., 0] if mode == "L" else pixels, mode).save(path)
                written.append(path)
    return written
