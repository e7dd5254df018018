"""Experiment configuration files (YAML or JSON)."""
from __future__ import annotations

import copy
import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .attack import AdversaryProfile, Placement, TriggerSpec, default_trigger, load_patch, make_patch
from .data import SyntheticSpec, gen_synthetic, load_idx
from .errors import ConfigurationError
from .nn import ClassifierArch, SgdHyper
from .training import SslHyper

SCHEMA_VERSION = 1


@dataclass
class DatasetConfig:
    source: str
    train_images: Path | None = None
    train_labels: Path | None = None
    test_images: Path | None = None
    test_labels: Path | None = None
    train_limit: int | None = None
    test_limit: int | None = None
    num_classes: int = 10
    synthetic: SyntheticSpec | None = None
    test_samples_per_class: int = 50
    seed: int = 0

    def load(self):
        """Return ``(train, test)`` datasets."""
        if self.source == "idx":
            train = load_idx(self.train_images, self.train_labels, self.num_classes, self.train_limit)
            test = load_idx(self.test_images, self.test_labels, self.num_classes, self.test_limit)
        else:
            spec = self.synthetic
            train = gen_synthetic(spec, self.seed)
            test_spec = SyntheticSpec(**{**spec.__dict__, "samples_per_class": self.test_samples_per_class})
            test = gen_synthetic(test_spec, self.seed + 1)
        return train, test


@dataclass
class ExperimentConfig:
    dataset: DatasetConfig
    contributors: int
    adversaries: list
    arch: ClassifierArch
    supervised: SgdHyper
    ssl: SslHyper
    adversary_fraction: float = 0.1
    aggregator: str = "majority"
    runs: int = 1
    seed: int = 0
    output_dir: Path = Path("out")
    workers: int = 1
    save_models: bool = False
    raw: dict = field(default_factory=dict, repr=False)
    path: Path | None = None

    @property
    def adversary_ids(self):
        return [a.contributor_id for a in self.adversaries]


class _Section:
    """Read keys from one mapping, reporting errors with their dotted path."""

    def __init__(self, data, where, source):
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise ConfigurationError(f"{source}: {where}: expected a mapping")
        self.data, self.where, self.source = data, where, source
        self.used = set()

    def fail(self, key, message):
        loc = f"{self.where}.{key}" if self.where else key
        raise ConfigurationError(f"{self.source}: {loc}: {message}")

    def get(self, key, default=None, kind=None, required=False):
        self.used.add(key)
        if key not in self.data:
            if required:
                self.fail(key, "missing required key")
            return default
        value = self.data[key]
        if kind is not None and value is not None:
            try:
                if kind is int and (isinstance(value, bool) or float(value) != int(value)):
                    raise ValueError
                value = kind(value)
            except (TypeError, ValueError):
                self.fail(key, f"expected {kind.__name__}, got {value!r}")
        return value

    def section(self, key):
        self.used.add(key)
        where = f"{self.where}.{key}" if self.where else key
        return _Section(self.data.get(key), where, self.source)

    def finish(self):
        extra = set(self.data) - self.used
        if extra:
            self.fail(sorted(extra)[0], "unknown key")


def _wrap(sec, key, fn):
    try:
        return fn()
    except ConfigurationError as exc:
        if str(exc).startswith(f"{sec.source}:"):
            raise
        sec.fail(key, str(exc))


def _path(base, value):
    if value is None:
        return None
    p = Path(value)
    return p if p.is_absolute() else Path(os.path.normpath(base / p))


def _sgd(sec):
    d = SgdHyper()
    return SgdHyper(
        learning_rate=sec.get("learning_rate", d.learning_rate, float),
        momentum=sec.get("momentum", d.momentum, float),
        weight_decay=sec.get("weight_decay", d.weight_decay, float),
        epochs=sec.get("epochs", d.epochs, int),
        batch_size=sec.get("batch_size", d.batch_size, int),
        augment_shift=sec.get("augment_shift", d.augment_shift, int),
    )


def _trigger(sec, index, channels, base):
    size = sec.get("size", 3, int)
    intensity = sec.get("intensity", 1.0, float)
    default = default_trigger(index, size, intensity, channels)
    pattern = sec.get("pattern")
    file = sec.get("file")
    if file is not None:
        patch = load_patch(_path(base, file), channels)
        tid = Path(file).stem
    elif pattern is not None:
        patch = make_patch(pattern, size, intensity, channels)
        tid = pattern
    else:
        patch, tid = default.patch, default.trigger_id.split("-")[0]
    pl = sec.section("placement")
    dp = default.placement
    placement = Placement(
        kind=pl.get("kind", dp.kind),
        corner=pl.get("corner", dp.corner),
        margin=pl.get("margin", dp.margin, int),
        row=pl.get("row", 0, int),
        col=pl.get("col", 0, int),
        region=tuple(pl.get("region", dp.region)),
    )
    pl.finish()
    where = placement.corner if placement.kind == "corner" else placement.kind
    trigger_id = sec.get("id", f"{tid}-{where}")
    sec.finish()
    return TriggerSpec(patch, placement, trigger_id=trigger_id)


def parse_config(raw, source="<config>", base=Path(".")):
    """Build an :class:`ExperimentConfig` from a parsed mapping."""
    top = _Section(raw, "", source)
    version = top.get("schema_version", required=True)
    if version != SCHEMA_VERSION:
        top.fail("schema_version", f"unsupported schema version {version!r} (expected {SCHEMA_VERSION})")

    ds = top.section("dataset")
    src = ds.get("source", required=True)
    if src == "idx":
        dataset = DatasetConfig(
            source="idx",
            train_images=_path(base, ds.get("train_images", required=True)),
            train_labels=_path(base, ds.get("train_labels", required=True)),
            test_images=_path(base, ds.get("test_images", required=True)),
            test_labels=_path(base, ds.get("test_labels", required=True)),
            train_limit=ds.get("train_limit", None, int),
            test_limit=ds.get("test_limit", None, int),
            num_classes=ds.get("num_classes", 10, int),
        )
    elif src == "synthetic":
        d = SyntheticSpec()
        spec = _wrap(ds, "synthetic", lambda: SyntheticSpec(
            num_classes=ds.get("num_classes", d.num_classes, int),
            samples_per_class=ds.get("samples_per_class", d.samples_per_class, int),
            image_side=ds.get("image_side", d.image_side, int),
            noise=ds.get("noise", d.noise, float),
            blob_width=ds.get("blob_width", d.blob_width, float),
            channels=ds.get("channels", d.channels, int),
        ))
        dataset = DatasetConfig(
            source="synthetic", num_classes=spec.num_classes, synthetic=spec,
            test_samples_per_class=ds.get("test_samples_per_class", 50, int),
            seed=ds.get("seed", 0, int),
        )
    else:
        ds.fail("source", f"expected 'idx' or 'synthetic', got {src!r}")
    ds.finish()

    contributors = top.get("contributors", 5, int)
    if contributors < 2:
        top.fail("contributors", "at least two contributors are required")

    arch_sec = top.section("arch")
    if src == "idx":
        input_shape = (28, 28, 1)
    else:
        input_shape = (dataset.synthetic.image_side, dataset.synthetic.image_side, dataset.synthetic.channels)
    kind = arch_sec.get("kind", "small-conv")
    default_hidden = [[16, 2], [32, 2]] if kind == "small-conv" else [64]
    arch = _wrap(arch_sec, "kind", lambda: ClassifierArch(
        kind=kind,
        input_shape=tuple(arch_sec.get("input_shape", input_shape)),
        hidden_sizes=tuple(tuple(h) if isinstance(h, list) else h for h in arch_sec.get("hidden", default_hidden)),
        num_classes=dataset.num_classes,
        dense_sizes=tuple(arch_sec.get("dense", [])),
    ))
    arch_sec.finish()
    channels = arch.input_shape[2]

    adversaries = []
    adv_list = top.get("adversaries", [])
    if not isinstance(adv_list, list):
        top.fail("adversaries", "expected a list")
    for k, item in enumerate(adv_list):
        a = _Section(item, f"adversaries[{k}]", source)
        cid = a.get("contributor", k + 1, int)
        target = a.get("target_class", required=True)
        if not isinstance(target, int) or not 0 <= target < dataset.num_classes:
            a.fail("target_class", f"must be an integer in [0, {dataset.num_classes})")
        if not 1 <= cid <= contributors:
            a.fail("contributor", f"must lie in [1, {contributors}]")
        trig = _wrap(a, "trigger", lambda: _trigger(a.section("trigger"), k, channels, base))
        frac = a.get("poison_fraction", 1.0, float)
        profile = _wrap(a, "poison_fraction", lambda: AdversaryProfile(cid, trig, target, frac))
        a.finish()
        adversaries.append(profile)
    ids = [p.contributor_id for p in adversaries]
    if len(set(ids)) != len(ids):
        top.fail("adversaries", "adversary contributor ids must be distinct")
    if len(adversaries) >= contributors:
        top.fail("adversaries", "there must be fewer adversaries than contributors")

    sup = _wrap(top, "supervised", lambda: _sgd(top.section("supervised")))
    ssl_sec = top.section("ssl")
    d = SslHyper()
    ssl = _wrap(top, "ssl", lambda: SslHyper(
        base=_sgd(ssl_sec.section("base")),
        warmup_epochs=ssl_sec.get("warmup_epochs", d.warmup_epochs, int),
        confidence_threshold=ssl_sec.get("confidence_threshold", d.confidence_threshold, float),
        unlabeled_weight=ssl_sec.get("unlabeled_weight", d.unlabeled_weight, float),
        rounds=ssl_sec.get("rounds", d.rounds, int),
    ))
    ssl_sec.finish()

    aggregator = top.get("aggregator", "majority")
    from .lfc import AGGREGATORS
    if aggregator not in AGGREGATORS:
        top.fail("aggregator", f"unknown aggregator {aggregator!r}; choose from {sorted(AGGREGATORS)}")
    runs = top.get("runs", 1, int)
    if runs < 1:
        top.fail("runs", "must be >= 1")
    workers = top.get("workers", 1, int)
    if workers < 1:
        top.fail("workers", "must be >= 1")
    frac = top.get("adversary_fraction", 0.1, float)
    if adversaries and (frac <= 0 or frac * len(adversaries) >= 1):
        top.fail("adversary_fraction", "adversaries must own a positive share below the whole dataset")
    cfg = ExperimentConfig(
        dataset=dataset,
        contributors=contributors,
        adversaries=adversaries,
        arch=arch,
        supervised=sup,
        ssl=ssl,
        adversary_fraction=frac,
        aggregator=aggregator,
        runs=runs,
        seed=top.get("seed", 0, int),
        output_dir=_path(base, top.get("output_dir", "out")),
        workers=workers,
        save_models=bool(top.get("save_models", False)),
        raw=copy.deepcopy(raw),
    )
    top.finish()
    return cfg


def load_config(path):
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigurationError(f"{path}: cannot read config: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"{path}: invalid YAML: {exc}") from exc
    cfg = parse_config(raw, source=str(path), base=path.resolve().parent)
    cfg.path = path
    return cfg
