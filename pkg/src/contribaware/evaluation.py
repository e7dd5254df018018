"""Accuracy, attack success rate, confusion matrices and t-based intervals."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DataError, UndefinedMetricError


def _pair(pred, truth):
    pred, truth = np.asarray(pred), np.asarray(truth)
    if pred.shape != truth.shape or pred.ndim != 1:
        raise DataError(f"prediction shape {pred.shape} does not match truth shape {truth.shape}")
    if len(pred) < 1:
        raise DataError("at least one sample is required")
    return pred, truth


def accuracy(pred, truth):
    pred, truth = _pair(pred, truth)
    return float(np.mean(pred == truth))


def attack_success_rate(pred, truth, target_class):
    """Share of non-target-class samples predicted as ``target_class``."""
    pred, truth = _pair(pred, truth)
    keep = truth != target_class
    if not keep.any():
        raise UndefinedMetricError("every sample belongs to the target class")
    return float(np.mean(pred[keep] == target_class))


def confusion_matrix(pred, truth, num_classes):
    """Entry (i, j) counts samples of true class i predicted as j."""
    pred, truth = _pair(pred, truth)
    for name, v in (("prediction", pred), ("truth", truth)):
        if v.min() < 0 or v.max() >= num_classes:
            raise DataError(f"{name} labels must lie in [0, {num_classes})")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (truth, pred), 1)
    return cm


# --- Student t ---------------------------------------------------------------

def _betacf(a, b, x, max_iter=300, eps=1e-15):
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c, d = 1.0, 1.0 - qab * x / qap
    d = tiny if abs(d) < tiny else d
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            break
    return h


def betainc(a, b, x):
    """Regularized incomplete beta I_x(a, b)."""
    if x <= 0:
        return 0.0
    if x >= 1:
        return 1.0
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(log_front)
    if x < (a + 1) / (a + b + 2):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_cdf(t, df):
    x = df / (df + t * t)
    tail = 0.5 * betainc(df / 2.0, 0.5, x)
    return 1.0 - tail if t >= 0 else tail


def t_ppf(p, df):
    """Quantile of Student's t by bisection on the CDF."""
    if not 0 < p < 1:
        raise ValueError("p must lie in (0, 1)")
    if df <= 0:
        raise ValueError("df must be positive")
    if p == 0.5:
        return 0.0
    if p < 0.5:
        return -t_ppf(1 - p, df)
    lo, hi = 0.0, 1.0
    while t_cdf(hi, df) < p:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if t_cdf(mid, df) < p:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-13 * max(1.0, hi):
            break
    return 0.5 * (lo + hi)


def mean_ci(values, level=0.95):
    """Mean and half-width of the two-sided Student-t interval."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or len(v) < 2:
        raise DataError("at least two values are required for a confidence interval")
    r = len(v)
    sd = float(np.std(v, ddof=1))
    return float(v.mean()), t_ppf((1 + level) / 2, r - 1) * sd / math.sqrt(r)


# --- results -------------------------------------------------------------------

@dataclass
class ModelResult:
    """Metrics of one model (baseline or ensemble) in one run."""

    clean_accuracy: float
    clean_confusion: list
    adversarial_accuracy: dict = field(default_factory=dict)
    attack_success_rate: dict = field(default_factory=dict)
    adversarial_confusion: dict = field(default_factory=dict)


def evaluate_predictions(clean_pred, clean_truth, adversarial, num_classes):
    """Build a :class:`ModelResult`.

    ``adversarial`` maps an adversary key to ``(pred, truth, target_class)``
    on that adversary's triggered test set.
    """
    cm = confusion_matrix(clean_pred, clean_truth, num_classes)
    res = ModelResult(accuracy(clean_pred, clean_truth), cm.tolist())
    for key, (pred, truth, target) in adversarial.items():
        key = str(key)
        res.adversarial_accuracy[key] = accuracy(pred, truth)
        res.attack_success_rate[key] = attack_success_rate(pred, truth, target)
        res.adversarial_confusion[key] = confusion_matrix(pred, truth, num_classes).tolist()
    return res


@dataclass
class RunResult:
    run: int
    seed: int
    baseline: ModelResult
    ensemble: ModelResult
    # per adversary key: {member id: agreement of clean vs triggered predictions}
    member_agreement: dict = field(default_factory=dict)
    member_clean_accuracy: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


def _metric_rows(runs):
    """Flatten per-run metrics into {(model, metric, adversary): [values]}."""
    rows = {}
    for rr in runs:
        for model in ("baseline", "ensemble"):
            res = getattr(rr, model)
            rows.setdefault((model, "clean_accuracy", ""), []).append(res.clean_accuracy)
            for key in res.adversarial_accuracy:
                rows.setdefault((model, "adversarial_accuracy", key), []).append(res.adversarial_accuracy[key])
                rows.setdefault((model, "attack_success_rate", key), []).append(res.attack_success_rate[key])
    return rows


def summarize(runs, level=0.95):
    """Mean (and CI half-width when there are at least two runs) for every metric."""
    out = []
    for (model, metric, adv), values in _metric_rows(runs).items():
        mean = float(np.mean(values))
        half = mean_ci(values, level)[1] if len(values) >= 2 else None
        out.append({"model": model, "metric": metric, "adversary": adv,
                    "mean": mean, "half_width": half, "n": len(values)})
    return out
