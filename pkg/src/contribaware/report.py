"""Experiment reports: JSON record, flat tables and confusion-matrix grids."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .evaluation import ModelResult, RunResult, summarize

REPORT_VERSION = 1
MODELS = (("baseline", "Baseline classifier"), ("ensemble", "Contributor-aware training"))


@dataclass
class ExperimentReport:
    config: dict
    runs: list
    summary: list = field(default_factory=list)

    @classmethod
    def build(cls, config, runs):
        return cls(config, list(runs), summarize(runs))

    def adversary_keys(self):
        return list(self.runs[0].baseline.adversarial_accuracy) if self.runs else []

    def stat(self, model, metric, adversary=""):
        """``(mean, half_width)`` of one summarized metric; half_width is None for one run."""
        for row in self.summary:
            if (row["model"], row["metric"], row["adversary"]) == (model, metric, str(adversary)):
                return row["mean"], row["half_width"]
        raise KeyError((model, metric, adversary))

    def to_dict(self):
        return {
            "report_version": REPORT_VERSION,
            "config": self.config,
            "summary": self.summary,
            "runs": [r.to_dict() for r in self.runs],
        }

    @classmethod
    def from_dict(cls, d):
        runs = []
        for r in d["runs"]:
            r = dict(r)
            r["baseline"] = ModelResult(**r["baseline"])
            r["ensemble"] = ModelResult(**r["ensemble"])
            runs.append(RunResult(**r))
        return cls(d["config"], runs, d.get("summary") or summarize(runs))


def _cell(mean, half):
    if half is None:
        return f"{100 * mean:.2f}"
    return f"{100 * mean:.2f} ± {100 * half:.2f}"


def render_table(report, metric="accuracy"):
    """Tab-separated table, one row per model: clean column then one column per adversary."""
    keys = report.adversary_keys()
    if metric == "accuracy":
        header = ["model", "clean"] + [f"adv {k}" for k in keys]
    else:
        header = ["model"] + [f"adv {k}" for k in keys]
    lines = ["\t".join(header)]
    for model, title in MODELS:
        row = [title]
        if metric == "accuracy":
            row.append(_cell(*report.stat(model, "clean_accuracy")))
            row += [_cell(*report.stat(model, "adversarial_accuracy", k)) for k in keys]
        else:
            row += [_cell(*report.stat(model, "attack_success_rate", k)) for k in keys]
        lines.append("\t".join(row))
    return "\n".join(lines) + "\n"


def _write_grid(path, matrix):
    np.savetxt(path, np.asarray(matrix, dtype=np.int64), fmt="%d", delimiter=",")


def write_report(report, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(json.dumps(report.to_dict(), indent=2, ensure_ascii=False))
    (out_dir / "table.tsv").write_text(render_table(report, "accuracy"), encoding="utf-8")
    if report.adversary_keys():
        (out_dir / "asr.tsv").write_text(render_table(report, "asr"), encoding="utf-8")
    cm_dir = out_dir / "confusion"
    cm_dir.mkdir(exist_ok=True)
    for rr in report.runs:
        for model, _ in MODELS:
            res = getattr(rr, model)
            _write_grid(cm_dir / f"{model}_run{rr.run}_clean.csv", res.clean_confusion)
            for key, cm in res.adversarial_confusion.items():
                _write_grid(cm_dir / f"{model}_run{rr.run}_adv{key}.csv", cm)
    return out_dir


def load_report(path):
    path = Path(path)
    if path.is_dir():
        path = path / "report.json"
    return ExperimentReport.from_dict(json.loads(path.read_text()))
