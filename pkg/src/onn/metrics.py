"""Accuracy, top-k, error-rate reduction and four-stage experiment reports."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

STAGES = ("baseline", "focal_training", "unification", "merging")
STAGE_TITLES = {
    "baseline": "Baseline",
    "focal_training": "Focal Point Training",
    "unification": "Focal Point Unification",
    "merging": "Focal Point Merging",
}


class MetricsError(ValueError):
    pass


def label_ranks(probs, labels) -> np.ndarray:
    """0-based rank of each true label; ties go to the lower class index."""
    probs = np.asarray(probs)
    labels = np.asarray(labels)
    p_true = probs[np.arange(len(labels)), labels][:, None]
    classes = np.arange(probs.shape[1])[None, :]
    ahead = (probs > p_true) | ((probs == p_true) & (classes < labels[:, None]))
    return ahead.sum(axis=1)


def accuracy(probs, labels) -> float:
    return topk_accuracy(probs, labels, 1)


def topk_accuracy(probs, labels, k) -> float:
    probs = np.asarray(probs)
    if k < 1 or k > probs.shape[1]:
        raise MetricsError(f"k={k} outside [1, {probs.shape[1]}]")
    if len(labels) == 0:
        raise MetricsError("no samples to score")
    return float(np.mean(label_ranks(probs, labels) < k))


def error_reduction(baseline: float, new: float) -> float:
    """Fractional reduction of the error rate ``1 - metric``; negative if ``new`` is worse."""
    for v in (baseline, new):
        if not 0.0 <= v <= 1.0:
            raise MetricsError(f"metric {v} outside [0, 1]")
    if baseline == 1.0:
        raise MetricsError("error reduction undefined for a perfect baseline")
    return ((1.0 - baseline) - (1.0 - new)) / (1.0 - baseline)


def relative_gain(baseline: float, new: float) -> float:
    """Relative accuracy increase ``(new - baseline) / baseline``."""
    if baseline <= 0.0:
        raise MetricsError("relative gain undefined for a zero baseline")
    return (new - baseline) / baseline


@dataclass(frozen=True)
class StageResult:
    stage: str
    accuracy: float
    top_k: float
    k: int = 5

    def __post_init__(self):
        if self.stage not in STAGES:
            raise MetricsError(f"unknown stage {self.stage!r}")
        if not 0.0 <= self.accuracy <= self.top_k <= 1.0:
            raise MetricsError(
                f"{self.stage}: need 0 <= accuracy <= top_k <= 1, got {self.accuracy}, {self.top_k}"
            )


@dataclass
class ExperimentReport:
    config: dict
    stages: list[StageResult]
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if [s.stage for s in self.stages] != list(STAGES):
            raise MetricsError(f"report must hold stages {STAGES} in order")

    def __getitem__(self, stage) -> StageResult:
        return self.stages[STAGES.index(stage)]

    def reductions(self) -> dict[str, dict[str, float]]:
        base = self.stages[0]
        out = {}
        for s in self.stages[1:]:
            out[s.stage] = {
                "error_reduction": error_reduction(base.accuracy, s.accuracy),
                "top_k_error_reduction": error_reduction(base.top_k, s.top_k),
                "relative_gain": relative_gain(base.accuracy, s.accuracy) if base.accuracy > 0 else float("nan"),
            }
        return out


def build_report(results, config=None, extras=None) -> ExperimentReport:
    """``results`` maps stage name to ``StageResult`` (any order)."""
    missing = [s for s in STAGES if s not in results]
    if missing:
        raise MetricsError(f"missing stage results: {missing}")
    return ExperimentReport(dict(config or {}), [results[s] for s in STAGES], dict(extras or {}))


def render_text(report: ExperimentReport) -> str:
    k = report.stages[0].k
    red = report.reductions()
    head = f"{'':26s}{'Accuracy':>10s}{'Top-' + str(k):>9s}{'Err.red':>10s}{'Top-' + str(k) + ' err.red':>16s}{'Rel.gain':>10s}"
    lines = []
    if report.config:
        lines.append("  ".join(f"{key}={val}" for key, val in report.config.items()))
    lines.append(head)
    for s in report.stages:
        row = f"{STAGE_TITLES[s.stage]:26s}{100 * s.accuracy:9.2f}%{100 * s.top_k:8.2f}%"
        if s.stage in red:
            r = red[s.stage]
            row += (
                f"{100 * r['error_reduction']:9.1f}%{100 * r['top_k_error_reduction']:15.1f}%"
                f"{100 * r['relative_gain']:9.1f}%"
            )
        lines.append(row)
    lines.append("Err.red = reduction of error rate (1 - metric) vs baseline; Rel.gain = relative accuracy gain")
    return "\n".join(lines)


CSV_FIELDS = ["stage", "accuracy", "top_k", "k", "error_reduction", "top_k_error_reduction", "relative_gain"]


def render_csv(report: ExperimentReport) -> str:
    buf = io.StringIO()
    buf.write("# config " + json.dumps(report.config, sort_keys=True) + "\n")
    if report.extras:
        buf.write("# extras " + json.dumps(report.extras, sort_keys=True) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_FIELDS)
    red = report.reductions()
    for s in report.stages:
        r = red.get(s.stage, {})
        w.writerow([
            s.stage, repr(s.accuracy), repr(s.top_k), s.k,
            *(repr(r[f]) if f in r else "" for f in CSV_FIELDS[4:]),
        ])
    return buf.getvalue()


def parse_csv(text: str) -> ExperimentReport:
    config, extras, body = {}, {}, []
    for line in text.splitlines():
        if line.startswith("# config "):
            config = json.loads(line[len("# config "):])
        elif line.startswith("# extras "):
            extras = json.loads(line[len("# extras "):])
        elif line.strip():
            body.append(line)
    rows = list(csv.DictReader(body))
    results = {
        r["stage"]: StageResult(r["stage"], float(r["accuracy"]), float(r["top_k"]), int(r["k"]))
        for r in rows
    }
    return build_report(results, config, extras)
