"""Per-class confusion counts and derived metrics with macro/micro aggregation.

Zero-denominator convention: precision, recall, and F1 are 0 when their
denominator is 0. Raw counts are always emitted alongside derived metrics so
alternative conventions stay computable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from smartintent.dataset import INTENT_CATEGORIES


class MetricsError(ValueError):
    """Mismatched prediction/truth shapes."""


@dataclass(frozen=True)
class ConfusionCounts:
    tp: tuple[int, ...]
    tn: tuple[int, ...]
    fp: tuple[int, ...]
    fn: tuple[int, ...]

    @property
    def classes(self) -> int:
        return len(self.tp)

    @property
    def n(self) -> int:
        return self.tp[0] + self.tn[0] + self.fp[0] + self.fn[0]


@dataclass(frozen=True)
class PerClassMetrics:
    accuracy: tuple[float, ...]
    precision: tuple[float, ...]
    recall: tuple[float, ...]
    f1: tuple[float, ...]


@dataclass(frozen=True)
class AggregateMetrics:
    macro_accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    micro_accuracy: float
    micro_precision: float
    micro_recall: float
    micro_f1: float


@dataclass(frozen=True)
class MetricReport:
    counts: ConfusionCounts
    per_class: PerClassMetrics
    aggregate: AggregateMetrics
    n: int
    threshold: float


def confusion(preds, truths) -> ConfusionCounts:
    """Count per-class TP/TN/FP/FN over aligned prediction/truth bit vectors."""
    if len(preds) != len(truths):
        raise MetricsError(f"length mismatch: {len(preds)} preds vs {len(truths)} truths")
    if len(preds) == 0:
        raise MetricsError("need at least one sample")
    classes = len(preds[0])
    tp = [0] * classes
    tn = [0] * classes
    fp = [0] * classes
    fn = [0] * classes
    for pred, truth in zip(preds, truths):
        if len(pred) != classes or len(truth) != classes:
            raise MetricsError("ragged prediction or truth vector")
        for c in range(classes):
            if truth[c]:
                if pred[c]:
                    tp[c] += 1
                else:
                    fn[c] += 1
            elif pred[c]:
                fp[c] += 1
            else:
                tn[c] += 1
    return ConfusionCounts(tp=tuple(tp), tn=tuple(tn), fp=tuple(fp), fn=tuple(fn))


def _div(num: float, den: float) -> float:
    return num / den if den else 0.0


def per_class(counts: ConfusionCounts) -> PerClassMetrics:
    accuracy, precision, recall, f1 = [], [], [], []
    for tp, tn, fp, fn in zip(counts.tp, counts.tn, counts.fp, counts.fn):
        n = tp + tn + fp + fn
        p = _div(tp, tp + fp)
        r = _div(tp, tp + fn)
        accuracy.append(_div(tp + tn, n))
        precision.append(p)
        recall.append(r)
        f1.append(_div(2.0 * p * r, p + r))
    return PerClassMetrics(
        accuracy=tuple(accuracy),
        precision=tuple(precision),
        recall=tuple(recall),
        f1=tuple(f1),
    )


def aggregate(counts: ConfusionCounts) -> AggregateMetrics:
    """Macro (unweighted per-class mean) and micro (pooled counts) aggregates."""
    pc = per_class(counts)
    c = counts.classes
    sum_tp = sum(counts.tp)
    sum_tn = sum(counts.tn)
    sum_fp = sum(counts.fp)
    sum_fn = sum(counts.fn)
    return AggregateMetrics(
        macro_accuracy=sum(pc.accuracy) / c,
        macro_precision=sum(pc.precision) / c,
        macro_recall=sum(pc.recall) / c,
        macro_f1=sum(pc.f1) / c,
        micro_accuracy=_div(sum_tp + sum_tn, sum_tp + sum_tn + sum_fp + sum_fn),
        micro_precision=_div(sum_tp, sum_tp + sum_fp),
        micro_recall=_div(sum_tp, sum_tp + sum_fn),
        micro_f1=_div(2.0 * sum_tp, 2.0 * sum_tp + sum_fp + sum_fn),
    )


def build_report(preds, truths, threshold: float = 0.5) -> MetricReport:
    counts = confusion(preds, truths)
    return MetricReport(
        counts=counts,
        per_class=per_class(counts),
        aggregate=aggregate(counts),
        n=len(preds),
        threshold=threshold,
    )


def report_to_dict(report: MetricReport, categories=INTENT_CATEGORIES) -> dict:
    classes = []
    for c, name in enumerate(categories[: report.counts.classes]):
        classes.append(
            {
                "category": name,
                "tp": report.counts.tp[c],
                "tn": report.counts.tn[c],
                "fp": report.counts.fp[c],
                "fn": report.counts.fn[c],
                "accuracy": report.per_class.accuracy[c],
                "precision": report.per_class.precision[c],
                "recall": report.per_class.recall[c],
                "f1": report.per_class.f1[c],
            }
        )
    agg = report.aggregate
    return {
        "n": report.n,
        "threshold": report.threshold,
        "classes": classes,
        "macro": {
            "accuracy": agg.macro_accuracy,
            "precision": agg.macro_precision,
            "recall": agg.macro_recall,
            "f1": agg.macro_f1,
        },
        "micro": {
            "accuracy": agg.micro_accuracy,
            "precision": agg.micro_precision,
            "recall": agg.micro_recall,
            "f1": agg.micro_f1,
        },
    }


def report_to_json(report: MetricReport, categories=INTENT_CATEGORIES) -> str:
    return json.dumps(report_to_dict(report, categories), sort_keys=True, indent=2) + "\n"


def report_to_csv(report: MetricReport, categories=INTENT_CATEGORIES) -> str:
    """One row per class plus macro/micro rows: Accuracy, Precision, Recall, F1."""
    lines = ["category,accuracy,precision,recall,f1"]
    pc = report.per_class
    for c, name in enumerate(categories[: report.counts.classes]):
        lines.append(f"{name},{pc.accuracy[c]},{pc.precision[c]},{pc.recall[c]},{pc.f1[c]}")
    agg = report.aggregate
    lines.append(
        f"macro,{agg.macro_accuracy},{agg.macro_precision},{agg.macro_recall},{agg.macro_f1}"
    )
    lines.append(
        f"micro,{agg.micro_accuracy},{agg.micro_precision},{agg.micro_recall},{agg.micro_f1}"
    )
    return "\n".join(lines) + "\n"
