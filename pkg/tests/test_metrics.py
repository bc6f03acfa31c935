import itertools
import json
import math

import numpy as np
import pytest

from smartintent.metrics import (
    ConfusionCounts,
    MetricsError,
    aggregate,
    build_report,
    confusion,
    per_class,
    report_to_csv,
    report_to_dict,
    report_to_json,
)


def _brute_force_counts(preds, truths):
    """Independent per-sample tally, one indicator at a time."""
    classes = len(preds[0])
    out = {"tp": [0] * classes, "tn": [0] * classes, "fp": [0] * classes, "fn": [0] * classes}
    for n in range(len(preds)):
        for c in range(classes):
            y, yhat = truths[n][c], preds[n][c]
            out["tp"][c] += int(y == 1 and yhat == 1)
            out["tn"][c] += int(y == 0 and yhat == 0)
            out["fp"][c] += int(y == 0 and yhat == 1)
            out["fn"][c] += int(y == 1 and yhat == 0)
    return out


class TestConfusion:
    def test_perfect_predictor(self):
        rng = np.random.default_rng(2)
        truths = [tuple(rng.integers(0, 2, 10)) for _ in range(12)]
        counts = confusion(truths, truths)
        assert counts.fp == (0,) * 10
        assert counts.fn == (0,) * 10
        assert all(tp + tn == 12 for tp, tn in zip(counts.tp, counts.tn))

    def test_complement_predictor(self):
        rng = np.random.default_rng(3)
        truths = [tuple(rng.integers(0, 2, 10)) for _ in range(9)]
        preds = [tuple(1 - b for b in t) for t in truths]
        counts = confusion(preds, truths)
        assert counts.tp == (0,) * 10
        assert counts.tn == (0,) * 10

    def test_matches_brute_force_on_random_batches(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            n = int(rng.integers(1, 8))
            preds = [tuple(rng.integers(0, 2, 10)) for _ in range(n)]
            truths = [tuple(rng.integers(0, 2, 10)) for _ in range(n)]
            counts = confusion(preds, truths)
            expected = _brute_force_counts(preds, truths)
            assert counts.tp == tuple(expected["tp"])
            assert counts.tn == tuple(expected["tn"])
            assert counts.fp == tuple(expected["fp"])
            assert counts.fn == tuple(expected["fn"])

    def test_count_conservation(self):
        rng = np.random.default_rng(5)
        preds = [tuple(rng.integers(0, 2, 10)) for _ in range(17)]
        truths = [tuple(rng.integers(0, 2, 10)) for _ in range(17)]
        counts = confusion(preds, truths)
        for c in range(10):
            assert counts.tp[c] + counts.tn[c] + counts.fp[c] + counts.fn[c] == 17

    def test_order_invariance(self):
        rng = np.random.default_rng(6)
        preds = [tuple(rng.integers(0, 2, 10)) for _ in range(10)]
        truths = [tuple(rng.integers(0, 2, 10)) for _ in range(10)]
        perm = rng.permutation(10)
        shuffled = confusion([preds[i] for i in perm], [truths[i] for i in perm])
        assert shuffled == confusion(preds, truths)

    def test_length_mismatch(self):
        with pytest.raises(MetricsError):
            confusion([(0,) * 10], [(0,) * 10, (1,) * 10])


class TestPerClass:
    def test_formula_point(self):
        counts = ConfusionCounts(tp=(3,), tn=(5,), fp=(1,), fn=(1,))
        pc = per_class(counts)
        assert pc.precision[0] == pytest.approx(0.75)
        assert pc.recall[0] == pytest.approx(0.75)
        assert pc.f1[0] == pytest.approx(0.75)
        assert pc.accuracy[0] == pytest.approx(0.8)

    def test_zero_denominator_convention(self):
        counts = ConfusionCounts(tp=(0,), tn=(4,), fp=(0,), fn=(2,))
        pc = per_class(counts)
        assert pc.precision[0] == 0.0
        assert pc.f1[0] == 0.0
        counts = ConfusionCounts(tp=(0,), tn=(6,), fp=(0,), fn=(0,))
        pc = per_class(counts)
        assert pc.recall[0] == 0.0

    def test_all_positive_perfect(self):
        counts = ConfusionCounts(tp=(7,), tn=(0,), fp=(0,), fn=(0,))
        pc = per_class(counts)
        assert (pc.accuracy[0], pc.precision[0], pc.recall[0], pc.f1[0]) == (1.0, 1.0, 1.0, 1.0)


class TestAggregate:
    def test_macro_accuracy_equals_micro_accuracy(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            n = int(rng.integers(1, 30))
            preds = [tuple(rng.integers(0, 2, 10)) for _ in range(n)]
            truths = [tuple(rng.integers(0, 2, 10)) for _ in range(n)]
            agg = aggregate(confusion(preds, truths))
            assert agg.macro_accuracy == pytest.approx(agg.micro_accuracy, abs=1e-15)

    def test_single_class_macro_equals_micro(self):
        counts = ConfusionCounts(tp=(3,), tn=(2,), fp=(1,), fn=(1,))
        agg = aggregate(counts)
        assert agg.macro_precision == agg.micro_precision
        assert agg.macro_recall == agg.micro_recall
        assert agg.macro_f1 == pytest.approx(agg.micro_f1, abs=1e-15)

    def test_micro_f1_is_harmonic_mean_of_micro_p_r(self):
        counts = ConfusionCounts(tp=(5, 1), tn=(2, 7), fp=(2, 1), fn=(1, 1))
        agg = aggregate(counts)
        expected = (
            2 * agg.micro_precision * agg.micro_recall
            / (agg.micro_precision + agg.micro_recall)
        )
        assert agg.micro_f1 == pytest.approx(expected, abs=1e-15)

    def test_exhaustive_two_sample_two_class_oracle(self):
        # Every (pred, truth) combination for N=2 over 2 active classes.
        bits = list(itertools.product((0, 1), repeat=2))
        for p1, p2, t1, t2 in itertools.product(bits, repeat=4):
            preds, truths = [p1, p2], [t1, t2]
            counts = confusion(preds, truths)
            expected = _brute_force_counts(preds, truths)
            assert counts.tp == tuple(expected["tp"])
            pc = per_class(counts)
            agg = aggregate(counts)
            for c in range(2):
                n = 2
                tp, tn = expected["tp"][c], expected["tn"][c]
                fp, fn = expected["fp"][c], expected["fn"][c]
                assert pc.accuracy[c] == (tp + tn) / n
                assert pc.precision[c] == (tp / (tp + fp) if tp + fp else 0.0)
                assert pc.recall[c] == (tp / (tp + fn) if tp + fn else 0.0)
            assert agg.macro_accuracy == agg.micro_accuracy


class TestReport:
    def _report(self):
        rng = np.random.default_rng(8)
        preds = [tuple(rng.integers(0, 2, 10)) for _ in range(6)]
        truths = [tuple(rng.integers(0, 2, 10)) for _ in range(6)]
        return build_report(preds, truths, threshold=0.5)

    def test_dict_carries_raw_counts(self):
        d = report_to_dict(self._report())
        assert d["n"] == 6
        assert len(d["classes"]) == 10
        for row in d["classes"]:
            assert {"tp", "tn", "fp", "fn"} <= set(row)
            assert row["tp"] + row["tn"] + row["fp"] + row["fn"] == 6

    def test_json_parses_and_is_stable(self):
        report = self._report()
        text = report_to_json(report)
        assert json.loads(text)["macro"]["accuracy"] == report.aggregate.macro_accuracy
        assert text == report_to_json(report)

    def test_csv_layout(self):
        lines = report_to_csv(self._report()).strip().split("\n")
        assert lines[0] == "category,accuracy,precision,recall,f1"
        assert len(lines) == 1 + 10 + 2
        assert lines[1].startswith("Fee,")
        assert lines[-2].startswith("macro,")
        assert lines[-1].startswith("micro,")

    def test_perfect_report_is_all_ones(self):
        truths = [tuple((i + c) % 2 for c in range(10)) for i in range(4)]
        report = build_report(truths, truths, 0.5)
        assert report.aggregate.micro_f1 == 1.0
        assert report.aggregate.macro_f1 == 1.0
        assert all(v == 1.0 for v in report.per_class.accuracy)

    def test_all_metrics_in_unit_interval(self):
        rng = np.random.default_rng(9)
        for _ in range(30):
            n = int(rng.integers(1, 12))
            preds = [tuple(rng.integers(0, 2, 10)) for _ in range(n)]
            truths = [tuple(rng.integers(0, 2, 10)) for _ in range(n)]
            report = build_report(preds, truths)
            values = (
                list(report.per_class.accuracy)
                + list(report.per_class.precision)
                + list(report.per_class.recall)
                + list(report.per_class.f1)
                + [getattr(report.aggregate, f) for f in (
                    "macro_accuracy", "macro_precision", "macro_recall", "macro_f1",
                    "micro_accuracy", "micro_precision", "micro_recall", "micro_f1",
                )]
            )
            assert all(0.0 <= v <= 1.0 for v in values)
