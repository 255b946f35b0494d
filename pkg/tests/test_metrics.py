"""Confusion-matrix tallying, derived metrics, rounding and reports."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from orchard.errors import DataError
from orchard.metrics import (
    ConfusionMatrix,
    compute_metrics,
    confusion_matrix,
    confusion_to_csv,
    evaluate,
    metrics_report,
    round_half_up,
)
from orchard.models import ModelConfig, build_model, init_parameters
from orchard.synth import make_blob_dataset

CLASSES3 = ["anthracnose", "fruitfly", "healthy"]


def cm_from(matrix, classes=CLASSES3):
    return ConfusionMatrix(counts=np.asarray(matrix, dtype=np.int64), classes=classes)


class TestConfusionMatrix:
    def test_perfect_predictions_diagonal(self):
        cm = confusion_matrix([0, 1, 2, 1], [0, 1, 2, 1], 3)
        assert np.array_equal(cm.counts, np.diag([1, 2, 1]))

    def test_hand_tally(self):
        cm = confusion_matrix([0, 1, 2], [0, 2, 2], 3)
        assert cm.counts[1][2] == 1
        assert np.trace(cm.counts) == 2

    def test_empty_input_gives_zero_matrix(self):
        cm = confusion_matrix([], [], 3)
        assert cm.counts.sum() == 0
        with pytest.raises(DataError, match="empty"):
            compute_metrics(cm)

    def test_index_out_of_range(self):
        with pytest.raises(DataError, match="out of range"):
            confusion_matrix([0, 3], [0, 1], 3)

    def test_length_mismatch(self):
        with pytest.raises(Exception, match="actual"):
            confusion_matrix([0, 1], [0], 2)


class TestRounding:
    @pytest.mark.parametrize(
        "value,expected",
        [(0.945, 0.95), (0.875, 0.88), (0.944, 0.94), (0.9231, 0.92), (0.97647, 0.98)],
    )
    def test_half_up(self, value, expected):
        assert round_half_up(value) == expected


class TestComputeMetrics:
    def test_reference_matrix_one(self):
        # the 379-sample evaluation: per-class cells and overall accuracy
        cm = cm_from([[170, 0, 0], [0, 118, 0], [0, 7, 84]])
        m = compute_metrics(cm)
        assert m.accuracy == pytest.approx(372 / 379, abs=1e-12)
        assert round(m.accuracy, 4) == 0.9815
        anthr, ff, healthy = m.per_class
        assert (anthr.precision, anthr.recall, anthr.f1) == (1.0, 1.0, 1.0)
        assert round_half_up(ff.precision) == 0.94
        assert ff.recall == 1.0
        assert round_half_up(ff.f1) == 0.97
        assert healthy.precision == 1.0
        assert round_half_up(healthy.recall) == 0.92
        assert round_half_up(healthy.f1) == 0.96

    def test_reference_matrix_two(self):
        cm = cm_from([[166, 0, 4], [10, 106, 2], [2, 3, 86]])
        m = compute_metrics(cm)
        # count-derived accuracy: trace/total of what the matrix holds
        assert m.accuracy == pytest.approx(358 / 379, abs=1e-12)
        precisions = [round_half_up(s.precision) for s in m.per_class]
        assert precisions == [0.93, 0.97, 0.93]
        assert round_half_up(m.per_class[0].f1) == 0.95
        assert round_half_up(m.per_class[1].f1) == 0.93

    def test_zero_denominators_are_zero(self):
        cm = cm_from([[0, 2], [0, 3]], classes=["a", "b"])
        m = compute_metrics(cm)
        assert m.per_class[0].precision == 0.0  # no predictions for class a
        assert m.per_class[0].recall == 0.0
        assert m.per_class[0].f1 == 0.0
        assert m.per_class[1].precision == 3 / 5

    @given(st.integers(0, 2**31 - 1), st.integers(2, 5))
    @settings(max_examples=40, deadline=None)
    def test_accuracy_is_support_weighted_recall(self, seed, c):
        rng = np.random.default_rng(seed)
        counts = rng.integers(0, 30, size=(c, c))
        if counts.sum() == 0:
            counts[0, 0] = 1
        cm = ConfusionMatrix(counts=counts.astype(np.int64), classes=[f"k{i}" for i in range(c)])
        m = compute_metrics(cm)
        weighted = sum(s.recall * s.support for s in m.per_class) / cm.total
        assert m.accuracy == pytest.approx(weighted, abs=1e-12)

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=30, deadline=None)
    def test_relabeling_invariance(self, seed):
        rng = np.random.default_rng(seed)
        counts = rng.integers(0, 20, size=(3, 3)).astype(np.int64)
        counts[0, 0] += 1
        perm = rng.permutation(3)
        cm = cm_from(counts)
        permuted = ConfusionMatrix(
            counts=counts[np.ix_(perm, perm)], classes=[CLASSES3[i] for i in perm]
        )
        a = compute_metrics(cm)
        b = compute_metrics(permuted)
        assert a.accuracy == pytest.approx(b.accuracy, abs=1e-12)
        by_name_a = {s.name: s for s in a.per_class}
        by_name_b = {s.name: s for s in b.per_class}
        for name in CLASSES3:
            assert by_name_a[name].precision == pytest.approx(by_name_b[name].precision)
            assert by_name_a[name].recall == pytest.approx(by_name_b[name].recall)


@pytest.fixture(scope="module")
def model_and_data():
    ds = make_blob_dataset(n_images=45, size=16, seed=8)
    cfg = ModelConfig(
        variant="mini_inception", input_size=(16, 16), channels=[8], num_blocks=1,
        num_classes=3,
    )
    model = init_parameters(build_model(cfg), 2)
    model.class_names = list(ds.classes)
    return model, ds


class TestEvaluateAndReports:
    def test_constant_predictor_hits_prior(self):
        ds = make_blob_dataset(n_images=30, size=16, seed=5)
        cfg = ModelConfig(
            variant="mini_inception", input_size=(16, 16), channels=[8], num_blocks=1,
            num_classes=3,
        )
        model = build_model(cfg)  # zero head: uniform probs, argmax -> class 0
        model.class_names = list(ds.classes)
        cm, metrics, _ = evaluate(model, ds)
        assert metrics.accuracy == pytest.approx(1 / 3, abs=1e-12)
        assert cm.counts[:, 0].sum() == 30

    def test_deterministic_and_complete_log(self, model_and_data):
        model, ds = model_and_data
        cm1, m1, log1 = evaluate(model, ds)
        cm2, m2, log2 = evaluate(model, ds)
        assert np.array_equal(cm1.counts, cm2.counts)
        assert log1 == log2
        assert len(log1) == len(ds)
        for path, actual, predicted, prob in log1:
            assert actual in ds.classes and predicted in ds.classes
            assert 0.0 <= prob <= 1.0

    def test_class_mismatch_rejected(self, model_and_data):
        model, ds = model_and_data
        other = make_blob_dataset(n_images=9, size=16, seed=1)
        other.classes = ["x", "y", "z"]
        with pytest.raises(DataError, match="class"):
            evaluate(model, other)

    def test_report_flags_claimed_accuracy_mismatch(self):
        cm = cm_from([[166, 0, 4], [10, 106, 2], [2, 3, 86]])
        m = compute_metrics(cm)
        flagged = metrics_report(cm, m, claimed_accuracy=0.9496)
        assert len(flagged["notes"]) == 1
        assert "0.9496" in flagged["notes"][0] and "0.9446" in flagged["notes"][0]
        # a claim agreeing with the counts raises no flag
        clean = metrics_report(cm, m, claimed_accuracy=358 / 379)
        assert clean["notes"] == []

    def test_report_shape(self):
        cm = cm_from([[5, 1, 0], [0, 6, 0], [1, 0, 7]])
        report = metrics_report(cm, compute_metrics(cm))
        assert report["total"] == 20
        assert len(report["per_class"]) == 3
        assert set(report["macro"]) == {"precision", "recall", "f1"}

    def test_confusion_csv_layout(self, tmp_path):
        cm = cm_from([[1, 2, 0], [0, 3, 0], [0, 0, 4]])
        confusion_to_csv(cm, tmp_path / "confusion.csv")
        lines = (tmp_path / "confusion.csv").read_text().splitlines()
        assert lines[0].endswith(",".join(CLASSES3))
        assert lines[1] == "anthracnose,1,2,0"
        assert len(lines) == 4
