import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import pixel_loop_metrics
from polypseg.errors import DomainError, ShapeError
from polypseg.metrics import (
    METRIC_NAMES,
    ConfusionCounts,
    MetricSet,
    aggregate,
    confusion_counts,
    metric_set,
    score,
)

masks = arrays(np.uint8, st.tuples(st.integers(1, 12), st.integers(1, 12)), elements=st.integers(0, 1))


@st.composite
def mask_pairs(draw):
    shape = draw(st.tuples(st.integers(1, 12), st.integers(1, 12)))
    a = draw(arrays(np.uint8, shape, elements=st.integers(0, 1)))
    b = draw(arrays(np.uint8, shape, elements=st.integers(0, 1)))
    return a, b


counts = st.builds(
    ConfusionCounts,
    tp=st.integers(0, 10_000),
    fp=st.integers(0, 10_000),
    fn=st.integers(0, 10_000),
    tn=st.integers(0, 10_000),
).filter(lambda c: c.total > 0)


class TestConfusionCounts:
    def test_identical(self):
        assert confusion_counts(np.ones((2, 2)), np.ones((2, 2))) == ConfusionCounts(4, 0, 0, 0)

    def test_disjoint(self):
        assert confusion_counts(np.ones((2, 2)), np.zeros((2, 2))) == ConfusionCounts(0, 4, 0, 0)

    def test_enumerated_example(self):
        pred = [[1, 0], [1, 1]]
        truth = [[1, 1], [0, 1]]
        assert confusion_counts(np.array(pred), np.array(truth)) == ConfusionCounts(tp=2, fp=1, fn=1, tn=0)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            confusion_counts(np.ones((2, 2)), np.ones((2, 3)))

    def test_non_binary(self):
        with pytest.raises(DomainError):
            confusion_counts(np.array([[0, 2]]), np.array([[0, 1]]))

    def test_accepts_bool_and_torch(self):
        import torch

        c = confusion_counts(torch.tensor([[True, False]]), np.array([[1, 1]]))
        assert c == ConfusionCounts(1, 0, 1, 0)

    def test_negative_count_rejected(self):
        with pytest.raises(DomainError):
            ConfusionCounts(-1, 0, 0, 0)

    @given(mask_pairs())
    def test_counts_sum_to_pixels(self, pair):
        a, b = pair
        c = confusion_counts(a, b)
        assert c.total == a.size
        assert min(c.tp, c.fp, c.fn, c.tn) >= 0


class TestMetricSet:
    def test_perfect(self):
        m = metric_set(ConfusionCounts(4, 0, 0, 0))
        assert m.values() == (1.0,) * 6

    def test_hand_case_one(self):
        m = metric_set(ConfusionCounts(tp=2, fp=1, fn=1, tn=0))
        assert m.jaccard == pytest.approx(0.5, abs=1e-12)
        assert m.dsc == pytest.approx(2 / 3, abs=1e-12)
        assert m.precision == pytest.approx(2 / 3, abs=1e-12)
        assert m.recall == pytest.approx(2 / 3, abs=1e-12)
        assert m.accuracy == pytest.approx(0.5, abs=1e-12)
        assert m.f2 == pytest.approx(10 / 15, abs=1e-12)

    def test_hand_case_two(self):
        m = metric_set(ConfusionCounts(tp=1, fp=1, fn=0, tn=14))
        assert m.jaccard == pytest.approx(0.5, abs=1e-12)
        assert m.dsc == pytest.approx(2 / 3, abs=1e-12)
        assert m.precision == pytest.approx(0.5, abs=1e-12)
        assert m.recall == pytest.approx(1.0, abs=1e-12)
        assert m.accuracy == pytest.approx(0.9375, abs=1e-12)
        assert m.f2 == pytest.approx(5 / 6, abs=1e-12)

    def test_both_empty_is_perfect(self):
        m = metric_set(ConfusionCounts(0, 0, 0, 9))
        assert m.values() == (1.0,) * 6

    def test_empty_prediction_on_nonempty_truth(self):
        m = metric_set(ConfusionCounts(0, 0, 3, 6))
        assert m.precision == 0.0 and m.recall == 0.0 and m.jaccard == 0.0
        assert m.accuracy == pytest.approx(6 / 9)

    def test_zero_total_rejected(self):
        with pytest.raises(DomainError):
            metric_set(ConfusionCounts(0, 0, 0, 0))

    def test_out_of_range_rejected(self):
        with pytest.raises(DomainError):
            MetricSet(1.2, 0, 0, 0, 0, 0)

    def test_dict_roundtrip(self):
        m = metric_set(ConfusionCounts(3, 1, 2, 5))
        assert MetricSet.from_dict(m.as_dict()) == m
        assert tuple(m.as_dict()) == METRIC_NAMES

    @given(counts)
    def test_bounds(self, c):
        assert all(0.0 <= v <= 1.0 for v in metric_set(c).values())

    @given(counts)
    def test_dice_jaccard_identity(self, c):
        m = metric_set(c)
        assert m.dsc == pytest.approx(2 * m.jaccard / (1 + m.jaccard), abs=1e-12)

    @given(counts)
    def test_f2_matches_precision_recall_form(self, c):
        m = metric_set(c)
        if m.precision > 0 and m.recall > 0 and c.tp + c.fp + c.fn > 0:
            p, r = m.precision, m.recall
            assert m.f2 == pytest.approx(5 * p * r / (4 * p + r), abs=1e-12)

    @given(mask_pairs())
    def test_swap_symmetry(self, pair):
        a, b = pair
        assert score(a, b).precision == score(b, a).recall

    @given(mask_pairs())
    def test_accuracy_invariant_under_double_complement(self, pair):
        a, b = pair
        assert score(a, b).accuracy == score(1 - a, 1 - b).accuracy

    @settings(max_examples=200)
    @given(mask_pairs())
    def test_matches_pixel_loop_oracle(self, pair):
        a, b = pair
        m = score(a, b).as_dict()
        ref = pixel_loop_metrics(a, b)
        for name in METRIC_NAMES:
            assert m[name] == pytest.approx(ref[name], abs=1e-12)


class TestAggregate:
    def test_singleton(self):
        m = metric_set(ConfusionCounts(3, 1, 2, 5))
        assert aggregate([m]) == m

    def test_mean_of_two(self):
        a = MetricSet(0.2, 0, 0, 0, 0, 0)
        b = MetricSet(0.6, 0, 0, 0, 0, 0)
        assert aggregate([a, b]).jaccard == pytest.approx(0.4)

    def test_empty_rejected(self):
        with pytest.raises(DomainError):
            aggregate([])

    def test_against_independent_summation(self, rng):
        sets = []
        for _ in range(10):
            tp, fp, fn, tn = (int(v) for v in rng.integers(0, 50, 4))
            sets.append(metric_set(ConfusionCounts(tp, fp, fn, tn + 1)))
        agg = aggregate(sets)
        for name in METRIC_NAMES:
            ref = math.fsum(getattr(m, name) for m in sets) / len(sets)
            assert getattr(agg, name) == pytest.approx(ref, abs=1e-12)

    def test_generator_input(self):
        m = metric_set(ConfusionCounts(1, 0, 0, 1))
        assert aggregate(x for x in [m, m]) == m
