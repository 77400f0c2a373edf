import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gapfm.core import make_thresholds
from gapfm.metrics import (
    RankedJudgedList,
    UndefinedAggregateError,
    aggregate,
    ap_at_k,
    gap_exact,
    gp_at_n,
    gr_at_n,
    ndcg_at_k,
    precision_at_k,
)

import oracles

T2 = make_thresholds(2)
T5 = make_thresholds(5)


def L(*grades):
    return RankedJudgedList.from_grades(list(grades))


graded_lists = st.lists(st.integers(0, 5), min_size=1, max_size=30).filter(lambda g: any(g))


class TestRankedJudgedList:
    def test_from_scores_orders_by_rank(self):
        lst = RankedJudgedList.from_scores([10, 11, 12], [0.1, 0.9, 0.5], [1, 0, 3])
        assert lst.items.tolist() == [11, 12, 10]
        assert lst.grades.tolist() == [0, 3, 1]
        assert lst.num_judged == 2

    def test_negative_grade_rejected(self):
        with pytest.raises(ValueError):
            L(1, -1)


class TestGapExact:
    def test_ideal_two_grades(self):
        assert gap_exact(L(2, 1), T2) == pytest.approx(1.0, abs=1e-15)

    def test_worst_two_grades(self):
        assert gap_exact(L(1, 2), T2) == pytest.approx(0.7, abs=1e-15)

    def test_binary_unjudged_first(self):
        assert gap_exact(L(0, 1), make_thresholds(1)) == pytest.approx(0.5, abs=1e-15)

    def test_no_judged_is_undefined(self):
        assert gap_exact(L(0, 0, 0), T5) is None

    def test_cutoff_keeps_full_normaliser(self):
        lst = L(2, 0, 1)
        # top-1 only credits the grade-2 item, but Z still covers both judged items
        assert gap_exact(lst, T2, 1) == pytest.approx(1.0 / 1.25, abs=1e-15)
        assert gap_exact(lst, T2, 1) <= gap_exact(lst, T2)

    @settings(max_examples=200)
    @given(graded_lists, st.one_of(st.none(), st.integers(1, 30)))
    def test_matches_brute_force(self, grades, k):
        d = oracles.deltas_for(5)
        assert gap_exact(L(*grades), T5, k) == pytest.approx(oracles.gap_brute(grades, d, k), abs=1e-12)

    @settings(max_examples=200)
    @given(graded_lists)
    def test_bounded(self, grades):
        assert 0.0 <= gap_exact(L(*grades), T5) <= 1.0 + 1e-12

    @settings(max_examples=200)
    @given(graded_lists, st.data())
    def test_promoting_better_item_never_hurts(self, grades, data):
        if len(grades) < 2:
            return
        p = data.draw(st.integers(0, len(grades) - 2))
        if grades[p + 1] <= grades[p]:
            return
        swapped = list(grades)
        swapped[p], swapped[p + 1] = swapped[p + 1], swapped[p]
        assert gap_exact(L(*swapped), T5) >= gap_exact(L(*grades), T5) - 1e-12


class TestBinaryReduction:
    @settings(max_examples=200)
    @given(st.lists(st.integers(0, 1), min_size=1, max_size=50).filter(any), st.one_of(st.none(), st.integers(1, 50)))
    def test_equals_average_precision(self, rel, k):
        lst = L(*rel)
        t1 = make_thresholds(1)
        assert gap_exact(lst, t1, k) == pytest.approx(ap_at_k(lst, k), abs=1e-12)
        assert ap_at_k(lst, k) == pytest.approx(oracles.ap_brute(rel, k), abs=1e-12)


class TestNdcg:
    def test_single_judged_first(self):
        assert ndcg_at_k(L(3, 0, 0), 3) == 1.0

    def test_low_grade_first(self):
        expect = (1 + 3 / math.log2(3)) / (3 + 1 / math.log2(3))
        assert ndcg_at_k(L(1, 2), 2) == pytest.approx(expect, abs=1e-15)
        assert ndcg_at_k(L(1, 2), 2) == pytest.approx(0.7967075809905066, abs=1e-15)

    @given(graded_lists)
    def test_ideal_is_one(self, grades):
        assert ndcg_at_k(L(*sorted(grades, reverse=True)), 5) == pytest.approx(1.0, abs=1e-12)

    @settings(max_examples=200)
    @given(graded_lists, st.integers(1, 30))
    def test_matches_brute_force(self, grades, k):
        v = ndcg_at_k(L(*grades), k)
        assert 0.0 <= v <= 1.0 + 1e-12
        assert v == pytest.approx(oracles.ndcg_brute(grades, k), abs=1e-12)

    def test_undefined(self):
        assert ndcg_at_k(L(0, 0), 2) is None


class TestPrecision:
    def test_top_five(self):
        assert precision_at_k(L(5, 3, 5, 0, 1, 5), 5, 5) == pytest.approx(0.4)

    def test_all_top(self):
        assert precision_at_k(L(5, 5, 5), 3, 5) == 1.0

    def test_threshold_one(self):
        assert precision_at_k(L(2, 1, 4), 3, 1) == 1.0

    def test_short_list_counts_missing_as_zero(self):
        assert precision_at_k(L(5), 5, 5) == pytest.approx(0.2)

    def test_invalid_k(self):
        with pytest.raises(ValueError):
            precision_at_k(L(5), 0, 5)


class TestGradedPrecisionRecall:
    def test_gp_equal_grades_ideal(self):
        assert gp_at_n(L(3, 3, 3), T5, 3) == pytest.approx(1.0)

    def test_gp_low_grade_first(self):
        assert gp_at_n(L(1, 2), T2, 1) == pytest.approx(0.25, abs=1e-15)

    def test_gp_top_unjudged(self):
        assert gp_at_n(L(0, 2), T2, 1) == 0.0

    def test_gp_too_few_judged(self):
        assert gp_at_n(L(0, 2, 0), T2, 2) is None

    def test_gr_full(self):
        assert gr_at_n(L(2, 1, 3), T5, 3) == pytest.approx(1.0)

    def test_gr_zero_prefix(self):
        assert gr_at_n(L(2, 1), T2, 0) == 0.0

    def test_gr_top_one(self):
        assert gr_at_n(L(2, 1), T2, 1) == pytest.approx(0.8, abs=1e-15)

    @settings(max_examples=200)
    @given(graded_lists)
    def test_gr_nondecreasing(self, grades):
        vals = [gr_at_n(L(*grades), T5, n) for n in range(len(grades) + 1)]
        assert all(b >= a - 1e-15 for a, b in zip(vals, vals[1:]))
        assert vals[-1] == pytest.approx(1.0, abs=1e-12)

    @settings(max_examples=200)
    @given(graded_lists, st.integers(1, 30))
    def test_gp_bounded(self, grades, n):
        v = gp_at_n(L(*grades), T5, n)
        if v is not None:
            assert 0.0 <= v <= 1.0 + 1e-12


class TestAggregate:
    def test_mean(self):
        agg = aggregate([0.2, 0.4])
        assert agg.mean == pytest.approx(0.3)
        assert (agg.count, agg.skipped) == (2, 0)

    def test_skip(self):
        agg = aggregate([0.5, None])
        assert agg.mean == 0.5
        assert (agg.count, agg.skipped) == (1, 1)

    def test_all_skipped(self):
        with pytest.raises(UndefinedAggregateError):
            aggregate([None, None])

    def test_empty(self):
        with pytest.raises(UndefinedAggregateError):
            aggregate([])


class TestOracleEquivalence:
    """Exhaustive check over small lists: exact GAP matches the term-by-term sums."""

    def test_all_small_lists(self):
        count = 0
        for y_max in (1, 2, 3):
            t = make_thresholds(y_max)
            d = oracles.deltas_for(y_max)
            rng = np.random.default_rng(y_max)
            for n in range(1, 8):
                for _ in range(40):
                    grades = rng.integers(0, y_max + 1, size=n).tolist()
                    if not any(grades):
                        continue
                    assert gap_exact(L(*grades), t) == pytest.approx(oracles.gap_brute(grades, d), abs=1e-12)
                    count += 1
        assert count > 500
