import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gustcast.evaluation import (
    MetricReport, ZeroTargetError, betainc, nd, nrmse, paired_t_test, per_batch_report, precision_recall_f1,
    student_t_cdf, student_t_sf2,
)
from oracles import nd_loops, nrmse_loops, paired_t_loops, t_two_sided_p_mp


def fixed_pairs():
    """25 reproducible (a, b) samples of assorted sizes and effect strengths."""
    rng = np.random.default_rng(2024)
    pairs = [([1, 2, 3, 4], [2, 2, 4, 4])]
    for k in range(24):
        n = int(rng.integers(2, 130))
        a = rng.normal(0.3, 0.1, n)
        b = a + rng.normal(0.02 * (k % 5 - 2), 0.05 + 0.01 * k, n)
        pairs.append((a.tolist(), b.tolist()))
    return pairs


class TestNd:
    def test_identical(self):
        assert nd([1.0, 2.0], [1.0, 2.0]) == 0.0

    def test_worked_example(self):
        assert nd([1, 2, 3, 4], [2, 2, 2, 4]) == pytest.approx(0.2, abs=1e-12)

    def test_scale_invariance(self):
        rng = np.random.default_rng(0)
        y, p = rng.uniform(size=24), rng.uniform(size=24)
        assert nd(3.7 * y, 3.7 * p) == pytest.approx(nd(y, p), rel=1e-12)

    def test_all_zero_targets(self):
        with pytest.raises(ZeroTargetError):
            nd([0.0, 0.0], [1.0, 0.0])

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            nd([1.0], [1.0, 2.0])

    @settings(max_examples=50)
    @given(st.lists(st.floats(0.01, 10), min_size=1, max_size=30), st.one_of(st.just(0.0), st.floats(1e-6, 1), st.floats(-1, -1e-6)))
    def test_zero_iff_equal(self, y, shift):
        y = np.array(y)
        assert (nd(y, y + shift) == 0) == (shift == 0)


class TestNrmse:
    def test_identical(self):
        assert nrmse([1.0, 2.0], [1.0, 2.0]) == 0.0

    def test_worked_example(self):
        assert nrmse([1, 2, 3, 4], [2, 2, 2, 4]) == pytest.approx(math.sqrt(0.5) / 2.5, abs=1e-12)
        assert nrmse([1, 2, 3, 4], [2, 2, 2, 4]) == pytest.approx(0.28284, abs=1e-5)

    def test_scale_invariance(self):
        rng = np.random.default_rng(1)
        y, p = rng.uniform(size=24), rng.uniform(size=24)
        assert nrmse(0.2 * y, 0.2 * p) == pytest.approx(nrmse(y, p), rel=1e-12)

    def test_all_zero_targets(self):
        with pytest.raises(ZeroTargetError):
            nrmse([0.0], [1.0])

    @settings(max_examples=30)
    @given(st.lists(st.floats(-5, 5), min_size=1, max_size=20).filter(lambda v: any(v)))
    def test_non_negative(self, y):
        assert nrmse(y, np.zeros(len(y))) >= 0

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(5)
        for _ in range(50):
            n = int(rng.integers(1, 50))
            y, p = rng.uniform(-1, 2, n), rng.uniform(-1, 2, n)
            assert abs(nd(y, p) - nd_loops(y, p)) < 1e-9
            assert abs(nrmse(y, p) - nrmse_loops(y, p)) < 1e-9


class TestPerBatchReport:
    def test_identical_batches(self):
        y = np.tile(np.linspace(0.1, 1, 24), (5, 1))
        p = y + 0.05
        r = per_batch_report(p, y)
        assert r.avg_nd == pytest.approx(nd(y[0], p[0]))
        assert len(r.per_batch_nd) == 5

    def test_mean_of_two(self):
        y = np.ones((2, 4))
        p = np.array([[1.0] * 4, [1.4] * 4])
        r = per_batch_report(p, y)
        assert r.avg_nd == pytest.approx(0.2)
        assert r.avg_nd == np.mean(r.per_batch_nd) and r.avg_nrmse == np.mean(r.per_batch_nrmse)

    def test_zero_batch_excluded_and_counted(self):
        y = np.ones((3, 4))
        y[1] = 0
        with pytest.warns(RuntimeWarning, match="excluded"):
            r = per_batch_report(y + 0.1, y)
        assert r.excluded == 1
        np.testing.assert_array_equal(r.batch_index, [0, 2])

    def test_round_trip_through_rows(self):
        rng = np.random.default_rng(0)
        y, p = rng.uniform(0.1, 1, (6, 24)), rng.uniform(0, 1, (6, 24))
        r = per_batch_report(p, y, "gbm", 3, "global")
        back = MetricReport.from_rows(r.rows(), 6)
        np.testing.assert_array_equal(back.per_batch_nd, r.per_batch_nd)
        assert (back.avg_nd, back.avg_nrmse, back.model, back.farm, back.mode) == (
            r.avg_nd, r.avg_nrmse, "gbm", 3, "global")
        assert set(r.rows()[0]) == {"farm", "model", "mode", "batch_index", "nd", "nrmse"}

    def test_entries_non_negative(self):
        rng = np.random.default_rng(2)
        r = per_batch_report(rng.normal(size=(10, 24)), rng.uniform(0.1, 1, (10, 24)))
        assert (r.per_batch_nd >= 0).all() and (r.per_batch_nrmse >= 0).all()


class TestIncompleteBeta:
    @pytest.mark.parametrize("a, b, x", [(0.5, 0.5, 0.3), (2.5, 0.5, 0.9), (30, 0.5, 0.99), (1, 1, 0.25),
                                         (60, 0.5, 0.5), (0.5, 7, 0.01), (100.5, 0.5, 0.999)])
    def test_against_mpmath(self, a, b, x):
        ref = float(mpmath.betainc(a, b, 0, x, regularized=True))
        assert betainc(a, b, x) == pytest.approx(ref, rel=1e-12, abs=1e-15)

    def test_uniform_case_is_identity(self):
        for x in np.linspace(0, 1, 11):
            assert betainc(1.0, 1.0, x) == pytest.approx(x, abs=1e-14)

    def test_domain(self):
        with pytest.raises(ValueError):
            betainc(1, 1, 1.5)
        with pytest.raises(ValueError):
            betainc(0, 1, 0.5)


class TestStudentT:
    @pytest.mark.parametrize("df", [1, 2, 3, 5, 10, 30, 119, 1000])
    def test_cdf_at_zero_is_half(self, df):
        assert student_t_cdf(0.0, df) == 0.5

    @pytest.mark.parametrize("df", [1, 3, 17])
    def test_monotone(self, df):
        ts = np.linspace(-30, 30, 601)
        vals = [student_t_cdf(t, df) for t in ts]
        assert np.all(np.diff(vals) >= 0)

    def test_cauchy_closed_form(self):
        for t in (-3.0, -0.4, 0.7, 12.0):
            assert student_t_cdf(t, 1) == pytest.approx(0.5 + math.atan(t) / math.pi, abs=1e-13)

    def test_symmetry(self):
        for t in (0.3, 1.9, 4.4):
            assert student_t_cdf(t, 7) + student_t_cdf(-t, 7) == pytest.approx(1.0, abs=1e-15)

    def test_two_sided_tail(self):
        assert student_t_sf2(0.0, 4) == 1.0
        assert student_t_sf2(float("inf"), 4) == 0.0


class TestPairedTTest:
    def test_worked_example(self):
        r = paired_t_test([1, 2, 3, 4], [2, 2, 4, 4])
        assert r.t_statistic == pytest.approx(-1.7320508, abs=1e-7)
        assert r.degrees_of_freedom == 3 and r.n == 4 and r.mean_difference == -0.5
        assert r.p_value == pytest.approx(0.18169, abs=1e-5)

    def test_degenerate(self):
        r = paired_t_test([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
        assert r.degenerate and math.isnan(r.p_value) and not r.significant()
        assert paired_t_test([2.0, 3.0], [1.0, 2.0]).degenerate

    def test_swap_symmetry(self):
        for a, b in fixed_pairs():
            x, y = paired_t_test(a, b), paired_t_test(b, a)
            assert y.t_statistic == -x.t_statistic
            assert abs(y.p_value - x.p_value) <= 1e-12

    def test_oracle_table(self):
        for a, b in fixed_pairs():
            r = paired_t_test(a, b)
            t, df = paired_t_loops(a, b)
            assert r.t_statistic == pytest.approx(t, rel=1e-10)
            assert abs(r.p_value - t_two_sided_p_mp(t, df)) < 1e-6

    def test_significance_rule(self):
        rng = np.random.default_rng(0)
        a = rng.normal(size=120)
        strong = paired_t_test(a, a - 0.5 + 0.1 * rng.normal(size=120))
        weak = paired_t_test(a, a + 0.1 * rng.normal(size=120))
        assert strong.significant() and strong.p_value < 0.05
        assert weak.significant() == (weak.p_value < 0.05)

    def test_bad_input(self):
        with pytest.raises(ValueError):
            paired_t_test([1.0], [2.0])
        with pytest.raises(ValueError):
            paired_t_test([1.0, 2.0], [1.0])


class TestClassification:
    def test_perfect(self):
        s = precision_recall_f1([1, 0, 1], [1, 0, 1])
        assert (s.precision, s.recall, s.f1) == (1.0, 1.0, 1.0) and not s.flags

    def test_no_predicted_positives(self):
        s = precision_recall_f1([1, 0, 1], [0, 0, 0])
        assert "precision" in s.flags and s.recall == 0.0 and s.f1 == 0.0

    def test_worked_counts(self):
        labels = [1, 1, 1, 0, 0]
        preds = [1, 1, 0, 1, 0]  # TP=2, FN=1, FP=1
        s = precision_recall_f1(labels, preds)
        assert s.precision == pytest.approx(2 / 3) and s.recall == pytest.approx(2 / 3)
        assert s.f1 == pytest.approx(2 / 3)

    def test_weights(self):
        s = precision_recall_f1([1, 0], [1, 1], weights=[5.0, 1.0])
        assert s.precision == pytest.approx(5 / 6)
