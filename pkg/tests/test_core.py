import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sparsepcm.core import (
    RANDOM_INDEX,
    ComparisonSet,
    ConvergenceError,
    DensePcm,
    PcmError,
    ResourceGuardError,
    ScoreVector,
    complete_from_scores,
    consistency_report,
    max_triangle_residual,
    principal_eigen,
    reciprocal_projection,
    triangle_residuals,
    validate,
    validate_comparisons,
)

scores = arrays(np.float64, st.integers(2, 8), elements=st.floats(-5, 5))


class TestComparisonSet:
    def test_rejects_self_loop(self):
        with pytest.raises(PcmError, match="self"):
            ComparisonSet.from_edges(3, [(1, 1, 2.0)])

    def test_rejects_out_of_range_id(self):
        with pytest.raises(PcmError, match="node ids"):
            ComparisonSet.from_edges(2, [(0, 2, 2.0)])

    def test_rejects_duplicate_ordered_pair(self):
        with pytest.raises(PcmError, match="duplicate"):
            ComparisonSet.from_edges(3, [(0, 1, 2.0), (0, 1, 3.0)])

    def test_both_directions_allowed(self):
        obs = ComparisonSet.from_edges(2, [(0, 1, 2.0), (1, 0, 0.5)])
        assert len(obs) == 2

    @pytest.mark.parametrize("bad", [0.0, -1.0, math.inf, math.nan])
    def test_cardinal_values_positive_finite(self, bad):
        with pytest.raises(PcmError):
            ComparisonSet.from_edges(2, [(0, 1, bad)])

    def test_counts_must_be_nonnegative_integers(self):
        with pytest.raises(PcmError):
            ComparisonSet.from_edges(2, [(0, 1, 1.5)], mode="counts")
        ComparisonSet.from_edges(2, [(0, 1, 0.0)], mode="counts")

    def test_from_counts_aggregates_and_drops_zeros(self):
        obs = ComparisonSet.from_counts(3, [(0, 1, 2, 1), (1, 0, 1, 0), (1, 2, 0, 4)])
        assert sorted(obs.edges) == [(0, 1, 2.0), (1, 0, 2.0), (2, 1, 4.0)]

    def test_relabel(self):
        obs = ComparisonSet.from_edges(3, [(0, 1, 2.0)]).relabel([2, 0, 1])
        assert obs.edges == [(2, 0, 2.0)]


class TestDensePcm:
    def test_diagonal_forced_to_one(self):
        assert np.all(np.diag(DensePcm(np.full((3, 3), 2.0)).entries) == 1.0)

    def test_non_square_rejected(self):
        with pytest.raises(PcmError):
            DensePcm(np.ones((2, 3)))


class TestValidate:
    def test_all_ones_valid(self):
        assert validate(DensePcm(np.ones((3, 3)))).valid

    def test_matrix_b_valid(self, matrix_b):
        assert validate(matrix_b).valid

    def test_reciprocity_violation_located(self, matrix_b):
        bad = matrix_b.entries.copy()
        bad[1, 0] = 0.5
        report = validate(DensePcm(bad))
        assert [(v.kind, v.i, v.j) for v in report.violations] == [("reciprocity", 0, 1)]

    def test_positivity_violation(self):
        report = validate(DensePcm(np.array([[1.0, -1.0], [-1.0, 1.0]])))
        assert {v.kind for v in report.violations} >= {"positivity"}

    def test_rounded_entries_need_looser_tol(self):
        pcm = DensePcm(np.array([[1, 3], [0.33, 1]]))
        assert not validate(pcm).valid
        assert validate(pcm, tol=0.02).valid

    def test_sparse_reciprocity(self):
        obs = ComparisonSet.from_edges(2, [(0, 1, 3.0), (1, 0, 0.5)])
        assert not validate_comparisons(obs).valid
        obs = ComparisonSet.from_edges(2, [(0, 1, 4.0), (1, 0, 0.25)])
        assert validate_comparisons(obs).valid

    @given(scores)
    def test_accepts_completions(self, x):
        assert validate(complete_from_scores(ScoreVector(x))).valid


class TestPrincipalEigen:
    def test_matrix_b(self, matrix_b):
        lam, w = principal_eigen(matrix_b)
        assert lam == pytest.approx(3.0183, abs=1e-3)
        np.testing.assert_allclose(w, [0.6250, 0.2385, 0.1365], atol=1e-3)

    def test_consistent_matrix(self, matrix_a):
        lam, w = principal_eigen(matrix_a)
        assert lam == pytest.approx(3.0, abs=1e-9)
        np.testing.assert_allclose(w, np.array([2, 1, 0.5]) / 3.5, atol=1e-9)

    def test_two_by_two_closed_form(self):
        # eigenvalues of [[1, a], [1/a, 1]] are 0 and 2; eigenvector (a, 1)
        lam, w = principal_eigen(DensePcm(np.array([[1, 4], [0.25, 1]])))
        assert lam == pytest.approx(2.0, abs=1e-12)
        np.testing.assert_allclose(w, [0.8, 0.2], atol=1e-12)

    def test_non_convergence_reports_residual(self, matrix_b):
        with pytest.raises(ConvergenceError) as info:
            principal_eigen(matrix_b, max_iter=1, tol=1e-15)
        assert info.value.residual > 0

    def test_matches_numpy_eigensolver(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            n = int(rng.integers(3, 9))
            t = rng.normal(size=(n, n))
            a = np.exp(np.triu(t, 1) - np.triu(t, 1).T)
            lam, w = principal_eigen(DensePcm(a))
            vals, vecs = np.linalg.eig(a)
            k = np.argmax(vals.real)
            ref = np.abs(vecs[:, k].real)
            assert lam == pytest.approx(vals[k].real, rel=1e-9)
            np.testing.assert_allclose(w, ref / ref.sum(), atol=1e-8)

    @given(arrays(np.float64, st.integers(2, 7), elements=st.floats(-3, 3)), st.floats(0.1, 10))
    @settings(max_examples=50)
    def test_weight_scale_invariance(self, x, c):
        w_true = np.exp(x)
        a = DensePcm((c * w_true)[:, None] / (c * w_true)[None, :])
        _, w = principal_eigen(a)
        np.testing.assert_allclose(w, w_true / w_true.sum(), atol=1e-8)


class TestConsistencyReport:
    def test_matrix_b(self, matrix_b):
        rep = consistency_report(matrix_b)
        assert rep.ci == pytest.approx(0.00915, abs=1e-3)
        assert rep.cr == pytest.approx(0.0158, abs=1e-3)
        assert rep.ri_used == 0.58
        assert rep.lambda_max >= 3 - 1e-9

    def test_consistent(self, matrix_a):
        rep = consistency_report(matrix_a)
        assert rep.ci == pytest.approx(0.0, abs=1e-9)
        assert rep.cr == pytest.approx(0.0, abs=1e-9)

    def test_two_by_two_always_consistent(self):
        assert consistency_report(DensePcm(np.array([[1, 7], [1 / 7, 1]]))).ci == 0.0

    def test_cr_unavailable_above_table(self):
        x = ScoreVector(np.linspace(-1, 1, 16))
        rep = consistency_report(complete_from_scores(x))
        assert rep.cr is None and rep.ri_used is None
        assert rep.ci == pytest.approx(0.0, abs=1e-9)

    def test_random_index_table(self):
        assert [RANDOM_INDEX[n] for n in range(1, 16)] == [
            0.0, 0.0, 0.58, 0.90, 1.12, 1.24, 1.32, 1.41, 1.45, 1.49, 1.51, 1.48, 1.56, 1.57, 1.59
        ]

    @given(arrays(np.float64, st.integers(3, 12), elements=st.floats(-5, 5)))
    @settings(max_examples=50)
    def test_ci_zero_for_completions(self, x):
        assert consistency_report(complete_from_scores(ScoreVector(x))).ci == pytest.approx(0.0, abs=1e-6)


class TestCompletion:
    def test_example_chain_first_row(self):
        x = ScoreVector(np.log([120, 40, 8, 4, 1]) - np.log([120, 40, 8, 4, 1]).mean())
        np.testing.assert_allclose(complete_from_scores(x).entries[0], [1, 3, 15, 30, 120], atol=1e-6)

    def test_zero_scores(self):
        np.testing.assert_array_equal(complete_from_scores(ScoreVector(np.zeros(4))).entries, np.ones((4, 4)))

    def test_single_pair(self):
        a = complete_from_scores(ScoreVector([math.log(3), 0.0])).entries
        np.testing.assert_allclose(a, [[1, 3], [1 / 3, 1]], rtol=1e-15)

    def test_overflow_names_pair(self):
        with pytest.raises(OverflowError, match="x_1 - x_0"):
            complete_from_scores(ScoreVector([-400.0, 400.0]))

    def test_size_guard(self):
        with pytest.raises(ResourceGuardError):
            complete_from_scores(ScoreVector(np.zeros(11)), max_dense_n=10)

    @given(scores)
    def test_exactly_reciprocal(self, x):
        a = complete_from_scores(ScoreVector(x)).entries
        assert np.all(a * a.T == pytest.approx(1.0, rel=1e-15))


class TestReciprocalProjection:
    def test_hand_value(self):
        out = reciprocal_projection(DensePcm(np.array([[1, 2], [0.4, 1]]))).entries
        assert out[0, 1] == pytest.approx(math.sqrt(5), rel=1e-12)
        assert out[1, 0] == pytest.approx(1 / math.sqrt(5), rel=1e-12)

    @given(st.floats(1e-3, 1e3))
    def test_fixed_point(self, k):
        out = reciprocal_projection(DensePcm(np.array([[1, k], [1 / k, 1]]))).entries
        assert out[0, 1] == pytest.approx(k, rel=1e-12)

    @given(arrays(np.float64, st.tuples(st.integers(2, 6), st.just(6)), elements=st.floats(-3, 3)))
    def test_idempotent(self, t):
        n = t.shape[0]
        a = DensePcm(np.exp(t[:, :n]))
        once = reciprocal_projection(a)
        twice = reciprocal_projection(once)
        np.testing.assert_allclose(np.log(twice.entries), np.log(once.entries), atol=1e-12)
        assert validate(once).valid

    def test_nonpositive_rejected(self):
        with pytest.raises(PcmError):
            reciprocal_projection(DensePcm(np.array([[1, 0], [1, 1]])))


class TestTriangleResiduals:
    def test_matrix_b(self, matrix_b):
        assert triangle_residuals(matrix_b, [(0, 1, 2)])[0] == pytest.approx(math.log(1.5), abs=1e-12)

    def test_consistent_is_zero(self, matrix_a):
        triples = list(itertools.permutations(range(3), 3))
        assert np.all(triangle_residuals(matrix_a, triples) < 1e-15)

    def test_example_completion_all_triples_zero(self):
        x = ScoreVector(np.log([120, 40, 8, 4, 1]))
        pcm = complete_from_scores(x)
        res = triangle_residuals(pcm, list(itertools.combinations(range(5), 3)))
        assert len(res) == 10 and np.all(res < 1e-12)

    def test_max_residual_matches_brute_force(self):
        rng = np.random.default_rng(0)
        t = rng.normal(size=(6, 6))
        pcm = reciprocal_projection(DensePcm(np.exp(t)))
        brute = max(triangle_residuals(pcm, list(itertools.permutations(range(6), 3))))
        assert max_triangle_residual(pcm) == pytest.approx(brute, abs=1e-12)
