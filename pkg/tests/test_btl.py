import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sparsepcm.btl import (
    PROB_CLAMP,
    BtlFitConfig,
    MleDoesNotExist,
    check_mle_exists,
    fit,
    gradient,
    log_likelihood,
    win_probability,
)
from sparsepcm.core import ComparisonSet, PcmError


def counts(n, rows):
    return ComparisonSet.from_counts(n, rows)


@st.composite
def count_sets(draw):
    n = draw(st.integers(2, 6))
    rows = []
    for a in range(n):
        for b in range(a + 1, n):
            if draw(st.booleans()):
                rows.append((a, b, draw(st.integers(0, 5)), draw(st.integers(0, 5))))
    if not rows:
        rows.append((0, 1, 1, 1))
    return counts(n, rows)


class TestLikelihood:
    def test_scalar_oracle(self):
        obs = counts(2, [(0, 1, 3, 1)])
        x = np.array([math.log(3), 0.0])
        assert log_likelihood(x, obs) == pytest.approx(3 * math.log(0.75) + math.log(0.25), rel=1e-12)
        assert log_likelihood(x, obs) == pytest.approx(-2.2493, abs=1e-4)

    def test_half(self):
        assert log_likelihood(np.zeros(2), counts(2, [(0, 1, 1, 0)])) == pytest.approx(math.log(0.5))

    def test_probability_values(self):
        assert win_probability(math.log(120)) == pytest.approx(120 / 121, rel=1e-12)
        assert win_probability(math.log(3)) == pytest.approx(0.75, rel=1e-12)

    def test_clamped(self):
        assert win_probability(1e4) == 1 - PROB_CLAMP
        assert win_probability(-1e4) == PROB_CLAMP

    def test_stable_at_large_gaps(self):
        obs = counts(2, [(0, 1, 1, 1)])
        val = log_likelihood(np.array([700.0, 0.0]), obs)
        assert np.isfinite(val) and val == pytest.approx(-700.0, rel=1e-12)

    def test_cardinal_rejected(self):
        with pytest.raises(PcmError):
            log_likelihood(np.zeros(2), ComparisonSet.from_edges(2, [(0, 1, 2.0)]))

    @given(count_sets(), st.floats(-10, 10))
    def test_translation_invariance(self, obs, c):
        x = np.random.default_rng(0).normal(size=obs.n)
        assert log_likelihood(x + c, obs) == pytest.approx(log_likelihood(x, obs), rel=1e-9, abs=1e-9)

    @given(count_sets(), st.floats(0.01, 0.99), st.integers(0, 1000))
    def test_concavity(self, obs, t, seed):
        rng = np.random.default_rng(seed)
        x, y = rng.normal(size=(2, obs.n)) * 2
        mid = log_likelihood(t * x + (1 - t) * y, obs)
        assert mid >= t * log_likelihood(x, obs) + (1 - t) * log_likelihood(y, obs) - 1e-9


class TestGradient:
    def test_hand_value(self):
        np.testing.assert_allclose(gradient(np.zeros(2), counts(2, [(0, 1, 3, 1)])), [1.0, -1.0])

    @given(count_sets(), st.integers(0, 1000))
    def test_sums_to_zero(self, obs, seed):
        x = np.random.default_rng(seed).normal(size=obs.n)
        assert abs(gradient(x, obs).sum()) < 1e-12

    @given(count_sets(), st.integers(0, 1000))
    @settings(max_examples=50)
    def test_finite_differences(self, obs, seed):
        x = np.random.default_rng(seed).normal(size=obs.n)
        h = 1e-6
        fd = np.array([
            (log_likelihood(x + h * e, obs) - log_likelihood(x - h * e, obs)) / (2 * h)
            for e in np.eye(obs.n)
        ])
        np.testing.assert_allclose(gradient(x, obs), fd, rtol=1e-5, atol=1e-7)


class TestFit:
    def test_two_item_closed_form(self):
        x = fit(counts(2, [(0, 1, 3, 1)])).scores
        assert x[0] - x[1] == pytest.approx(math.log(3), abs=1e-6)
        assert x.sum() == pytest.approx(0.0, abs=1e-12)

    @given(st.integers(1, 50), st.integers(1, 50))
    @settings(max_examples=30)
    def test_two_item_reproduces_frequencies(self, a, b):
        x = fit(counts(2, [(0, 1, a, b)])).scores
        assert win_probability(x[0] - x[1]) == pytest.approx(a / (a + b), abs=1e-8)

    def test_symmetric_counts_zero(self):
        obs = counts(4, [(0, 1, 2, 2), (1, 2, 5, 5), (2, 3, 1, 1), (0, 3, 3, 3)])
        np.testing.assert_allclose(fit(obs).scores, 0.0, atol=1e-9)

    def test_binarized_chain(self):
        probs = [0.75, 5 / 6, 2 / 3, 0.8]
        trials = 10_000
        rows = [(k, k + 1, round(p * trials), trials - round(p * trials)) for k, p in enumerate(probs)]
        x = fit(counts(5, rows)).scores
        np.testing.assert_allclose(-np.diff(x), np.log([3, 5, 2, 4]), atol=0.05)

    def test_gradient_tolerance_met(self):
        rng = np.random.default_rng(4)
        rows = [(a, b, int(rng.integers(1, 9)), int(rng.integers(1, 9)))
                for a in range(8) for b in range(a + 1, 8) if rng.random() < 0.6]
        obs = counts(8, rows)
        cfg = BtlFitConfig(grad_tol=1e-9)
        x = fit(obs, cfg).scores
        assert np.max(np.abs(gradient(x, obs))) <= 1e-9

    def test_fixed_step_converges_on_mild_instance(self):
        obs = counts(3, [(0, 1, 3, 2), (1, 2, 4, 3), (0, 2, 2, 2)])
        x_fixed = fit(obs, BtlFitConfig(step_rule="fixed", step_size=0.1)).scores
        np.testing.assert_allclose(x_fixed, fit(obs).scores, atol=1e-7)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(5)
        rows = [(a, b, int(rng.integers(1, 6)), int(rng.integers(1, 6)))
                for a in range(6) for b in range(a + 1, 6) if rng.random() < 0.7]
        obs = counts(6, rows)
        perm = rng.permutation(6)
        x = fit(obs).scores
        xp = fit(obs.relabel(perm)).scores
        np.testing.assert_allclose(xp[perm], x, atol=1e-7)

    def test_separable_names_item(self):
        obs = counts(3, [(0, 1, 3, 0), (1, 2, 2, 1)])
        with pytest.raises(MleDoesNotExist) as info:
            fit(obs)
        assert info.value.item == 0

    def test_separable_with_ridge(self):
        obs = counts(3, [(0, 1, 3, 0), (1, 2, 2, 1)])
        x = fit(obs, BtlFitConfig(l2_strength=0.1)).scores
        assert x[0] > x[1] > x[2]

    def test_disconnected_components_centered(self):
        obs = counts(4, [(0, 1, 3, 1), (2, 3, 1, 1)])
        x = fit(obs)
        np.testing.assert_allclose(x.group_means(), 0.0, atol=1e-12)
        assert x.scores[0] - x.scores[1] == pytest.approx(math.log(3), abs=1e-6)

    def test_strongly_connected_accepted(self):
        check_mle_exists(counts(3, [(0, 1, 1, 0), (1, 2, 1, 0), (2, 0, 1, 0)]))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            BtlFitConfig(grad_tol=0)
        with pytest.raises(ValueError):
            BtlFitConfig(l2_strength=-1)
