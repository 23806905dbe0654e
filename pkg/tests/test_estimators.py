import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from equivmd.distributions import MvnParams, RngSeed, sample_mvn
from equivmd.errors import (
    DimensionMismatchError,
    DomainError,
    NotSpdError,
    UnequalSampleSizesError,
    WeightError,
)
from equivmd.estimators import (
    corrected_difference,
    diff_statistic,
    j_scale,
    j_squared,
    leave_one_out,
    mahalanobis_sq,
    margin_hat,
    paired_diff_statistic,
    pooled_stats,
    resampling_form_statistic,
)

# exact rational values of D' Sigma^-1 D and E' Sigma^-1 E (see test_linalg)
G1_MARGIN, G1_POWER = 678700 / 239619, 434368 / 239619


def _pair(rng, n_t=15, n_r=12, p=3):
    return rng.normal(size=(n_t, p)) * [1, 2, 3], rng.normal(size=(n_r, p)) * [1, 2, 3] + 0.5


def _affine(rng, p):
    return rng.normal(size=(p, p)) + 2 * np.eye(p), rng.normal(size=p) * 10


class TestPooledStats:
    def test_definition(self, rng):
        xt, xr = _pair(rng)
        s = pooled_stats(xt, xr)
        expected = (14 * np.cov(xt.T) + 11 * np.cov(xr.T)) / 25
        np.testing.assert_allclose(s.pooled_cov, expected, rtol=1e-13)
        assert (s.n_t, s.n_r, s.p, s.n) == (15, 12, 3, 27)

    def test_equal_sizes(self, rng):
        xt, xr = _pair(rng, 10, 10)
        s = pooled_stats(xt, xr)
        np.testing.assert_allclose(s.pooled_cov, (np.cov(xt.T) + np.cov(xr.T)) / 2, rtol=1e-13)

    def test_translation(self, rng):
        xr = rng.normal(size=(10, 3))
        c = np.array([1.5, -2.0, 4.0])
        s = pooled_stats(xr + c, xr)
        np.testing.assert_allclose(s.mean_t - s.mean_r, c, atol=1e-14)

    def test_consistency(self, rng):
        n = 10**5
        s = pooled_stats(rng.normal(size=(n, 3)) + 5, rng.normal(size=(n, 3)) - 5)
        assert np.max(np.abs(s.pooled_cov - np.eye(3))) < 5 / math.sqrt(n)

    def test_errors(self, rng):
        with pytest.raises(DimensionMismatchError):
            pooled_stats(rng.normal(size=(5, 3)), rng.normal(size=(5, 2)))
        with pytest.raises(DomainError, match="at least 2 observations"):
            pooled_stats(rng.normal(size=(1, 3)), rng.normal(size=(5, 3)))
        with pytest.raises(NotSpdError):
            pooled_stats(rng.normal(size=(2, 4)), rng.normal(size=(2, 4)))


class TestDistanceAndMargin:
    def test_zero_difference(self, rng):
        x = rng.normal(size=(8, 3))
        assert mahalanobis_sq(pooled_stats(x, x)) == 0.0

    def test_identity_covariance(self):
        # constructed so that the pooled covariance is exactly the identity
        base = np.array([[1.0, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]]) * math.sqrt(2.5)
        s = pooled_stats(base + [1.0, 2.0, 3.0], base)
        np.testing.assert_allclose(s.pooled_cov, np.eye(3), atol=1e-14)
        assert mahalanobis_sq(s) == pytest.approx(14.0, rel=1e-13)
        assert margin_hat(s, [10, 10, 10]) == pytest.approx(300.0, rel=1e-13)
        assert margin_hat(s, [0, 0, 0]) == 0.0

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), p=st.integers(2, 5))
    def test_affine_invariance(self, seed, p):
        r = np.random.default_rng(seed)
        xt, xr = r.normal(size=(12, p)), r.normal(size=(14, p)) + 0.3
        d = r.normal(size=p)
        a, b = _affine(r, p)
        s0 = pooled_stats(xt, xr)
        s1 = pooled_stats(xt @ a.T + b, xr @ a.T + b)
        assert mahalanobis_sq(s1) == pytest.approx(mahalanobis_sq(s0), rel=1e-8)
        assert margin_hat(s1, a @ d) == pytest.approx(margin_hat(s0, d), rel=1e-8)

    def test_margin_consistency(self, group1):
        par = MvnParams(group1.mu1, group1.sigma)
        n = 10**5
        s = pooled_stats(sample_mvn(par, n, RngSeed(1)), sample_mvn(par, n, RngSeed(2)))
        assert margin_hat(s, group1.d_margin) == pytest.approx(G1_MARGIN, rel=0.02)


class TestJSquared:
    def test_scaling(self, rng):
        xt, xr = _pair(rng, 12, 12)
        s = pooled_stats(xt, xr)
        assert j_squared(s, 0.0) == 0.0
        assert j_scale(12, 12, 3) == pytest.approx(20 / (22 * 3) * 6)
        assert j_squared(s, 2.0) == pytest.approx(2 * j_squared(s, 1.0))

    def test_dof_domain(self):
        with pytest.raises(DomainError):
            j_scale(2, 2, 3)

    @pytest.mark.slow
    def test_null_distribution_is_central_f(self):
        par = MvnParams(np.zeros(3), np.eye(3))
        reps = 10**5
        x = sample_mvn(par, 24 * reps, RngSeed(99)).reshape(reps, 24, 3)
        js = np.array([j_squared(s, mahalanobis_sq(s)) for s in (pooled_stats(b[:12], b[12:]) for b in x)])
        assert stats.kstest(js, stats.f(3, 20).cdf).statistic < 0.01


class TestDiffStatistic:
    def test_boundary_identity(self, rng):
        xr = rng.normal(size=(10, 3))
        d = np.array([1.0, -2.0, 0.5])
        st_ = diff_statistic(xr + d, xr, d)
        assert st_.a_hat == pytest.approx(0.0, abs=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), n_t=st.integers(4, 30), n_r=st.integers(4, 30))
    def test_internal_consistency(self, seed, n_t, n_r):
        r = np.random.default_rng(seed)
        xt, xr = r.normal(size=(n_t, 3)), r.normal(size=(n_r, 3))
        d = r.normal(size=3)
        s = diff_statistic(xt, xr, d)
        n = n_t + n_r
        assert s.a_hat == s.d_m_sq - s.margin_sq
        if n - 3 - 3 > 0:
            assert not s.degenerate_correction
            assert s.a_hat_bc == pytest.approx((n - 6) / (n - 2) * s.a_hat - 3 * (1 / n_t + 1 / n_r), rel=1e-14, abs=1e-14)
            if s.a_hat >= 0:
                assert s.a_hat_bc < s.a_hat
        assert s.j_sq == pytest.approx(j_scale(n_t, n_r, 3) * s.d_m_sq, rel=1e-14)
        assert s.d_m_sq_bc - s.margin_sq_bc == pytest.approx(s.a_hat_bc, abs=1e-12)

    def test_degenerate_correction_flag(self, rng):
        s = diff_statistic(rng.normal(size=(3, 3)), rng.normal(size=(3, 3)), np.ones(3))
        assert s.degenerate_correction and s.a_hat_bc == s.a_hat

    def test_corrected_difference_vectorized(self):
        out = corrected_difference(np.array([0.0, 1.0]), 12, 12, 3)
        np.testing.assert_allclose(out, [-0.5, 18 / 22 - 0.5])

    def test_anderson_bias(self, group1):
        """Mean squared distance under equal means, against the expectation formula."""
        par = MvnParams(group1.mu1, group1.sigma)
        reps = 20_000
        x = sample_mvn(par, 24 * reps, RngSeed(5)).reshape(reps, 24, 3)
        dm = np.array([mahalanobis_sq(pooled_stats(b[:12], b[12:])) for b in x])
        expected = (22 / 18) * 3 * (1 / 12 + 1 / 12)
        se = dm.std() / math.sqrt(reps)
        assert abs(dm.mean() - expected) < 4 * se
        bc = (18 / 22) * dm - 0.5
        assert abs(bc.mean()) < 4 * bc.std() / math.sqrt(reps)


class TestLeaveOneOut:
    def test_matches_direct_recomputation(self, rng):
        xt, xr = _pair(rng, 9, 7)
        d = np.array([1.0, 2.0, 3.0])
        dm, mg, nt, nr = leave_one_out(xt, xr, d)
        for i in range(16):
            if i < 9:
                s = pooled_stats(np.delete(xt, i, 0), xr)
            else:
                s = pooled_stats(xt, np.delete(xr, i - 9, 0))
            assert dm[i] == pytest.approx(mahalanobis_sq(s), rel=1e-10)
            assert mg[i] == pytest.approx(margin_hat(s, d), rel=1e-10)
            assert (nt[i], nr[i]) == (s.n_t, s.n_r)


class TestPairedStatistic:
    def test_definition(self, rng):
        xt, xr = _pair(rng, 10, 10)
        d = np.ones(3)
        x = xt - xr
        s_c = 0.5 * np.cov(x.T)
        xbar = x.mean(axis=0)
        inv = np.linalg.inv(s_c)
        assert paired_diff_statistic(xt, xr, d) == pytest.approx(xbar @ inv @ xbar - d @ inv @ d, rel=1e-10)

    def test_boundary_identity(self, rng):
        xr = rng.normal(size=(10, 3))
        xt = xr + rng.normal(size=(10, 3))
        d = (xt - xr).mean(axis=0)
        assert paired_diff_statistic(xt, xr, d) == pytest.approx(0.0, abs=1e-12)

    def test_identical_differences(self, rng):
        xr = rng.normal(size=(10, 3))
        with pytest.raises(NotSpdError):
            paired_diff_statistic(xr + 1.0, xr, np.ones(3))

    def test_unequal_sizes(self, rng):
        with pytest.raises(UnequalSampleSizesError):
            paired_diff_statistic(rng.normal(size=(5, 2)), rng.normal(size=(6, 2)), np.ones(2))

    def test_consistency(self, group1):
        par_r = MvnParams(group1.mu1, group1.sigma)
        par_t = MvnParams(group1.mu1 + 8.0, group1.sigma)
        n = 10**5
        v = paired_diff_statistic(sample_mvn(par_t, n, RngSeed(3)), sample_mvn(par_r, n, RngSeed(4)), group1.d_margin)
        assert v == pytest.approx(G1_POWER - G1_MARGIN, rel=0.02)


class TestResamplingForm:
    def test_uniform_weights_are_plug_in(self, rng):
        xt, xr = _pair(rng, 10, 10)
        x = xt - xr
        d = np.array([0.5, 1, 2])
        w = np.full(10, 0.1)
        xbar = x.mean(axis=0)
        inv = np.linalg.inv(0.5 * np.cov(x.T, bias=True))
        assert resampling_form_statistic(x, w, d) == pytest.approx(xbar @ inv @ xbar - d @ inv @ d, rel=1e-10)
        # the plug-in covariance is (n-1)/n times the unbiased one
        inv_u = np.linalg.inv(0.5 * np.cov(x.T))
        unbiased = xbar @ inv_u @ xbar - d @ inv_u @ d
        assert resampling_form_statistic(x, w, d) == pytest.approx(unbiased * 10 / 9, rel=1e-10)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1))
    def test_exchangeable(self, seed):
        r = np.random.default_rng(seed)
        x = r.normal(size=(12, 3))
        w = r.dirichlet(np.ones(12))
        perm = r.permutation(12)
        d = np.ones(3)
        assert resampling_form_statistic(x[perm], w[perm], d) == pytest.approx(
            resampling_form_statistic(x, w, d), rel=1e-10
        )

    def test_collapsing_weights(self, rng):
        x = rng.normal(size=(10, 3))
        w = np.full(10, 1e-15)
        w[0] = 1 - w[1:].sum()
        with pytest.raises(NotSpdError):
            resampling_form_statistic(x, w, np.ones(3))

    def test_weight_validation(self, rng):
        x = rng.normal(size=(10, 3))
        with pytest.raises(WeightError):
            resampling_form_statistic(x, np.full(9, 1 / 9), np.ones(3))
        with pytest.raises(WeightError):
            resampling_form_statistic(x, np.full(10, 0.2), np.ones(3))
        w = np.full(10, 0.1)
        w[0], w[1] = -0.1, 0.3
        with pytest.raises(WeightError):
            resampling_form_statistic(x, w, np.ones(3))
