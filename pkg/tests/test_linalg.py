import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats
from scipy.special import betaln

from hiertest.linalg import (
    NestedFTest,
    f_cdf,
    f_sf,
    noncentrality_report,
    ols_fit,
    partial_f_pvalue,
)


def betainc_series(a, b, x, terms=400):
    """I_x(a, b) from the hypergeometric power series; independent of the continued fraction."""
    total, coef = 0.0, 1.0
    for k in range(terms):
        total += coef / (a + k) * x**k
        coef *= (k + 1 - b) / (k + 1)
    return math.exp(a * math.log(x) - betaln(a, b)) * total


class TestOlsFit:
    def test_constant_column(self):
        fit = ols_fit(np.ones((4, 1)), [1.0, 2.0, 3.0, 4.0])
        assert fit.coefficients[0] == pytest.approx(2.5)
        assert fit.rss == pytest.approx(5.0)
        assert fit.df_resid == 3

    def test_empty_model(self):
        fit = ols_fit(np.zeros((2, 0)), [3.0, 4.0])
        assert fit.rss == 25.0
        assert fit.df_resid == 2
        assert fit.coefficients.size == 0

    def test_exact_fit(self, rng):
        X = rng.standard_normal((20, 3))
        beta = np.array([1.5, -2.0, 0.25])
        fit = ols_fit(X, X @ beta)
        assert fit.rss == pytest.approx(0.0, abs=1e-9)
        np.testing.assert_allclose(fit.coefficients, beta, atol=1e-9)

    def test_duplicate_column_is_dropped(self, rng):
        x = rng.standard_normal(10)
        X = np.column_stack([x, rng.standard_normal(10), x])
        fit = ols_fit(X, rng.standard_normal(10))
        assert fit.rank == 2
        assert fit.df_resid == 8
        assert len(fit.kept_columns) == 2
        assert np.all(np.diff(fit.kept_columns) > 0)

    @given(st.integers(0, 2**31), st.integers(1, 6))
    def test_residuals_orthogonal(self, seed, k):
        rng = np.random.default_rng(seed)
        X = rng.standard_normal((12, k))
        y = rng.standard_normal(12)
        fit = ols_fit(X, y)
        resid = y - X[:, fit.kept_columns] @ fit.coefficients
        bound = 1e-8 * np.linalg.norm(y) * np.linalg.norm(X, axis=0).max()
        assert np.abs(X.T @ resid).max() < bound
        assert fit.rss >= 0

    @pytest.mark.parametrize("X, y", [
        (np.ones((3, 1)), np.ones(4)),
        (np.ones((3, 3)), np.ones(3)),
        (np.array([[1.0], [np.nan], [2.0]]), np.ones(3)),
    ])
    def test_bad_inputs(self, X, y):
        with pytest.raises(ValueError):
            ols_fit(X, y)


class TestFDistribution:
    def test_symmetric_case(self):
        assert f_cdf(1, 1, 1) == pytest.approx(0.5, abs=1e-12)

    def test_two_two_closed_form(self):
        assert f_cdf(3, 2, 2) == pytest.approx(0.75, abs=1e-12)

    def test_against_series_oracle(self):
        x = 4 * 2.5 / (4 * 2.5 + 10)
        assert f_cdf(2.5, 4, 10) == pytest.approx(betainc_series(2.0, 5.0, x), abs=1e-8)

    @pytest.mark.parametrize("x, d1, d2", [(0.3, 1, 7), (1.7, 3, 40), (8.0, 2, 3), (0.01, 10, 10), (25.0, 5, 60)])
    def test_against_scipy(self, x, d1, d2):
        assert f_cdf(x, d1, d2) == pytest.approx(stats.f.cdf(x, d1, d2), abs=1e-10)
        assert f_sf(x, d1, d2) == pytest.approx(stats.f.sf(x, d1, d2), rel=1e-8, abs=1e-14)

    def test_limits(self):
        assert f_cdf(0.0, 3, 5) == 0.0
        assert f_cdf(1e12, 3, 5) == pytest.approx(1.0)
        assert f_cdf(math.inf, 3, 5) == 1.0

    @given(st.floats(1e-3, 1e3), st.integers(1, 60), st.integers(1, 60))
    def test_reciprocal_identity(self, x, d1, d2):
        assert f_cdf(x, d1, d2) + f_cdf(1 / x, d2, d1) == pytest.approx(1.0, abs=1e-10)

    @given(st.integers(1, 30), st.integers(1, 30))
    def test_monotone(self, d1, d2):
        xs = np.linspace(0, 20, 41)
        vals = [f_cdf(x, d1, d2) for x in xs]
        assert np.all(np.diff(vals) >= -1e-14)

    def test_negative_quantile(self):
        with pytest.raises(ValueError):
            f_cdf(-1.0, 2, 2)


class TestPartialF:
    def test_null_uniformity(self):
        rng = np.random.default_rng(7)
        X = rng.standard_normal((60, 5))
        beta = np.array([1.0, -1.0, 0.5, 0.0, 0.0])
        pvals = [partial_f_pvalue(X, X @ beta + rng.standard_normal(60), range(5), [3, 4])
                 for _ in range(2000)]
        assert stats.kstest(pvals, "uniform").statistic < 0.05

    def test_orthogonal_response(self, rng):
        X = rng.standard_normal((30, 3))
        Q, _ = np.linalg.qr(np.column_stack([X, rng.standard_normal(30)]))
        y = Q[:, 3]
        F, q, _ = NestedFTest(X, y, [0, 1, 2]).statistic([0, 1, 2])
        assert F == pytest.approx(0.0, abs=1e-10)
        assert partial_f_pvalue(X, y, [0, 1, 2], [0, 1, 2]) == pytest.approx(1.0, abs=1e-8)

    def test_single_column_matches_t_test(self, rng):
        X = rng.standard_normal((25, 4))
        y = X @ [0.5, 0.0, 0.3, -0.2] + rng.standard_normal(25)
        beta, *_ = np.linalg.lstsq(X, y, rcond=None)
        resid = y - X @ beta
        df = 25 - 4
        s2 = resid @ resid / df
        se = np.sqrt(s2 * np.linalg.inv(X.T @ X)[1, 1])
        p_t = 2 * stats.t.sf(abs(beta[1] / se), df)
        assert partial_f_pvalue(X, y, range(4), [1]) == pytest.approx(p_t, rel=1e-9)

    def test_collinear_drop_has_no_effect(self, rng):
        x = rng.standard_normal(15)
        X = np.column_stack([x, rng.standard_normal(15), x])
        y = x + rng.standard_normal(15)
        assert partial_f_pvalue(X, y, [0, 1, 2], [2]) == 1.0

    def test_perfect_fit_is_degenerate(self):
        X = np.eye(4)[:, :2]
        y = np.array([1.0, 2.0, 0.0, 0.0])
        assert partial_f_pvalue(X, y * 0, [0, 1], [1]) == 1.0

    @given(st.integers(0, 2**31), st.floats(0.01, 100))
    def test_invariances(self, seed, c):
        rng = np.random.default_rng(seed)
        X = rng.standard_normal((20, 6))
        y = X[:, 0] + rng.standard_normal(20)
        p = partial_f_pvalue(X, y, [0, 2, 4, 5], [2, 4])
        assert partial_f_pvalue(X, y, [5, 4, 2, 0], [4, 2]) == pytest.approx(p, abs=1e-12)
        assert partial_f_pvalue(X, c * y, [0, 2, 4, 5], [2, 4]) == pytest.approx(p, abs=1e-12)

    def test_centered_variant_spends_a_df(self, rng):
        X = rng.standard_normal((20, 3))
        y = rng.standard_normal(20)
        assert NestedFTest(X, y, [0, 1, 2], center=True).df_full == 20 - 3 - 1
        assert NestedFTest(X, y, [0, 1, 2]).df_full == 20 - 3

    @pytest.mark.parametrize("full, drop", [([0, 1, 2, 3, 4], [0]), ([0, 1], [2]), ([0, 1], [])])
    def test_errors(self, rng, full, drop):
        X = rng.standard_normal((5, 5))
        with pytest.raises(ValueError):
            partial_f_pvalue(X, rng.standard_normal(5), full, drop)


class TestNoncentrality:
    def setup_instance(self, rng, n=12, p=5):
        X = rng.standard_normal((n, p))
        beta = np.zeros(p)
        beta[0], beta[3] = 1.0, 0.8
        return X, beta

    def test_zero_when_screening_covers_support(self, rng):
        X, beta = self.setup_instance(rng)
        rep = noncentrality_report(X, [0, 1, 3], [[0, 1, 0]], beta, 1.0)
        assert rep.lambda_noncentral == 0.0
        assert np.all(rep.bias == 0)

    def test_sigma_scaling(self, rng):
        X, beta = self.setup_instance(rng)
        a = noncentrality_report(X, [0, 1], [[0, 1]], beta, 1.0)
        b = noncentrality_report(X, [0, 1], [[0, 1]], beta, 2.0)
        np.testing.assert_allclose(b.bias, a.bias / 2, rtol=1e-12)
        assert b.lambda_noncentral == pytest.approx(a.lambda_noncentral / 4, rel=1e-12)

    def test_lambda_is_squared_bias(self, rng):
        X, beta = self.setup_instance(rng)
        rep = noncentrality_report(X, [0, 1, 2], [[0, 1, 0], [0, 0, 1]], beta, 0.7)
        assert rep.lambda_noncentral == pytest.approx(float(rep.bias @ rep.bias))
        assert rep.q == 2 and rep.df2 == 12 - 3

    def test_row_permutation_invariance(self, rng):
        X, beta = self.setup_instance(rng)
        perm = rng.permutation(12)
        a = noncentrality_report(X, [0, 1], [[0, 1]], beta, 1.0)
        b = noncentrality_report(X[perm], [0, 1], [[0, 1]], beta, 1.0)
        assert b.lambda_noncentral == pytest.approx(a.lambda_noncentral, rel=1e-10)

    def test_monte_carlo_mean_shift(self):
        rng = np.random.default_rng(3)
        X, beta = self.setup_instance(rng)
        s_hat, A, sigma = [0, 1], np.array([[0.0, 1.0]]), 0.9
        rep = noncentrality_report(X, s_hat, A, beta, sigma)
        Xs = X[:, s_hat]
        G_inv = np.linalg.inv(Xs.T @ Xs)
        M_inv = np.linalg.inv(A @ G_inv @ A.T)
        eps = sigma * rng.standard_normal((100_000, 12))
        est = (X @ beta + eps) @ Xs @ G_inv.T @ A.T
        quad = np.einsum("ij,jk,ik->i", est, M_inv, est) / sigma**2
        se = quad.std(ddof=1) / np.sqrt(len(quad))
        assert abs(quad.mean() - (1 + rep.lambda_noncentral)) < 3 * se

    def test_errors(self, rng):
        X, beta = self.setup_instance(rng)
        with pytest.raises(ValueError):
            noncentrality_report(X, [0, 1], [[0, 1]], beta, 0.0)
        X[:, 1] = X[:, 0]
        with pytest.raises(ValueError):
            noncentrality_report(X, [0, 1], [[0, 1]], beta, 1.0)
