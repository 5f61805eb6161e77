"""
Least squares, partial F-tests and the screening-failure noncentrality diagnostic.

Rank deficiency follows the usual pivoted-QR recipe: columns whose pivot
magnitude falls below ``RANK_TOL`` times the leading pivot are dropped, and
F-test degrees of freedom count only the rank that is actually removed.
Models are fit without an intercept; callers center the data beforehand.
"""

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import qr, solve_triangular

from ._backend import betainc

RANK_TOL = 1e-8


@dataclass(frozen=True)
class LeastSquaresFit:
    """Result of :func:`ols_fit`.

    ``coefficients`` is aligned with ``kept_columns`` (indices into the
    columns of the fitted matrix), not with the original column list.
    """

    coefficients: np.ndarray
    rss: float
    df_resid: int
    rank: int
    kept_columns: np.ndarray


@dataclass(frozen=True)
class NoncentralityReport:
    bias: np.ndarray
    lambda_noncentral: float
    q: int
    df2: int


def _as_matrix(X, y=None):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.ndim != 2:
        raise ValueError(f"expected a 2-d matrix, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("matrix contains non-finite entries")
    if y is None:
        return X
    y = np.asarray(y, dtype=np.float64).ravel()
    if y.shape[0] != X.shape[0]:
        raise ValueError(f"dimension mismatch: X has {X.shape[0]} rows, y has {y.shape[0]} entries")
    if not np.all(np.isfinite(y)):
        raise ValueError("response contains non-finite entries")
    return X, y


def _pivoted_rank(X):
    """Return (Q, R, pivots, rank) of the economic pivoted QR of ``X``."""
    Q, R, piv = qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    if diag.size == 0 or diag[0] == 0.0:
        return Q, R, piv, 0
    rank = int(np.count_nonzero(diag >= RANK_TOL * diag[0]))
    return Q, R, piv, rank


def ols_fit(X_sub, y) -> LeastSquaresFit:
    """Least squares fit without intercept, dropping numerically dependent columns.

    Parameters
    ----------
    X_sub : array of shape (n, k)
        Design matrix; ``n > k`` is required.
    y : array of shape (n,)

    Returns
    -------
    LeastSquaresFit
    """
    X, y = _as_matrix(X_sub, y)
    n, k = X.shape
    if k >= n:
        raise ValueError(f"need more rows than columns, got {n} rows and {k} columns")
    if k == 0:
        return LeastSquaresFit(np.zeros(0), float(y @ y), n, 0, np.zeros(0, dtype=np.intp))
    Q, R, piv, rank = _pivoted_rank(X)
    if rank == 0:
        return LeastSquaresFit(np.zeros(0), float(y @ y), n, 0, np.zeros(0, dtype=np.intp))
    z = solve_triangular(R[:rank, :rank], Q[:, :rank].T @ y)
    order = np.argsort(piv[:rank])
    kept = piv[:rank][order]
    coef = z[order]
    resid = y - X[:, kept] @ coef
    return LeastSquaresFit(coef, float(resid @ resid), n - rank, rank, kept.astype(np.intp))


def f_cdf(x: float, d1: float, d2: float) -> float:
    """CDF of the F distribution with (d1, d2) degrees of freedom."""
    if not x >= 0:
        raise ValueError(f"F quantile must be non-negative, got {x}")
    if d1 <= 0 or d2 <= 0:
        raise ValueError("degrees of freedom must be positive")
    if np.isinf(x):
        return 1.0
    return betainc(0.5 * d1, 0.5 * d2, d1 * x / (d1 * x + d2))


def f_sf(x: float, d1: float, d2: float) -> float:
    """Upper tail ``1 - f_cdf(x, d1, d2)``, evaluated without cancellation."""
    if not x >= 0:
        raise ValueError(f"F quantile must be non-negative, got {x}")
    if d1 <= 0 or d2 <= 0:
        raise ValueError("degrees of freedom must be positive")
    if np.isinf(x):
        return 0.0
    return betainc(0.5 * d2, 0.5 * d1, d2 / (d2 + d1 * x))


class NestedFTest:
    """Partial F-tests of many submodels against one full model.

    The full model is fit once; each call to :meth:`pvalue` refits only the
    submodel. With ``center=True`` the rows are centered first and one extra
    residual degree of freedom is spent on the intercept.
    """

    def __init__(self, X, y, full_cols: Sequence[int], center: bool = False):
        X, y = _as_matrix(X, y)
        self.full_cols = np.asarray(sorted(int(c) for c in full_cols), dtype=np.intp)
        if len(set(self.full_cols.tolist())) != len(self.full_cols):
            raise ValueError("full_cols contains duplicates")
        extra = 1 if center else 0
        if len(self.full_cols) + extra >= X.shape[0]:
            raise ValueError(
                f"full model has {len(self.full_cols)} columns but only {X.shape[0]} rows"
            )
        Xf = X[:, self.full_cols]
        if center:
            Xf = Xf - Xf.mean(axis=0)
            y = y - y.mean()
        self._X = Xf
        self._y = y
        self._extra = extra
        self.full = ols_fit(Xf, y)
        self.df_full = self.full.df_resid - extra
        self._pos = {c: i for i, c in enumerate(self.full_cols.tolist())}

    def statistic(self, drop_cols: Sequence[int]):
        """Return (F, q, df_full); ``F`` is ``nan`` for the 0/0 perfect-fit case."""
        drop = {int(c) for c in drop_cols}
        if not drop:
            raise ValueError("drop_cols must be nonempty")
        missing = drop.difference(self._pos)
        if missing:
            raise ValueError(f"drop_cols not contained in full_cols: {sorted(missing)}")
        keep = [self._pos[c] for c in self.full_cols.tolist() if c not in drop]
        sub = ols_fit(self._X[:, keep], self._y)
        q = self.full.rank - sub.rank
        rss_full, rss_sub = self.full.rss, sub.rss
        scale = float(self._y @ self._y)
        if q <= 0:
            return 0.0, 0, self.df_full
        if rss_full <= 1e-28 * scale:
            if rss_sub <= 1e-28 * scale:
                return float("nan"), q, self.df_full
            return float("inf"), q, self.df_full
        F = max(rss_sub - rss_full, 0.0) / q / (rss_full / self.df_full)
        return F, q, self.df_full

    def pvalue(self, drop_cols: Sequence[int]) -> float:
        F, q, df = self.statistic(drop_cols)
        if q == 0 or np.isnan(F):
            return 1.0
        return f_sf(F, q, df)


def partial_f_pvalue(X_out, y_out, full_cols, drop_cols) -> float:
    """P-value of the classical partial F-test of ``drop_cols`` within ``full_cols``.

    Both models are fit on the rows of ``X_out`` without intercept. The
    numerator degrees of freedom equal the rank actually removed, so dropping
    a column that is collinear with the remaining ones yields p = 1.
    """
    return NestedFTest(X_out, y_out, full_cols).pvalue(drop_cols)


def _sym_inv_sqrt(M):
    w, V = np.linalg.eigh(M)
    if w.min() <= 0:
        raise ValueError("A (X'X)^-1 A' is not positive definite; A must have full row rank")
    return (V / np.sqrt(w)) @ V.T


def noncentrality_report(X_I2, s_hat, A, beta0, sigma: float) -> NoncentralityReport:
    """Noncentrality of the partial F-statistic when screening misses active variables.

    Parameters
    ----------
    X_I2 : array of shape (n2, p)
        Rows of the testing half-sample, all ``p`` columns.
    s_hat : sequence of int
        Screened column indices; ``X_I2[:, s_hat]`` must have full column rank.
    A : array of shape (q, len(s_hat))
        Contrast matrix of full row rank.
    beta0 : array of shape (p,)
        True coefficients.
    sigma : float
        Noise standard deviation.
    """
    X = _as_matrix(X_I2)
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    s_hat = np.asarray(sorted(int(j) for j in s_hat), dtype=np.intp)
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    beta0 = np.asarray(beta0, dtype=np.float64).ravel()
    n2, p = X.shape
    if beta0.shape[0] != p:
        raise ValueError(f"beta0 has length {beta0.shape[0]}, expected {p}")
    if A.shape[1] != len(s_hat) or not 1 <= A.shape[0] <= len(s_hat):
        raise ValueError(f"A must be q x {len(s_hat)} with 1 <= q <= {len(s_hat)}, got {A.shape}")
    Xs = X[:, s_hat]
    gram = Xs.T @ Xs
    if np.linalg.matrix_rank(gram) < len(s_hat):
        raise ValueError("X_I2 restricted to s_hat is column-rank deficient")
    rest = np.setdiff1d(np.arange(p), s_hat)
    leak = Xs.T @ (X[:, rest] @ beta0[rest])
    shift = A @ np.linalg.solve(gram, leak)
    M = A @ np.linalg.solve(gram, A.T)
    bias = _sym_inv_sqrt(M) @ shift / sigma
    return NoncentralityReport(bias, float(bias @ bias), A.shape[0], n2 - len(s_hat))
