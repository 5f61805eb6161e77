"""
Lasso screening of the active set on one half of a sample split.

Objective: ``(1/(2n)) ||y - X b||^2 + lam ||b||_1``, so
``lambda_max = max_j |X_j' y| / n``. Regularization is chosen by K-fold
cross-validation over a log-spaced grid from ``lambda_max`` down to
``1e-3 * lambda_max``, picking the grid point with the smallest mean
held-out squared error.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._backend import lasso_cd, lasso_path

N_LAMBDA = 100
LAMBDA_MIN_RATIO = 1e-3
FIT_TOL = 1e-10
# path sweeps stop once every squared coefficient move, in units of the
# column's mean square, is below PATH_THRESH times the mean square of y
PATH_THRESH = 1e-7
# the same rule, much tighter, for the single refit at the chosen penalty
REFIT_THRESH = 1e-13
MAX_SWEEPS = 100_000


@dataclass(frozen=True)
class LassoFit:
    lam: float
    coefficients: np.ndarray
    support: np.ndarray
    n_iter: int
    converged: bool


@dataclass(frozen=True)
class CvResult:
    lambda_grid: np.ndarray
    cv_error: np.ndarray
    chosen_lambda: float
    chosen_index: int
    fold_assignment: np.ndarray
    coefficients: np.ndarray  # full-data fit at chosen_lambda
    cv_se: np.ndarray = None  # standard error of cv_error across folds


def _prepare(X, y):
    X = np.asfortranarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64).ravel()
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError(f"dimension mismatch: X {X.shape}, y {y.shape}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite input")
    return X, y


def lambda_max(X, y) -> float:
    X = np.asarray(X, dtype=np.float64)
    if X.shape[1] == 0:
        return 0.0
    return float(np.max(np.abs(X.T @ np.asarray(y, dtype=np.float64))) / X.shape[0])


def lambda_grid(lam_max: float, n_lambda: int = N_LAMBDA, ratio: float = LAMBDA_MIN_RATIO) -> np.ndarray:
    return lam_max * np.logspace(0.0, np.log10(ratio), n_lambda)


def objective(X, y, beta, lam) -> float:
    r = np.asarray(y) - np.asarray(X) @ beta
    return float(r @ r) / (2 * len(r)) + lam * float(np.abs(beta).sum())


def kkt_violation(X, y, beta, lam) -> float:
    """Largest violation of the Lasso optimality conditions at ``beta``."""
    X = np.asarray(X, dtype=np.float64)
    grad = X.T @ (np.asarray(y) - X @ beta) / X.shape[0]
    on = beta != 0
    viol_on = np.abs(grad[on] - lam * np.sign(beta[on]))
    viol_off = np.maximum(np.abs(grad[~on]) - lam, 0.0)
    return float(max(viol_on.max(initial=0.0), viol_off.max(initial=0.0)))


def lasso_fit(X, y, lam: float, warm_start: Optional[np.ndarray] = None,
              tol: float = FIT_TOL, max_iter: int = MAX_SWEEPS) -> LassoFit:
    """Cyclic coordinate descent for the Lasso at a single ``lam``.

    Non-convergence within ``max_iter`` sweeps is not an error: the last
    iterate is returned with ``converged=False``.
    """
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    X, y = _prepare(X, y)
    p = X.shape[1]
    beta = np.zeros(p) if warm_start is None else np.array(warm_start, dtype=np.float64)
    if beta.shape != (p,):
        raise ValueError(f"warm_start must have length {p}")
    col_sq = np.einsum("ij,ij->j", X, X)
    n_iter, converged = lasso_cd(X, y, float(lam), beta, col_sq, int(max_iter), float(tol))
    return LassoFit(float(lam), beta, np.flatnonzero(beta), int(n_iter), bool(converged))


def fold_assignment(n: int, k: int, seed) -> np.ndarray:
    folds = np.empty(n, dtype=np.intp)
    folds[np.random.default_rng(seed).permutation(n)] = np.arange(n) % k
    return folds


CV_RULES = ("min", "1se")


def cv_select_lambda(X, y, k: int = 10, seed=0, n_lambda: int = N_LAMBDA,
                     thresh: float = PATH_THRESH, rule: str = "min") -> CvResult:
    """K-fold cross-validated choice of the Lasso penalty.

    Folds come from a permutation drawn with ``seed``; each fold refits the
    whole warm-started path on the remaining rows. ``rule="min"`` picks the
    smallest mean held-out error (ties go to the larger penalty);
    ``rule="1se"`` picks the largest penalty within one standard error of
    that minimum. The returned coefficients are refit on all rows at the
    chosen penalty with the tighter ``REFIT_THRESH``.
    """
    if rule not in CV_RULES:
        raise ValueError(f"rule must be one of {CV_RULES}, got {rule!r}")
    X, y = _prepare(X, y)
    n, p = X.shape
    if not 2 <= k <= n:
        raise ValueError(f"need 2 <= k <= n rows, got k={k}, n={n}")
    lam_max = lambda_max(X, y)
    if lam_max <= 0.0:
        raise ValueError("response is orthogonal to every column; the Lasso path is empty")
    grid = lambda_grid(lam_max, n_lambda)
    folds = fold_assignment(n, k, seed)
    tol = float(np.sqrt(thresh * (y @ y) / n))
    sq_err = np.zeros(len(grid))
    fold_mse = np.zeros((k, len(grid)))
    for f in range(k):
        test = folds == f
        Xtr = np.asfortranarray(X[~test])
        ytr = y[~test]
        col_sq = np.einsum("ij,ij->j", Xtr, Xtr)
        coefs, _ = lasso_path(Xtr, ytr, grid, col_sq, MAX_SWEEPS, tol)
        resid = y[test][:, None] - X[test] @ coefs.T
        fold_sq = np.einsum("ij,ij->j", resid, resid)
        sq_err += fold_sq
        fold_mse[f] = fold_sq / max(int(test.sum()), 1)
    cv_error = sq_err / n
    cv_se = fold_mse.std(axis=0, ddof=1) / np.sqrt(k)
    best = int(np.argmin(cv_error))
    if rule == "1se":
        best = int(np.flatnonzero(cv_error <= cv_error[best] + cv_se[best])[0])
    col_sq = np.einsum("ij,ij->j", X, X)
    coefs, _ = lasso_path(X, y, grid[: best + 1], col_sq, MAX_SWEEPS, tol)
    beta = coefs[-1].copy()
    refit_tol = float(np.sqrt(REFIT_THRESH * (y @ y) / n))
    lasso_cd(X, y, float(grid[best]), beta, col_sq, MAX_SWEEPS, refit_tol)
    return CvResult(grid, cv_error, float(grid[best]), best, folds, beta, cv_se)


def standardize(X):
    """Center columns and scale them to unit (population) variance.

    Constant columns become zero columns, which the Lasso never selects.
    """
    X = np.asarray(X, dtype=np.float64)
    Z = X - X.mean(axis=0)
    sd = np.sqrt((Z * Z).mean(axis=0))
    scale = np.where(sd > 0, sd, 1.0)
    Z = Z / scale
    Z[:, sd == 0] = 0.0
    return Z


def truncate_support(coefficients, cap: int) -> np.ndarray:
    """Keep at most ``cap`` nonzero coefficients, largest magnitude first (ties: lower index)."""
    support = np.flatnonzero(coefficients)
    if len(support) <= cap:
        return support
    mags = np.abs(coefficients[support])
    order = np.lexsort((support, -mags))
    return np.sort(support[order[:cap]])


def screen(X_in, y_in, seed, cap: int, k: int = 10, rule: str = "min",
           thresh: float = PATH_THRESH) -> np.ndarray:
    """Estimate the active set from the in-half of a split.

    Returns sorted column indices with at most ``cap`` entries; the caller
    passes ``cap = floor(n / 2) - 1`` so the screened model stays smaller
    than the testing half.
    """
    if cap < 0:
        raise ValueError("cap must be non-negative")
    X = standardize(X_in)
    y = np.asarray(y_in, dtype=np.float64).ravel()
    y = y - y.mean()
    if lambda_max(X, y) <= 1e-14 * max(1.0, float(np.abs(y).max(initial=0.0))):
        return np.zeros(0, dtype=np.intp)
    cv = cv_select_lambda(X, y, k=min(k, X.shape[0]), seed=seed, thresh=thresh, rule=rule)
    return truncate_support(cv.coefficients, cap).astype(np.intp)
