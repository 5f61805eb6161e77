"""Pure-Python/NumPy fallbacks for the compiled kernels in ``_kernels.pyx``.

Same signatures and semantics; used when the extension is not built or when
``HIERTEST_PURE_PYTHON=1`` is set.
"""

import math

import numpy as np


def _soft(z, lam):
    if z > lam:
        return z - lam
    if z < -lam:
        return z + lam
    return 0.0


def _sweep(X, beta, resid, col_sq, lam, idx):
    n = X.shape[0]
    dmax = 0.0
    for j in idx:
        if col_sq[j] == 0.0:
            continue
        a = col_sq[j] / n
        xj = X[:, j]
        z = float(xj @ resid) / n + a * beta[j]
        new = _soft(z, lam) / a
        delta = new - beta[j]
        if delta != 0.0:
            resid -= delta * xj
            beta[j] = new
            dmax = max(dmax, abs(delta) * math.sqrt(a))
    return dmax


def _cd(X, beta, resid, col_sq, lam, max_iter, tol):
    p = X.shape[1]
    all_idx = range(p)
    n_iter = 0
    while n_iter < max_iter:
        dmax = _sweep(X, beta, resid, col_sq, lam, all_idx)
        n_iter += 1
        if dmax < tol:
            return n_iter, True
        active = np.flatnonzero(beta)
        while n_iter < max_iter:
            dmax = _sweep(X, beta, resid, col_sq, lam, active)
            n_iter += 1
            if dmax < tol:
                break
    return n_iter, False


def lasso_cd(X, y, lam, beta, col_sq, max_iter, tol):
    resid = np.asarray(y) - X @ beta
    return _cd(X, beta, resid, col_sq, lam, max_iter, tol)


def lasso_path(X, y, lambdas, col_sq, max_iter, tol):
    p = X.shape[1]
    coefs = np.zeros((len(lambdas), p))
    converged = np.zeros(len(lambdas), dtype=bool)
    beta = np.zeros(p)
    resid = np.array(y, dtype=np.float64)
    for k, lam in enumerate(lambdas):
        _, converged[k] = _cd(X, beta, resid, col_sq, lam, max_iter, tol)
        coefs[k] = beta
    return coefs, converged


def complete_linkage(D):
    p = D.shape[0]
    pairs = np.zeros((max(p - 1, 0), 2), dtype=np.intp)
    heights = np.zeros(max(p - 1, 0))
    alive = np.ones(p, dtype=bool)
    upper = np.triu(np.ones((p, p), dtype=bool), k=1)
    for step in range(p - 1):
        work = np.where(upper & alive[:, None] & alive[None, :], D, np.inf)
        # argmin scans row-major, so the first minimum is the lowest slot pair
        i, j = divmod(int(np.argmin(work)), p)
        pairs[step] = (i, j)
        heights[step] = D[i, j]
        alive[j] = False
        merged = np.maximum(D[i], D[j])
        D[i, :] = merged
        D[:, i] = merged
    return pairs, heights


def _betacf(a, b, x):
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 301):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-12:
            break
    return h


def betainc(a, b, x):
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    front = math.exp(
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    )
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b
