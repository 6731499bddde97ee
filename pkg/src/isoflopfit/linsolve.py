"""Small dense least-squares kernels.

Design matrices are row-major ``(rows, cols)`` numpy arrays. Columns are
rescaled to unit max-absolute-value before solving and the coefficients are
unscaled on return; power-law columns routinely span many decades.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .errors import DataError, NnlsConvergenceError


class LstsqSolution(NamedTuple):
    coef: np.ndarray
    rss: float
    rank_deficient: bool


def _check_system(X, y) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise DataError(f"incompatible system shapes {X.shape} and {y.shape}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise DataError("design matrix and response must be finite")
    return X, y


def _column_scales(X: np.ndarray) -> np.ndarray:
    scales = np.max(np.abs(X), axis=0)
    scales[scales == 0] = 1.0
    return scales


def solve_ols(X, y) -> LstsqSolution:
    """Unconstrained least squares via SVD (minimum norm when rank deficient)."""
    X, y = _check_system(X, y)
    scales = _column_scales(X)
    Xs = X / scales
    coef_s, _, rank, _ = np.linalg.lstsq(Xs, y, rcond=None)
    coef = coef_s / scales
    resid = y - Xs @ coef_s
    return LstsqSolution(coef, float(resid @ resid), bool(rank < X.shape[1]))


def _restricted_lstsq(
    Xs: np.ndarray, y: np.ndarray, passive: np.ndarray
) -> tuple[np.ndarray, bool]:
    z = np.zeros(Xs.shape[1])
    idx = np.flatnonzero(passive)
    deficient = False
    if idx.size:
        z[idx], _, rank, _ = np.linalg.lstsq(Xs[:, idx], y, rcond=None)
        deficient = rank < idx.size
    return z, deficient


def solve_nnls(X, y, max_iter: int | None = None) -> LstsqSolution:
    """Non-negative least squares by the Lawson-Hanson active-set method.

    Raises NnlsConvergenceError (with the best iterate attached) when the
    iteration cap, ``3 * cols * rows`` by default, is exhausted.
    """
    X, y = _check_system(X, y)
    rows, cols = X.shape
    scales = _column_scales(X)
    Xs = X / scales
    if max_iter is None:
        max_iter = 3 * cols * max(rows, 1)
    tol = 10.0 * np.finfo(float).eps * np.linalg.norm(Xs, 1) * max(rows, cols)

    x = np.zeros(cols)
    passive = np.zeros(cols, dtype=bool)
    w = Xs.T @ (y - Xs @ x)
    iterations = 0
    rank_deficient = False

    def _best() -> LstsqSolution:
        r = y - Xs @ x
        return LstsqSolution(x / scales, float(r @ r), False)

    while not passive.all():
        active_w = np.where(passive, -np.inf, w)
        j = int(np.argmax(active_w))
        if active_w[j] <= tol:
            break
        passive[j] = True
        while True:
            iterations += 1
            if iterations > max_iter:
                raise NnlsConvergenceError(
                    f"NNLS did not converge in {max_iter} iterations", best=_best()
                )
            z, rank_deficient = _restricted_lstsq(Xs, y, passive)
            if np.all(z[passive] > 0):
                x = z
                break
            blocking = passive & (z <= 0)
            step = np.min(x[blocking] / (x[blocking] - z[blocking]))
            x = x + step * (z - x)
            passive &= x > tol
            x[~passive] = 0.0
        w = Xs.T @ (y - Xs @ x)

    resid = y - Xs @ x
    return LstsqSolution(x / scales, float(resid @ resid), bool(rank_deficient))


def solve_ols_batch(Xs, y) -> tuple[np.ndarray, np.ndarray]:
    """Least squares for a stack of narrow design matrices sharing ``y``.

    ``Xs`` has shape ``(batch, rows, cols)``. Solves the column-scaled normal
    equations with a pseudo-inverse (minimum norm when singular) and
    recomputes the RSS from explicit residuals. Squaring the condition
    number makes this a screening solver for grids; use :func:`solve_ols`
    where full precision matters. Returns ``(coef, rss)`` with shapes
    ``(batch, cols)`` and ``(batch,)``.
    """
    Xs = np.asarray(Xs, dtype=float)
    y = np.asarray(y, dtype=float)
    scales = np.max(np.abs(Xs), axis=1, keepdims=True)
    scales[scales == 0] = 1.0
    Xn = Xs / scales
    gram = np.einsum("brc,brd->bcd", Xn, Xn)
    rhs = np.einsum("brc,r->bc", Xn, y)
    coef_n = np.einsum("bcd,bd->bc", np.linalg.pinv(gram, hermitian=True), rhs)
    resid = y[None, :] - np.einsum("brc,bc->br", Xn, coef_n)
    return coef_n / scales[:, 0, :], np.einsum("br,br->b", resid, resid)


def solve_nnls_batch(Xs, y) -> tuple[np.ndarray, np.ndarray]:
    """NNLS for a stack of narrow design matrices sharing ``y``.

    The non-negative optimum is the restricted least-squares solution on its
    own support, and every feasible restricted solution has at least the
    optimal RSS, so the optimum is the best feasible solution over all
    column subsets. Practical only for a handful of columns (2**cols - 1
    subsets). Returns ``(coef, rss)`` like :func:`solve_ols_batch`.
    """
    Xs = np.asarray(Xs, dtype=float)
    y = np.asarray(y, dtype=float)
    batch, _, cols = Xs.shape
    if cols > 8:
        raise DataError("subset enumeration is limited to 8 columns")
    best_rss = np.full(batch, float(y @ y))
    best_coef = np.zeros((batch, cols))
    for mask in range(1, 2 ** cols):
        idx = [j for j in range(cols) if mask >> j & 1]
        coef, rss = solve_ols_batch(Xs[:, :, idx], y)
        better = np.all(coef >= 0, axis=1) & (rss < best_rss)
        best_rss = np.where(better, rss, best_rss)
        full = np.zeros((batch, cols))
        full[:, idx] = coef
        best_coef[better] = full[better]
    return best_coef, best_rss
