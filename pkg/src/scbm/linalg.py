"""Dense numerical kernels: least squares, pseudoinverse, rank-constrained
factorization, numerical rank and R² scoring."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

RANK_TOL = 1e-8


class RankDeficientError(np.linalg.LinAlgError):
    def __init__(self, requested: int, achieved: int):
        self.requested = requested
        self.achieved = achieved
        super().__init__(f"requested {requested} independent columns, numerical rank is {achieved}")


class IllConditionedWarning(RuntimeWarning):
    pass


class DegenerateR2Warning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class LeastSquares:
    coef: np.ndarray
    rank: int
    rank_deficient: bool


def _as_2d(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2:
        raise ValueError(f"expected a matrix, got shape {a.shape}")
    return a


def ols_fit(X, Y) -> LeastSquares:
    """Least squares of ``Y`` on ``X`` after centering both (no intercept).

    Columns of ``X`` are rescaled to unit norm before the SVD solve so that
    regressors on wildly different scales do not fall below the cutoff; if
    ``X`` is rank deficient (e.g. fewer samples than regressors) the result is
    the minimum-norm solution in those rescaled coordinates.
    """
    X = _as_2d(X)
    Y = _as_2d(Y)
    if X.shape[0] != Y.shape[0]:
        raise ValueError(f"row mismatch: X has {X.shape[0]}, Y has {Y.shape[0]}")
    Xc = X - X.mean(axis=0)
    Yc = Y - Y.mean(axis=0)
    scale = np.linalg.norm(Xc, axis=0)
    if not np.any(scale > 0):
        raise ValueError("all columns of X are constant")
    scale[scale == 0] = 1.0
    coef, _, rank, _ = np.linalg.lstsq(Xc / scale, Yc, rcond=None)
    coef = coef / scale[:, None]
    deficient = rank < X.shape[1]
    if deficient:
        warnings.warn(
            f"design matrix has rank {rank} < {X.shape[1]} regressors; using the minimum-norm solution",
            IllConditionedWarning,
            stacklevel=2,
        )
    return LeastSquares(coef, int(rank), bool(deficient))


def pinv(M, rel_tol: float | None = None) -> np.ndarray:
    """Moore-Penrose inverse; singular values below ``rel_tol * s_max`` are dropped."""
    M = _as_2d(M)
    if rel_tol is None:
        rel_tol = 1e-12 * max(M.shape)
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return np.zeros(M.T.shape)
    keep = s >= rel_tol * s[0]
    return (Vt[keep].T / s[keep]) @ U[:, keep].T


def numerical_rank(M, rel_tol: float = RANK_TOL) -> int:
    M = _as_2d(M)
    s = np.linalg.svd(M, compute_uv=False)
    if s.size == 0 or s[0] == 0:
        return 0
    return int(np.sum(s >= rel_tol * s[0]))


def _pivoted_qr(M: np.ndarray):
    _, R, piv = scipy.linalg.qr(M, mode="economic", pivoting=True)
    return np.abs(np.diag(R)), piv


def select_independent_columns(M, r: int, rel_tol: float = RANK_TOL) -> list[int]:
    """Indices of ``r`` well-separated columns chosen by column-pivoted QR."""
    M = _as_2d(M)
    if r < 1 or r > M.shape[1]:
        raise ValueError(f"cannot select {r} columns from a matrix with {M.shape[1]}")
    diag, piv = _pivoted_qr(M)
    achieved = int(np.sum(diag >= rel_tol * diag[0])) if diag.size and diag[0] > 0 else 0
    if achieved < r:
        raise RankDeficientError(r, achieved)
    return sorted(int(p) for p in piv[:r])


@dataclass(frozen=True)
class Factorization:
    left: np.ndarray
    right: np.ndarray
    residual: float
    columns: tuple[int, ...]


def rank_factorize(M, r: int, rel_tol: float = RANK_TOL) -> Factorization:
    """Split ``M`` into ``left @ right`` with inner dimension ``r``.

    ``left`` is made of ``r`` columns of ``M`` picked by pivoted QR and
    ``right = pinv(left) @ M``. When ``M`` has numerical rank above ``r`` the
    result is the projection of ``M`` onto the span of those columns, so the
    residual is nonzero rather than an error. When the rank is below ``r`` the
    extra columns are still taken in pivot order. A zero ``M`` raises
    :class:`RankDeficientError`.
    """
    M = _as_2d(M)
    if r < 1 or r > min(M.shape):
        raise ValueError(f"rank {r} outside 1..{min(M.shape)} for a {M.shape[0]}x{M.shape[1]} matrix")
    diag, piv = _pivoted_qr(M)
    if not diag.size or diag[0] == 0:
        raise RankDeficientError(r, 0)
    cols = sorted(int(p) for p in piv[:r])
    left = M[:, cols]
    right = pinv(left) @ M
    residual = float(np.linalg.norm(left @ right - M))
    return Factorization(left, right, residual, tuple(cols))


def r2_score(Y_true, Y_pred) -> tuple[np.ndarray, float]:
    """Per-column coefficient of determination and its unweighted mean.

    A constant true column scores 1 when predicted exactly and NaN otherwise;
    NaN columns are left out of the mean.
    """
    Y_true = _as_2d(Y_true)
    Y_pred = _as_2d(Y_pred)
    if Y_true.shape != Y_pred.shape:
        raise ValueError(f"shape mismatch: {Y_true.shape} vs {Y_pred.shape}")
    if Y_true.shape[0] < 2:
        raise ValueError("need at least two samples")
    ss_res = np.sum((Y_true - Y_pred) ** 2, axis=0)
    ss_tot = np.sum((Y_true - Y_true.mean(axis=0)) ** 2, axis=0)
    scores = np.empty(Y_true.shape[1])
    degenerate = ss_tot == 0
    scores[~degenerate] = 1.0 - ss_res[~degenerate] / ss_tot[~degenerate]
    scores[degenerate] = np.where(ss_res[degenerate] == 0, 1.0, np.nan)
    if np.isnan(scores).any():
        warnings.warn(
            f"{int(np.isnan(scores).sum())} constant target column(s) excluded from the R² average",
            DegenerateR2Warning,
            stacklevel=2,
        )
    valid = scores[~np.isnan(scores)]
    avg = float(valid.mean()) if valid.size else float("nan")
    return scores, avg
