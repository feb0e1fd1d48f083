import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scbm.linalg import (
    DegenerateR2Warning,
    IllConditionedWarning,
    RankDeficientError,
    numerical_rank,
    ols_fit,
    pinv,
    r2_score,
    rank_factorize,
    select_independent_columns,
)


def penrose_errors(M, P):
    return [
        np.linalg.norm(M @ P @ M - M) / max(np.linalg.norm(M), 1e-300),
        np.linalg.norm(P @ M @ P - P) / max(np.linalg.norm(P), 1e-300),
        np.linalg.norm((M @ P).T - M @ P) / max(np.linalg.norm(M @ P), 1e-300),
        np.linalg.norm((P @ M).T - P @ M) / max(np.linalg.norm(P @ M), 1e-300),
    ]


def test_ols_examples():
    rng = np.random.default_rng(0)
    # centering costs one degree of freedom, so n must exceed p
    X = rng.standard_normal((12, 6))
    assert np.allclose(ols_fit(X, X).coef, np.eye(6), atol=1e-10)
    X = rng.standard_normal((200, 4))
    W0 = rng.standard_normal((4, 3))
    assert np.abs(ols_fit(X, X @ W0).coef - W0).max() < 1e-8
    X = rng.standard_normal((10000, 5))
    W0 = rng.standard_normal((5, 2))
    W = ols_fit(X, X @ W0 + rng.standard_normal((10000, 2))).coef
    assert np.abs(W - W0).max() <= 0.05


def test_ols_ignores_offsets():
    rng = np.random.default_rng(1)
    X = rng.standard_normal((300, 3))
    W0 = rng.standard_normal((3, 2))
    fit = ols_fit(X + 5.0, X @ W0 - 2.0)
    assert np.abs(fit.coef - W0).max() < 1e-10


def test_ols_rank_deficient_flags():
    rng = np.random.default_rng(2)
    X = rng.standard_normal((5, 8))
    with pytest.warns(IllConditionedWarning):
        fit = ols_fit(X, rng.standard_normal((5, 1)))
    assert fit.rank_deficient and fit.rank < 8


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(5, 60), st.integers(1, 5))
def test_ols_residual_orthogonal(seed, n, p):
    rng = np.random.default_rng(seed)
    n = max(n, p + 2)
    X = rng.standard_normal((n, p))
    Y = rng.standard_normal((n, 2))
    fit = ols_fit(X, Y)
    Xc, Yc = X - X.mean(0), Y - Y.mean(0)
    R = Yc - Xc @ fit.coef
    assert np.abs(Xc.T @ R).max() <= 1e-8 * np.linalg.norm(Xc) * np.linalg.norm(Yc)


def test_pinv_examples():
    assert np.allclose(pinv(np.eye(4)), np.eye(4))
    assert np.allclose(pinv(np.diag([2.0, 0.0])), np.diag([0.5, 0.0]))
    M = np.random.default_rng(3).standard_normal((7, 3))
    assert max(penrose_errors(M, pinv(M))) <= 1e-10


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 8), st.integers(1, 8), st.integers(0, 8))
def test_penrose_all_rank_profiles(seed, m, n, r):
    rng = np.random.default_rng(seed)
    r = min(r, m, n)
    M = rng.standard_normal((m, r)) @ rng.standard_normal((r, n)) if r else np.zeros((m, n))
    P = pinv(M)
    if r == 0:
        assert np.all(P == 0)
        return
    assert max(penrose_errors(M, P)) <= 1e-10


def test_select_columns_examples():
    e1, e2 = np.eye(3)[:, 0], np.eye(3)[:, 1]
    assert select_independent_columns(np.column_stack([e1, e1, e2]), 2) in ([0, 2], [1, 2])
    assert select_independent_columns(np.eye(4), 4) == [0, 1, 2, 3]
    rng = np.random.default_rng(4)
    B = rng.uniform(size=(6, 2))
    M = B @ rng.uniform(size=(2, 6))
    cols = select_independent_columns(M, 2)
    Q, _ = np.linalg.qr(B)
    S = M[:, cols]
    assert np.linalg.norm(S - Q @ (Q.T @ S)) < 1e-8
    assert numerical_rank(S) == 2


def test_select_columns_rank_error():
    M = np.outer(np.arange(1.0, 5.0), np.ones(4))
    with pytest.raises(RankDeficientError) as info:
        select_independent_columns(M, 2)
    assert info.value.achieved == 1 and info.value.requested == 2


def test_rank_factorize_examples():
    rng = np.random.default_rng(5)
    u, v = rng.standard_normal(5), rng.standard_normal(4)
    assert rank_factorize(np.outer(u, v), 1).residual <= 1e-10
    f = rank_factorize(np.eye(4), 4)
    assert np.abs(f.left @ f.right - np.eye(4)).max() <= 1e-10
    M = rng.standard_normal((6, 2)) @ rng.standard_normal((2, 5))
    f = rank_factorize(M, 1)
    s = np.linalg.svd(M, compute_uv=False)
    # the best rank-1 approximation error is a lower bound
    assert f.residual >= s[1] * (1 - 1e-12) and f.residual > 0
    with pytest.raises(ValueError):
        rank_factorize(M, 6)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 10), st.integers(1, 10), st.integers(1, 10))
def test_rank_factorize_reconstructs_at_numerical_rank(seed, m, n, r):
    rng = np.random.default_rng(seed)
    r = min(r, m, n)
    M = rng.uniform(size=(m, r)) @ rng.uniform(size=(r, n))
    k = numerical_rank(M)
    f = rank_factorize(M, k)
    assert f.left.shape == (m, k) and f.right.shape == (k, n)
    assert f.residual <= 1e-8 * np.linalg.norm(M)


def test_numerical_rank_examples():
    assert numerical_rank(np.eye(5)) == 5
    assert numerical_rank(np.diag([1.0, 1e-12])) == 1
    assert numerical_rank(np.zeros((3, 3))) == 0


def test_three_factor_uniform_product_spectrum():
    # the leading singular value dominates, but the rest stay above 1e-8 relative
    rng = np.random.default_rng(6)
    M = rng.uniform(size=(50, 50)) @ rng.uniform(size=(50, 50)) @ rng.uniform(size=(50, 50))
    s = np.linalg.svd(M, compute_uv=False)
    assert s[1] / s[0] < 1e-2
    assert numerical_rank(M, 1e-2) == 1
    assert numerical_rank(M, 1e-8) > 1


def test_r2_examples():
    Y = np.random.default_rng(7).standard_normal((20, 3))
    assert r2_score(Y, Y)[1] == 1.0
    assert abs(r2_score(Y, np.tile(Y.mean(0), (20, 1)))[1]) < 1e-12
    scores, avg = r2_score(np.array([1.0, 2, 3, 4]), np.array([1.1, 1.9, 3.2, 3.8]))
    assert avg == pytest.approx(1 - 0.10 / 5.0, abs=1e-12)
    assert round(avg, 3) == 0.98


def test_r2_constant_column():
    Y = np.column_stack([np.arange(5.0), np.ones(5)])
    assert r2_score(Y, Y)[0][1] == 1.0
    P = Y.copy()
    P[0, 1] = 2.0
    with pytest.warns(DegenerateR2Warning):
        scores, avg = r2_score(Y, P)
    assert np.isnan(scores[1]) and avg == 1.0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-100, 100))
def test_r2_shift_invariant(seed, c):
    rng = np.random.default_rng(seed)
    Y = rng.standard_normal((30, 2))
    P = Y + 0.3 * rng.standard_normal((30, 2))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        a = r2_score(Y, P)[1]
        b = r2_score(Y + c, P + c)[1]
    assert a == pytest.approx(b, abs=1e-9)
