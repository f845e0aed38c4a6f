import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from olsaudit.exceptions import (CombinatorialBudgetExceeded, DimensionMismatch,
                                 RankDeficient, ZeroDirection)
from olsaudit.regression import (RegressionData, compute_grams, exact_delta,
                                 exact_delta_curve, exact_k_theta, fit_ols,
                                 gram_rows, normalize, refit_without)


def test_fit_exact_interpolation():
    fit = fit_ols(RegressionData([[1.0], [1.0]], [1.0, 1.0]))
    assert fit.beta == pytest.approx([1.0])
    assert np.allclose(fit.residuals, 0.0)


def test_fit_symmetric_pair():
    fit = fit_ols(RegressionData([[1.0], [-1.0]], [2.0, -2.0]))
    assert fit.beta == pytest.approx([2.0])
    assert np.allclose(fit.residuals, 0.0)


def test_fit_matches_explicit_normal_equations(rng):
    X = rng.standard_normal((6, 2))
    Y = rng.standard_normal(6)
    (a, b), (_, c) = X.T @ X
    inv = np.array([[c, -b], [-b, a]]) / (a * c - b * b)
    expected = inv @ (X.T @ Y)
    fit = fit_ols(RegressionData(X, Y))
    assert np.allclose(fit.beta, expected, atol=1e-12)
    assert fit.dof == 4
    assert fit.sigma_hat == pytest.approx(np.linalg.norm(fit.residuals) / 2.0)


def test_weighted_fit_equals_row_scaling(rng):
    X = rng.standard_normal((10, 3))
    Y = rng.standard_normal(10)
    w = rng.uniform(0.1, 3.0, 10)
    fit = fit_ols(RegressionData(X, Y, w))
    s = np.sqrt(w)
    ref, *_ = np.linalg.lstsq(X * s[:, None], Y * s, rcond=None)
    assert np.allclose(fit.beta, ref)
    assert np.allclose(fit.residuals, s * (Y - X @ ref))


def test_orthogonality_and_symmetry(rng):
    X = rng.standard_normal((30, 4)) * [1, 10, 100, 0.01]
    Y = rng.standard_normal(30)
    fit = fit_ols(RegressionData(X, Y))
    assert np.abs(X.T @ fit.residuals).max() <= 1e-8 * np.linalg.norm(X) * np.linalg.norm(fit.residuals)
    assert np.array_equal(fit.Sigma, fit.Sigma.T)


def test_rank_deficient_design():
    X = np.column_stack([np.arange(5.0), 2 * np.arange(5.0)])
    with pytest.raises(RankDeficient):
        fit_ols(RegressionData(X, np.ones(5)))


def test_data_validation():
    with pytest.raises(DimensionMismatch):
        RegressionData(np.ones((3, 1)), np.ones(4))
    with pytest.raises(DimensionMismatch):
        RegressionData(np.ones((2, 2)), np.ones(2))      # n < d + 1
    with pytest.raises(ValueError):
        RegressionData([[1.0], [np.nan]], [1.0, 2.0])
    with pytest.raises(ValueError):
        RegressionData([[1.0], [2.0]], [1.0, 2.0], weights=[1.0, 0.0])


def test_normalize_identity_case():
    X = np.vstack([np.eye(2), np.zeros((2, 2))])
    data = RegressionData(X, [1.0, 2.0, 0.0, 0.0])
    norm = normalize(fit_ols(data), data, [1.0, 0.0])
    assert np.allclose(norm.Xn, X)
    assert np.allclose(norm.e_n, [1.0, 0.0])
    assert norm.e_scale == pytest.approx(1.0)


def test_normalize_scaled_direction():
    X = np.vstack([np.eye(2), np.zeros((1, 2))])
    data = RegressionData(X, [1.0, 2.0, 0.0])
    norm = normalize(fit_ols(data), data, [2.0, 0.0])
    assert norm.e_scale == pytest.approx(2.0)
    assert np.allclose(norm.e_n, [1.0, 0.0])


def test_normalize_invariants(rng):
    X = rng.standard_normal((20, 3)) @ np.diag([1.0, 50.0, 0.02])
    data = RegressionData(X, rng.standard_normal(20))
    norm = normalize(fit_ols(data), data, rng.standard_normal(3))
    assert np.abs(norm.Xn.T @ norm.Xn - np.eye(3)).max() <= 1e-8
    assert np.linalg.norm(norm.e_n) == pytest.approx(1.0)
    assert np.array_equal(norm.Z, norm.Xn @ norm.e_n)
    assert np.allclose(norm.R, fit_ols(data).residuals)


def test_normalize_zero_direction(rng):
    data = RegressionData(rng.standard_normal((5, 2)), rng.standard_normal(5))
    with pytest.raises(ZeroDirection):
        normalize(fit_ols(data), data, [0.0, 0.0])


def _normalized_subset_projection(norm, Yw, keep, ):
    Xs = norm.Xn[keep]
    b, *_ = np.linalg.lstsq(Xs, Yw[keep], rcond=None)
    return b @ norm.e_n


def test_whitening_invariance_all_subsets(rng):
    X = rng.standard_normal((8, 2))
    X[:, 1] *= 2.0
    Y = rng.standard_normal(8)
    e = np.array([0.3, -1.2])
    data = RegressionData(X, Y)
    norm = normalize(fit_ols(data), data, e)
    for k in range(0, 6):
        for T in itertools.combinations(range(8), k):
            keep = np.setdiff1d(np.arange(8), T)
            raw = refit_without(data, T) @ e
            whitened = _normalized_subset_projection(norm, Y, keep)
            assert raw == pytest.approx(norm.e_scale * whitened, rel=1e-8, abs=1e-10)


def test_column_rescaling_leaves_subset_fits_unchanged(rng):
    X = rng.standard_normal((8, 2))
    Y = rng.standard_normal(8)
    scaled = X * [1.0, 2.0]
    for T in itertools.combinations(range(8), 3):
        a = refit_without(RegressionData(X, Y), T)
        b = refit_without(RegressionData(scaled, Y), T)
        assert a[0] == pytest.approx(b[0])
        assert a[1] == pytest.approx(2.0 * b[1])


def test_grams_single_sample():
    from olsaudit.regression import NormalizedRegression
    norm = NormalizedRegression(np.array([[1.0]]), np.array([2.0]), np.array([3.0]),
                                np.array([1.0]), 1.0, 0.0)
    g = compute_grams(norm)
    assert g.G_X.tolist() == [[1.0]]
    assert g.G_XX.tolist() == [[1.0]]
    assert g.G_XR.tolist() == [[4.0]]
    assert g.G_XZ.tolist() == [[9.0]]


def test_grams_consistency(rng):
    data = RegressionData(rng.standard_normal((10, 3)), rng.standard_normal(10))
    norm = normalize(fit_ols(data), data, 0)
    g = compute_grams(norm)
    Xn, R, Z = norm.Xn, norm.R, norm.Z
    for M in (g.G_X, g.G_XX, g.G_XR, g.G_XZ):
        assert np.array_equal(M, M.T)
    assert np.array_equal(g.G_XX, g.G_X ** 2)
    direct_xr = np.array([[(R[i] * Xn[i]) @ (R[j] * Xn[j]) for j in range(10)] for i in range(10)])
    direct_xz = np.array([[(Z[i] * Xn[i]) @ (Z[j] * Xn[j]) for j in range(10)] for i in range(10)])
    assert np.allclose(g.G_XR, direct_xr, atol=1e-12)
    assert np.allclose(g.G_XZ, direct_xz, atol=1e-12)
    assert np.all(np.diagonal(g.G_XX) >= 0) and np.all(np.diagonal(g.G_XR) >= 0)
    for kind, M in (("XX", g.G_XX), ("XR", g.G_XR), ("XZ", g.G_XZ)):
        assert np.allclose(gram_rows(norm, kind, slice(2, 7)), M[2:7])


def test_orthonormal_rows_give_identity_gram():
    from olsaudit.regression import NormalizedRegression
    Xn = np.eye(3)
    norm = NormalizedRegression(Xn, np.zeros(3), Xn[:, 0], np.array([1.0, 0, 0]), 1.0, 0.0)
    assert np.array_equal(compute_grams(norm).G_X, np.eye(3))


def test_refit_without_basics(rng):
    X = rng.standard_normal((8, 2))
    Y = rng.standard_normal(8)
    data = RegressionData(X, Y)
    assert np.allclose(refit_without(data, []), fit_ols(data).beta)
    T = (1, 5)
    keep = np.setdiff1d(np.arange(8), T)
    assert np.allclose(refit_without(data, T), fit_ols(RegressionData(X[keep], Y[keep])).beta)
    dup = RegressionData(np.vstack([X, X[:1]]), np.append(Y, Y[0]))
    half = fit_ols(RegressionData(X[1:], Y[1:])).beta
    assert not np.allclose(half, fit_ols(data).beta)
    assert np.allclose(refit_without(dup, [8]), fit_ols(data).beta)


def test_refit_without_singular():
    X = np.column_stack([np.ones(4), [0.0, 0.0, 0.0, 1.0]])
    data = RegressionData(X, [1.0, 2.0, 3.0, 4.0])
    with pytest.raises(RankDeficient):
        refit_without(data, [3])
    beta = refit_without(data, [3], dummy_columns=[1])
    assert beta[0] == pytest.approx(2.0) and np.isnan(beta[1])


def test_exact_delta_hand_example():
    data = RegressionData([[1.0], [1.0], [1.0]], [0.0, 0.0, 3.0])
    assert exact_delta(data, [1.0], 0) == 0.0
    value, T = exact_delta(data, [1.0], 1, return_argmax=True)
    assert value == pytest.approx(1.0) and T == (2,)
    assert exact_k_theta(data, [1.0], 0.5) == 1


def test_exact_delta_all_singular_is_infinite():
    X = np.column_stack([np.ones(4), [0.0, 0.0, 1.0, 1.0]])
    data = RegressionData(X, [1.0, 2.0, 3.0, 5.0])
    # removing 2 of 4 rows leaves two rows: singular when both share x2
    curve = exact_delta_curve(data, [1.0, 0.0], 2)
    assert np.isfinite(curve[2])
    assert exact_delta(data, [1.0, 0.0], 3) == np.inf


def test_exact_delta_budget(rng):
    data = RegressionData(rng.standard_normal((40, 1)), rng.standard_normal(40))
    with pytest.raises(CombinatorialBudgetExceeded):
        exact_delta(data, [1.0], 20, max_subsets=1000)


def test_exact_delta_zero_removals_is_zero(rng):
    data = RegressionData(rng.standard_normal((7, 2)), rng.standard_normal(7))
    assert exact_delta(data, [1.0, 1.0], 0) == 0.0


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(4, 9), d=st.integers(1, 3))
def test_oracle_matches_direct_refits(seed, n, d):
    rng = np.random.default_rng(seed)
    data = RegressionData(rng.standard_normal((n, d)), rng.standard_normal(n))
    e = rng.standard_normal(d)
    beta = fit_ols(data).beta
    k = min(2, n - d - 1)
    best = -np.inf
    for T in itertools.combinations(range(n), k):
        best = max(best, (beta - refit_without(data, T)) @ e)
    assert exact_delta(data, e, k) == pytest.approx(best, rel=1e-9, abs=1e-9)
