"""Input validation helpers shared by the estimators and the functional API."""

import numpy as np
from sklearn.utils import check_array, check_X_y

from .exceptions import (DimensionMismatch, InvalidPartition, NonSquareInput,
                         ZeroDirection)


def check_regression(X, y, sample_weight=None):
    """Validate a design matrix, labels and optional positive weights.

    Returns float64 arrays. Non-finite entries raise ``ValueError`` (via
    scikit-learn); shape problems raise :class:`DimensionMismatch`.
    """
    try:
        X, y = check_X_y(X, y, dtype=np.float64, y_numeric=True,
                         ensure_min_samples=2)
    except ValueError as exc:
        if "inconsistent numbers of samples" in str(exc):
            raise DimensionMismatch(str(exc)) from exc
        raise
    if sample_weight is not None:
        sample_weight = check_array(sample_weight, ensure_2d=False,
                                    dtype=np.float64)
        if sample_weight.shape != y.shape:
            raise DimensionMismatch(
                f"sample_weight has shape {sample_weight.shape}, expected {y.shape}")
        if np.any(sample_weight <= 0):
            raise ValueError("sample weights must be strictly positive")
    return X, y, sample_weight


def check_direction(direction, n_features):
    """Turn a column index or an explicit vector into a length-d float vector."""
    if direction is None:
        raise ZeroDirection("a direction of interest is required")
    if np.isscalar(direction) and isinstance(direction, (int, np.integer)):
        if not 0 <= direction < n_features:
            raise DimensionMismatch(
                f"direction index {direction} out of range for {n_features} features")
        e = np.zeros(n_features)
        e[direction] = 1.0
        return e
    e = np.asarray(direction, dtype=np.float64).ravel()
    if e.shape != (n_features,):
        raise DimensionMismatch(
            f"direction has length {e.size}, expected {n_features}")
    if not np.all(np.isfinite(e)):
        raise ValueError("direction must be finite")
    if not np.any(e):
        raise ZeroDirection("direction must be nonzero")
    return e


def check_gram(G, require_symmetric=True):
    G = np.asarray(G, dtype=np.float64)
    if G.ndim != 2 or G.shape[0] != G.shape[1]:
        raise NonSquareInput(f"expected a square matrix, got shape {G.shape}")
    if require_symmetric and G.size:
        scale = max(np.abs(G).max(), 1.0)
        if np.abs(G - G.T).max() > 1e-9 * scale:
            raise ValueError("Gram matrix must be symmetric")
    return G


def check_labels(labels, n):
    """Validate a bucket assignment and relabel it to 0..m-1 (order of first
    appearance is not preserved; ids are sorted)."""
    labels = np.asarray(labels).ravel()
    if labels.shape != (n,):
        raise InvalidPartition(f"bucket assignment has length {labels.size}, expected {n}")
    _, codes = np.unique(labels, return_inverse=True)
    return codes.astype(np.intp)


def check_k_max(k_max, upper):
    if k_max is None:
        return upper
    k_max = int(k_max)
    if k_max < 0:
        raise ValueError("k_max must be nonnegative")
    return min(k_max, upper)


def check_features(X, n_features):
    X = check_array(X, dtype=np.float64)
    if X.shape[1] != n_features:
        raise DimensionMismatch(f"X has {X.shape[1]} features, expected {n_features}")
    return X
