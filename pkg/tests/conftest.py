import itertools

import numpy as np
import pytest

from olsaudit.ohare import Buckets, reaverage
from olsaudit.regression import RegressionData, fit_ols, normalize


def random_gram(rng, n, dim=None, kind="gram"):
    """Random symmetric test matrix: a PSD Gram, or one of the three
    Hadamard-type variants the bounds are applied to."""
    dim = dim or int(rng.integers(1, 5))
    V = rng.standard_normal((n, dim)) * rng.uniform(0.2, 2.0)
    G = V @ V.T
    if kind == "squared":
        G = G * G
    elif kind == "scaled":
        s = rng.standard_normal(n)
        G = s[:, None] * G * s[None, :]
    return 0.5 * (G + G.T)


def subset_sums(G, k):
    """Quadratic forms 1_T' G 1_T for every |T| = k, with the subsets."""
    n = G.shape[0]
    subsets = np.array(list(itertools.combinations(range(n), k)), dtype=np.intp)
    if k == 0:
        return np.zeros(1), subsets.reshape(1, 0)
    ind = np.zeros((len(subsets), n))
    np.put_along_axis(ind, subsets, 1.0, axis=1)
    return np.einsum("ti,ij,tj->t", ind, G, ind), subsets


def exhaustive_msn_sq(G, k_max):
    return np.array([subset_sums(G, k)[0].max() for k in range(k_max + 1)])


def constrained_msn_sq(G, labels, k_max, u_max):
    """Max of 1_T' G 1_T over |T| = k touching exactly u buckets (-inf if none)."""
    out = np.full((u_max + 1, k_max + 1), -np.inf)
    out[0, 0] = 0.0
    for k in range(1, k_max + 1):
        q, subsets = subset_sums(G, k)
        touched = np.array([len(set(labels[s])) for s in subsets])
        for u in range(1, u_max + 1):
            sel = touched == u
            if sel.any():
                out[u, k] = q[sel].max()
    return out


def bucketed_instance(rng, n, d, m, weighted=False):
    """Continuous data plus a bucket partition where every bucket is nonempty."""
    X = rng.standard_normal((n, d))
    labels = rng.integers(0, m, n)
    labels[:m] = np.arange(m)
    rng.shuffle(labels)
    mu = rng.standard_normal(m)
    Y = X @ rng.standard_normal(d) + mu[labels] + rng.standard_normal(n)
    w = rng.uniform(0.5, 2.0, n) if weighted else None
    return RegressionData(X, Y, w), Buckets.from_labels(labels, w)


def with_dummies(data, buckets):
    """Full design: continuous columns followed by one indicator per bucket."""
    onehot = np.zeros((data.n, buckets.m))
    onehot[np.arange(data.n), buckets.assignment] = 1.0
    full = RegressionData(np.column_stack([data.X, onehot]), data.Y, data.weights)
    return full, np.arange(data.d, data.d + buckets.m)


def reaveraged_normal(data, buckets, e):
    r = reaverage(data, buckets, e)
    inner = RegressionData(r.Xt, r.Yt)
    return normalize(fit_ols(inner, absorbed=buckets.m), inner, e)


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
