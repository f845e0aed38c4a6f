import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import (constrained_msn_sq, exhaustive_msn_sq, random_gram,
                      subset_sums)
from olsaudit.exceptions import InvalidPartition, NonSquareInput
from olsaudit.msn import (exhaustive_msn, greedy_lower_bound, ku_feasible,
                          ku_from_rows, ku_triangle_bound, rti_bound,
                          rti_from_rows, spectral_bound)

TOL = 1e-8


def test_rti_trivial_cases():
    assert rti_bound([[1.0]]).V.tolist() == [0.0, 1.0]
    V = rti_bound(np.eye(2)).V
    assert V == pytest.approx([0.0, 1.0, np.sqrt(2.0)])


def test_rti_rejects_non_square():
    with pytest.raises(NonSquareInput):
        rti_bound(np.ones((2, 3)))


def test_rti_clamps_negative_totals():
    G = np.array([[0.0, -1.0], [-1.0, 0.0]])
    assert rti_bound(G).V.tolist() == [0.0, 0.0, 0.0]


def test_rti_streaming_matches_dense(rng):
    G = random_gram(rng, 30, 4)
    calls = []

    def source(rows):
        calls.append(rows)
        return G[rows]

    import olsaudit.msn as msn
    old = msn.BLOCK_ROWS
    msn.BLOCK_ROWS = 7
    try:
        streamed = rti_from_rows(source, 30, 12).V
    finally:
        msn.BLOCK_ROWS = old
    assert len(calls) == 5
    assert np.array_equal(streamed, rti_bound(G, 12).V)


def test_rti_against_exhaustive_8_in_3d(rng):
    G = random_gram(rng, 8, 3)
    truth = exhaustive_msn(G)
    assert np.all(rti_bound(G).V >= truth - TOL)


def test_spectral_trivial_and_rank_one():
    V = spectral_bound(np.eye(2)).V
    assert V[1] >= 1.0 - TOL and V[2] >= np.sqrt(2.0) - TOL
    n = 7
    q = np.ones(n) / np.sqrt(n)
    V = spectral_bound(np.outer(q, q)).V
    assert V == pytest.approx(np.arange(n + 1) / np.sqrt(n), abs=1e-12)


def test_spectral_against_exhaustive_10(rng):
    G = random_gram(rng, 10, 10)
    assert np.all(spectral_bound(G).V >= exhaustive_msn(G) - TOL)


def test_greedy_small_cases():
    assert greedy_lower_bound(np.eye(2)).L.tolist() == [0.0, 1.0, 2.0]
    res = greedy_lower_bound(np.ones((2, 2)))
    assert res.L[2] == 4.0


def test_greedy_ties_break_to_lowest_index():
    assert greedy_lower_bound(np.eye(4), 3).ordering.tolist() == [0, 1, 2]


def test_greedy_recomputable_and_below_truth(rng):
    G = random_gram(rng, 8, 3, kind="scaled")
    res = greedy_lower_bound(G)
    truth = exhaustive_msn_sq(G, 8)
    for k in range(9):
        T = res.ordering[:k]
        direct = G[np.ix_(T, T)].sum()
        assert res.L[k] == pytest.approx(direct, rel=1e-10, abs=1e-12)
        assert res.L[k] <= truth[k] + TOL


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 10),
       kind=st.sampled_from(["gram", "squared", "scaled"]))
def test_sandwich_property(seed, n, kind):
    rng = np.random.default_rng(seed)
    G = random_gram(rng, n, kind=kind)
    truth = np.sqrt(np.maximum(exhaustive_msn_sq(G, n), 0.0))
    lower = np.sqrt(np.maximum(greedy_lower_bound(G).L, 0.0))
    upper = np.minimum(rti_bound(G).V, spectral_bound(G).V)
    assert np.all(lower <= truth + TOL)
    assert np.all(truth <= upper + TOL)
    assert np.all(upper >= 0) and np.all(np.isfinite(upper))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 12))
def test_permutation_equivariance(seed, n):
    rng = np.random.default_rng(seed)
    G = random_gram(rng, n, kind="scaled")
    p = rng.permutation(n)
    Gp = G[np.ix_(p, p)]
    assert np.allclose(rti_bound(Gp).V, rti_bound(G).V, rtol=1e-12, atol=1e-12)
    assert np.allclose(spectral_bound(Gp).V, spectral_bound(G).V, rtol=1e-9, atol=1e-9)


def test_ku_feasibility_mask():
    mask = ku_feasible([3, 1], 2, 4)
    expected = np.array([[1, 0, 0, 0, 0],
                         [0, 1, 1, 1, 0],
                         [0, 0, 1, 1, 1]], dtype=bool)
    assert np.array_equal(mask, expected)


def test_ku_single_bucket_equals_rti(rng):
    G = random_gram(rng, 8, 3)
    V = ku_triangle_bound(G, np.zeros(8, dtype=int), u_max=1, k_max=8).V
    truth = exhaustive_msn(G)
    assert np.allclose(V[1, 1:], rti_bound(G).V[1:])
    assert np.all(V[1, 1:] >= truth[1:] - TOL)
    assert np.isnan(V[1, 0]) and V[0, 0] == 0.0


def test_ku_singletons_equal_rti(rng):
    G = random_gram(rng, 6, 2, kind="scaled")
    V = ku_triangle_bound(G, np.arange(6), u_max=6, k_max=6).V
    rti = rti_bound(G).V
    for k in range(1, 7):
        assert V[k, k] == pytest.approx(rti[k])
        assert np.all(np.isnan(np.delete(V[:, k], k)))


def test_ku_two_buckets_of_three(rng):
    G = random_gram(rng, 6, 3, kind="squared")
    labels = np.array([0, 0, 0, 1, 1, 1])
    V = ku_triangle_bound(G, labels, u_max=2, k_max=6).V
    truth = constrained_msn_sq(G, labels, 6, 2)
    feasible = np.isfinite(truth)
    assert np.array_equal(feasible, ~np.isnan(V))
    assert np.all(V[feasible] >= np.sqrt(np.maximum(truth[feasible], 0)) - TOL)


def test_ku_streaming_matches_dense(rng):
    G = random_gram(rng, 20, 3, kind="scaled")
    labels = rng.integers(0, 4, 20)
    labels[:4] = np.arange(4)
    import olsaudit.msn as msn
    dense = ku_triangle_bound(G, labels, 4, 10).V
    old = msn.BLOCK_ROWS
    msn.BLOCK_ROWS = 3
    try:
        streamed = ku_from_rows(lambda rows: G[rows], labels, 4, 10).V
    finally:
        msn.BLOCK_ROWS = old
    assert np.array_equal(np.isnan(dense), np.isnan(streamed))
    assert np.allclose(dense[~np.isnan(dense)], streamed[~np.isnan(streamed)])


def test_ku_rejects_empty_bucket(rng):
    G = random_gram(rng, 4, 2)
    with pytest.raises(InvalidPartition):
        ku_from_rows(lambda rows: G[rows], np.array([0, 0, 2, 2]), 2, 3)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 10), m=st.integers(1, 3),
       kind=st.sampled_from(["gram", "squared", "scaled"]))
def test_ku_dominance_property(seed, n, m, kind):
    rng = np.random.default_rng(seed)
    m = min(m, n)
    G = random_gram(rng, n, kind=kind)
    labels = rng.integers(0, m, n)
    labels[:m] = np.arange(m)
    V = ku_triangle_bound(G, labels, u_max=m, k_max=n).V
    truth = constrained_msn_sq(G, labels, n, m)
    feasible = np.isfinite(truth)
    assert np.array_equal(feasible, ~np.isnan(V))
    assert np.all(V[feasible] >= np.sqrt(np.maximum(truth[feasible], 0)) - TOL)
    unconstrained = np.sqrt(np.maximum(exhaustive_msn_sq(G, n), 0))
    assert np.all(np.nanmax(V, axis=0) >= unconstrained - TOL)


def test_subset_sums_helper():
    q, subsets = subset_sums(np.eye(3), 2)
    assert q.tolist() == [2.0, 2.0, 2.0] and subsets.shape == (3, 2)
