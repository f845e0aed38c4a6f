"""Bounds on the maximal subset-sum norm (MSN) of a set of vectors.

For vectors ``v_1..v_n`` with Gram matrix ``G``::

    MSN_k(G) = max_{|T| = k} || sum_{i in T} v_i || = max_{|T| = k} sqrt(1_T' G 1_T)

Computing MSN exactly is hard, so this module provides cheap *upper* bounds
(refined triangle inequality, spectral) and a greedy *lower* bound.  The
upper bounds operate on row blocks of ``G`` where possible, so callers can
stream rows instead of materializing an n x n matrix.
"""

from dataclasses import dataclass

import numpy as np

from ._validation import check_gram, check_k_max, check_labels
from .exceptions import EigenFailure, InvalidPartition

#: Rows of G processed per block when streaming.
BLOCK_ROWS = 512


@dataclass(frozen=True)
class MsnBoundVector:
    """``V[k]`` bounds the subset-sum norm at size ``k``; ``V[0] == 0``."""

    V: np.ndarray

    def __getitem__(self, k):
        return self.V[k]

    def __len__(self):
        return len(self.V)


@dataclass(frozen=True)
class MsnBoundMatrix:
    """``V[u, k]`` bounds ||sum_T v_i|| over T of size k touching exactly u buckets.

    Row and column 0 are included so that indices match ``u`` and ``k``
    directly.  Infeasible cells hold NaN.
    """

    V: np.ndarray

    @property
    def feasible(self):
        return ~np.isnan(self.V)


@dataclass(frozen=True)
class GreedyMsnResult:
    ordering: np.ndarray
    L: np.ndarray          # L[k] = 1_{T[:k]}' G 1_{T[:k]}, L[0] = 0


def _as_row_source(G):
    return lambda rows: G[rows]


def _iter_blocks(n, block=None):
    block = block or BLOCK_ROWS
    for start in range(0, n, block):
        yield slice(start, min(start + block, n))


def _top_cumsum(A, count, axis=1):
    """Cumulative sums of the ``count`` largest entries along ``axis``,
    prefixed with a zero column.  Assumes ``count <= A.shape[axis]``."""
    A = np.moveaxis(A, axis, -1)
    size = A.shape[-1]
    if count == 0:
        return np.moveaxis(np.zeros(A.shape[:-1] + (1,)), -1, axis)
    if count < size:
        A = np.partition(A, size - count, axis=-1)[..., size - count:]
    top = np.sort(A, axis=-1)[..., ::-1][..., :count]
    out = np.zeros(A.shape[:-1] + (count + 1,))
    np.cumsum(top, axis=-1, out=out[..., 1:])
    return np.moveaxis(out, -1, axis)


# -- refined triangle inequality ---------------------------------------------

def rti_from_rows(row_source, n, k_max=None):
    """RTI bound from a callable returning row blocks of G."""
    k_max = check_k_max(k_max, n)
    if k_max == 0:
        return MsnBoundVector(np.zeros(1))
    C = np.empty((n, k_max + 1))
    for rows in _iter_blocks(n):
        C[rows] = _top_cumsum(row_source(rows), k_max, axis=1)
    # column k of C holds each row's best k-term sum; add up the k best rows
    S = _top_cumsum(C[:, 1:], k_max, axis=0)
    diag = S[np.arange(1, k_max + 1), np.arange(k_max)]
    V = np.zeros(k_max + 1)
    V[1:] = np.sqrt(np.maximum(diag, 0.0))
    return MsnBoundVector(V)


def rti_bound(G, k_max=None):
    """Refined-triangle-inequality upper bound on MSN_k(G) for k = 0..k_max.

    Per row: sort descending and take cumulative sums; per column of that
    table: sort descending and take cumulative sums again; ``V_k`` is the
    square root of the k-th diagonal entry (clamped at zero).
    """
    G = check_gram(G)
    return rti_from_rows(_as_row_source(G), G.shape[0], k_max)


# -- spectral bound -----------------------------------------------------------

def spectral_bound(G, k_max=None):
    """Upper bound on MSN_k(G) from the eigendecomposition of G.

    Writing ``1_T = sum_i alpha_i v_i`` in the eigenbasis, ``alpha_i^2`` is at
    most the larger square of the k smallest / k largest entry sums of
    ``v_i``, and ``sum_i alpha_i^2 = k``.  Filling that budget greedily in
    order of decreasing eigenvalue bounds ``sum_i lambda_i alpha_i^2``.
    """
    G = check_gram(G)
    n = G.shape[0]
    k_max = check_k_max(k_max, n)
    V = np.zeros(k_max + 1)
    if k_max == 0:
        return MsnBoundVector(V)
    try:
        lam, vecs = np.linalg.eigh(G)
    except np.linalg.LinAlgError as exc:
        raise EigenFailure(str(exc)) from exc
    lam = np.maximum(lam[::-1], 0.0)       # descending, PSD clamp
    vecs = vecs[:, ::-1]
    srt = np.sort(vecs, axis=0)
    low = np.cumsum(srt, axis=0)[:k_max]                # k smallest entries
    high = np.cumsum(srt[::-1], axis=0)[:k_max]         # k largest entries
    b = np.maximum(low * low, high * high)              # (k, i)
    ks = np.arange(1, k_max + 1, dtype=float)[:, None]
    before = np.cumsum(b, axis=1) - b
    b = np.clip(np.minimum(b, ks - before), 0.0, None)
    V[1:] = np.sqrt(np.maximum(b @ lam, 0.0))
    return MsnBoundVector(V)


# -- greedy lower bound -------------------------------------------------------

def greedy_lower_bound(G, k_max=None):
    """Greedy candidate set and squared-norm lower bounds ``L_k``.

    Starts from the longest vector and repeatedly adds the index with the
    largest increase of ``1_T' G 1_T`` (ties go to the lowest index).
    """
    G = check_gram(G)
    n = G.shape[0]
    k_max = check_k_max(k_max, n)
    delta = np.diagonal(G).copy()
    taken = np.zeros(n, dtype=bool)
    order = np.empty(k_max, dtype=np.intp)
    L = np.zeros(k_max + 1)
    for k in range(k_max):
        i = int(np.argmax(np.where(taken, -np.inf, delta)))
        order[k] = i
        taken[i] = True
        L[k + 1] = L[k] + delta[i]
        delta += 2.0 * G[i]
    return GreedyMsnResult(ordering=order, L=L)


# -- bucketed (u, k) triangle inequality --------------------------------------

class _BucketLayout:
    """Bucket-sorted permutation plus segment bookkeeping for reduceat."""

    def __init__(self, labels):
        self.perm = np.argsort(labels, kind="stable")
        self.sizes = np.bincount(labels)
        if np.any(self.sizes == 0):
            raise InvalidPartition("bucket ids must be contiguous with no empty bucket")
        self.m = len(self.sizes)
        self.starts = np.concatenate(([0], np.cumsum(self.sizes)[:-1]))
        self.seg_id = np.repeat(np.arange(self.m), self.sizes)

    def split_best(self, A, axis):
        """Per-bucket maxima of ``A`` (already bucket-ordered along ``axis``),
        and a copy of ``A`` with exactly one maximal entry per bucket set to
        -inf."""
        A = np.moveaxis(A, axis, -1)
        best = np.maximum.reduceat(A, self.starts, axis=-1)
        hit = A == best[..., self.seg_id]
        # first hit per segment: running count within the segment equals 1
        run = np.cumsum(hit, axis=-1)
        offset = np.concatenate(
            (np.zeros(A.shape[:-1] + (1,), dtype=run.dtype), run[..., self.starts[1:] - 1]),
            axis=-1)
        first = hit & ((run - offset[..., self.seg_id]) == 1)
        rest = np.where(first, -np.inf, A)
        return np.moveaxis(best, -1, axis), np.moveaxis(rest, -1, axis)


def ku_feasible(sizes, u_max, k_max):
    """Mask of (u, k) for which some T of size k touches exactly u buckets."""
    sizes = np.sort(np.asarray(sizes))[::-1]
    cap = np.concatenate(([0], np.cumsum(sizes)))
    u = np.arange(u_max + 1)[:, None]
    k = np.arange(k_max + 1)[None, :]
    within = np.minimum(u, len(sizes))
    return (u <= len(sizes)) & (u <= k) & (k <= cap[within]) & ((u > 0) | (k == 0))


def ku_from_rows(row_source, labels, u_max=None, k_max=None):
    """KU triangle bound from a callable returning row blocks of G."""
    n = len(labels)
    layout = _BucketLayout(labels)
    m = layout.m
    k_max = check_k_max(k_max, n)
    u_max = min(check_k_max(u_max, m), k_max)
    feasible = ku_feasible(layout.sizes, u_max, k_max)
    V = np.full((u_max + 1, k_max + 1), np.nan)
    V[0, 0] = 0.0
    if k_max == 0 or u_max == 0:
        return MsnBoundMatrix(V)

    pool = n - m                          # entries per row outside the bucket maxima
    kr = min(k_max, pool)
    best_cs = np.empty((n, u_max + 1))    # row-wise: u best per-bucket maxima
    rest_cs = np.full((n, k_max + 1), np.nan)
    perm = layout.perm
    for rows in _iter_blocks(n):
        blk = row_source(perm[rows])[:, perm]
        best, rest = layout.split_best(blk, axis=1)
        best_cs[rows] = _top_cumsum(best, u_max, axis=1)
        rest_cs[rows, :kr + 1] = _top_cumsum(rest, kr, axis=1)

    for u in range(1, u_max + 1):
        ks = np.arange(u, k_max + 1)
        ks = ks[feasible[u, ks]]
        if ks.size == 0:
            continue
        # per-row contribution for every k at this u, rows in bucket order
        contrib = best_cs[:, u][:, None] + rest_cs[:, ks - u]
        col_best, col_rest = layout.split_best(contrib, axis=0)
        top_best = _top_cumsum(col_best, u, axis=0)[u]
        need = int((ks - u).max())
        top_rest = _top_cumsum(col_rest, need, axis=0)
        total = top_best + top_rest[ks - u, np.arange(ks.size)]
        V[u, ks] = np.sqrt(np.maximum(total, 0.0))
    return MsnBoundMatrix(V)


def ku_triangle_bound(G, buckets, u_max=None, k_max=None):
    """Upper bound on the norm of k-subset sums that touch exactly u buckets.

    Each row's entries are split into the largest entry of every bucket and
    the remaining pool.  A set touching u buckets uses at most the u largest
    per-bucket maxima plus the k - u largest pooled entries, both in each row
    and again when summing rows.  Cells where no such set exists are NaN.
    """
    G = check_gram(G)
    labels = check_labels(buckets, G.shape[0])
    return ku_from_rows(_as_row_source(G), labels, u_max, k_max)


# -- exhaustive references (small n only) -------------------------------------

def exhaustive_msn(G, k_max=None):
    """Exact MSN_k(G) by enumerating subsets; exponential, for testing."""
    from itertools import combinations

    G = np.asarray(G, dtype=float)
    n = G.shape[0]
    k_max = check_k_max(k_max, n)
    out = np.zeros(k_max + 1)
    for k in range(1, k_max + 1):
        best = -np.inf
        for T in combinations(range(n), k):
            idx = np.array(T)
            best = max(best, G[np.ix_(idx, idx)].sum())
        out[k] = np.sqrt(max(best, 0.0))
    return out
