"""OLS fitting, whitening, Gram matrices and brute-force removal oracles.

Everything downstream works in *normalized* coordinates: the (weighted)
design is reparametrized so that its second moment is the identity and the
direction of interest has unit norm.  :func:`normalize` performs that change
of variables and records the scale factor needed to map bounds back to the
original units of ``<beta, e>``.
"""

from dataclasses import dataclass, field
from itertools import combinations
from math import comb

import numpy as np

from ._validation import check_direction, check_regression
from .exceptions import (CombinatorialBudgetExceeded, DimensionMismatch,
                         RankDeficient, ZeroDirection)

#: Largest admissible (column-equilibrated) condition number of X^T X.
COND_LIMIT = 1e12


@dataclass(frozen=True)
class RegressionData:
    """Covariates ``X`` (n x d), labels ``Y`` and optional positive weights."""

    X: np.ndarray
    Y: np.ndarray
    weights: np.ndarray = None

    def __post_init__(self):
        X, Y, w = check_regression(self.X, self.Y, self.weights)
        if X.shape[0] < X.shape[1] + 1:
            raise DimensionMismatch(
                f"need n >= d + 1 samples, got n={X.shape[0]}, d={X.shape[1]}")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "weights", w)

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def d(self):
        return self.X.shape[1]

    def scaled(self):
        """Rows of X and entries of Y multiplied by sqrt(weight)."""
        if self.weights is None:
            return self.X, self.Y
        s = np.sqrt(self.weights)
        return self.X * s[:, None], self.Y * s


@dataclass(frozen=True)
class OlsFit:
    beta: np.ndarray
    Sigma: np.ndarray
    residuals: np.ndarray
    dof: int
    sigma_hat: float


@dataclass(frozen=True)
class NormalizedRegression:
    """Whitened regression: ``Xn.T @ Xn == I`` and ``Z = Xn @ e_n``.

    ``e_scale`` converts normalized shifts of ``<beta, e_n>`` into shifts of
    ``<beta, e>`` in the caller's units.
    """

    Xn: np.ndarray
    R: np.ndarray
    Z: np.ndarray
    e_n: np.ndarray
    e_scale: float
    beta_e: float
    theta_scaled: tuple = field(default=())

    @property
    def n(self):
        return self.Xn.shape[0]

    @property
    def d(self):
        return self.Xn.shape[1]

    def to_normalized(self, theta):
        return np.asarray(theta, dtype=float) / self.e_scale

    def with_thresholds(self, thetas):
        """Copy carrying ``thetas`` (original units) converted to normalized units."""
        scaled = tuple(float(t) / self.e_scale for t in thetas)
        return NormalizedRegression(self.Xn, self.R, self.Z, self.e_n,
                                    self.e_scale, self.beta_e, scaled)

    def flipped(self):
        """The same regression audited along ``-e``."""
        return NormalizedRegression(self.Xn, self.R, -self.Z, -self.e_n,
                                    self.e_scale, -self.beta_e, self.theta_scaled)


@dataclass(frozen=True)
class GramSet:
    G_X: np.ndarray
    G_XX: np.ndarray
    G_XR: np.ndarray
    G_XZ: np.ndarray


def scaled_condition(S):
    """Condition number of ``S`` after symmetric diagonal equilibration.

    Equilibration makes the rank test insensitive to column units (a column
    measured in dollars should not look collinear).  Returns ``inf`` for a
    zero column or a non-positive eigenvalue.
    """
    S = np.asarray(S, dtype=float)
    diag = np.diagonal(S, axis1=-2, axis2=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / np.sqrt(diag)
        Sn = S * inv[..., :, None] * inv[..., None, :]
    bad = ~np.all(diag > 0, axis=-1)
    Sn = np.where(bad[..., None, None], np.eye(S.shape[-1]), Sn)
    ev = np.linalg.eigvalsh(Sn)
    with np.errstate(divide="ignore"):
        cond = np.where(ev[..., 0] > 0, ev[..., -1] / ev[..., 0], np.inf)
    return np.where(bad, np.inf, cond)


def fit_ols(data, absorbed=0):
    """Weighted least squares via sqrt-weight row scaling.

    ``absorbed`` counts parameters partialled out before the fit (one per
    bucket after reaveraging); it only enters the degrees of freedom.
    """
    Xw, Yw = data.scaled()
    Sigma = Xw.T @ Xw
    Sigma = 0.5 * (Sigma + Sigma.T)
    cond = float(scaled_condition(Sigma))
    if not cond < COND_LIMIT:
        raise RankDeficient(
            f"design is rank deficient or collinear (condition number {cond:.3g})")
    beta, *_ = np.linalg.lstsq(Xw, Yw, rcond=None)
    R = Yw - Xw @ beta
    dof = data.n - data.d - int(absorbed)
    sigma_hat = float(np.linalg.norm(R) / np.sqrt(dof)) if dof > 0 else float("nan")
    return OlsFit(beta=beta, Sigma=Sigma, residuals=R, dof=dof, sigma_hat=sigma_hat)


def normalize(fit, data, e):
    """Whiten the design with the symmetric inverse square root of Sigma.

    With the thin SVD ``Xw = U S V^T`` we have ``Xw Sigma^{-1/2} = U V^T``,
    which has orthonormal columns to working precision regardless of the
    conditioning of ``Sigma``.
    """
    e = check_direction(e, data.d)
    if not np.any(e):
        raise ZeroDirection("direction must be nonzero")
    Xw, _ = data.scaled()
    U, s, Vt = np.linalg.svd(Xw, full_matrices=False)
    if s[-1] <= 0 or s[0] / s[-1] > np.sqrt(COND_LIMIT) * 1e3:
        raise RankDeficient("design has (numerically) dependent columns")
    Xn = U @ Vt
    w = Vt.T @ ((Vt @ e) / s)            # Sigma^{-1/2} e
    e_scale = float(np.linalg.norm(w))
    e_n = w / e_scale
    Z = Xn @ e_n
    return NormalizedRegression(Xn=Xn, R=fit.residuals.copy(), Z=Z, e_n=e_n,
                                e_scale=e_scale, beta_e=float(fit.beta @ e))


def compute_grams(norm):
    G_X = norm.Xn @ norm.Xn.T
    G_X = 0.5 * (G_X + G_X.T)
    R, Z = norm.R, norm.Z
    return GramSet(G_X=G_X,
                   G_XX=G_X * G_X,
                   G_XR=np.outer(R, R) * G_X,
                   G_XZ=np.outer(Z, Z) * G_X)


GRAM_KINDS = ("X", "XX", "XR", "XZ")


def gram_rows(norm, kind, rows):
    """Rows ``rows`` of one of the four Gram matrices, without forming n x n."""
    if kind not in GRAM_KINDS:
        raise ValueError(f"unknown Gram kind {kind!r}")
    block = norm.Xn[rows] @ norm.Xn.T
    if kind == "X":
        return block
    if kind == "XX":
        return block * block
    v = norm.R if kind == "XR" else norm.Z
    return np.outer(v[rows], v) * block


def gram_row_source(norm, kind):
    return lambda rows: gram_rows(norm, kind, rows)


# -- brute-force oracles -------------------------------------------------------

def _design_blocks(data):
    Xw, Yw = data.scaled()
    n, d = Xw.shape
    outer = (Xw[:, :, None] * Xw[:, None, :]).reshape(n, d * d)
    cross = Xw * Yw[:, None]
    return Xw, Yw, outer, cross


def _retained_fits(data, keep, dummy_columns):
    """OLS on many retained subsets at once.

    ``keep`` is a boolean (c, n) mask.  Dummy columns that are identically
    zero on the retained rows are dropped (their coefficient is reported as
    0); any other degeneracy marks the subset singular.  Returns
    ``(beta, singular)`` with ``beta`` of shape (c, d).
    """
    Xw, Yw, outer, cross = _design_blocks(data)
    n, d = Xw.shape
    keep_f = keep.astype(float)
    S = (keep_f @ outer).reshape(-1, d, d)
    b = keep_f @ cross
    if dummy_columns is not None and len(dummy_columns):
        dummy_columns = np.asarray(dummy_columns, dtype=np.intp)
        present = keep_f @ (Xw[:, dummy_columns] != 0).astype(float)
        for col_pos, col in enumerate(dummy_columns):
            empty = present[:, col_pos] == 0
            if np.any(empty):
                S[empty, col, :] = 0.0
                S[empty, :, col] = 0.0
                S[empty, col, col] = 1.0
                b[empty, col] = 0.0
    cond = scaled_condition(S)
    singular = ~(cond < COND_LIMIT)
    beta = np.zeros((S.shape[0], d))
    ok = ~singular
    if np.any(ok):
        beta[ok] = np.linalg.solve(S[ok], b[ok][..., None])[..., 0]
    return beta, singular


def refit_without(data, T, dummy_columns=None):
    """OLS coefficients after removing the rows in ``T``.

    Dummy columns left identically zero are dropped and get coefficient NaN.
    Raises :class:`RankDeficient` when the retained design is singular.
    """
    keep = np.ones(data.n, dtype=bool)
    T = np.asarray(list(T), dtype=np.intp)
    keep[T] = False
    beta, singular = _retained_fits(data, keep[None, :], dummy_columns)
    if singular[0]:
        raise RankDeficient(f"retained design singular after removing {len(T)} rows")
    beta = beta[0]
    if dummy_columns is not None:
        Xw, _ = data.scaled()
        for col in dummy_columns:
            if not np.any(Xw[keep, col] != 0):
                beta[col] = np.nan
    return beta


def _full_beta(data, dummy_columns):
    beta, singular = _retained_fits(data, np.ones((1, data.n), dtype=bool),
                                    dummy_columns)
    if singular[0]:
        raise RankDeficient("full design is singular")
    return beta[0]


def exact_delta(data, e, k, dummy_columns=None, max_subsets=10**6,
                return_argmax=False, chunk=4096):
    """max over |T| = k of <beta - beta_S, e> by exhaustive enumeration.

    Subsets whose retained design is singular are excluded; if every subset of
    size ``k`` is singular the result is ``+inf``.
    """
    e = check_direction(e, data.d)
    n = data.n
    if k < 0 or k > n:
        raise ValueError(f"k must lie in [0, {n}]")
    if comb(n, k) > max_subsets:
        raise CombinatorialBudgetExceeded(
            f"C({n}, {k}) = {comb(n, k)} subsets exceeds the budget of {max_subsets}")
    beta = _full_beta(data, dummy_columns)
    if k == 0:
        return (0.0, ()) if return_argmax else 0.0
    best, best_T = -np.inf, None
    it = combinations(range(n), k)
    while True:
        block = np.fromiter((i for c in _take(it, chunk) for i in c), dtype=np.intp)
        if block.size == 0:
            break
        removed = block.reshape(-1, k)
        keep = np.ones((removed.shape[0], n), dtype=bool)
        np.put_along_axis(keep, removed, False, axis=1)
        betas, singular = _retained_fits(data, keep, dummy_columns)
        shifts = (beta - betas) @ e
        shifts[singular] = -np.inf
        j = int(np.argmax(shifts))
        if shifts[j] > best:
            best, best_T = float(shifts[j]), tuple(int(i) for i in removed[j])
    if best == -np.inf:
        best, best_T = np.inf, None
    return (best, best_T) if return_argmax else best


def exact_delta_curve(data, e, k_max, dummy_columns=None, max_subsets=10**6):
    """``[exact_delta(k) for k in 0..k_max]``."""
    return np.array([exact_delta(data, e, k, dummy_columns, max_subsets)
                     for k in range(k_max + 1)])


def exact_k_theta(data, e, theta, k_max=None, dummy_columns=None,
                  max_subsets=10**6):
    """Smallest k with exact Delta_k(e) > theta, or None if none up to k_max."""
    k_max = data.n - 1 if k_max is None else k_max
    for k in range(k_max + 1):
        if exact_delta(data, e, k, dummy_columns, max_subsets) > theta:
            return k
    return None


def _take(it, count):
    for _ in range(count):
        try:
            yield next(it)
        except StopIteration:
            return
