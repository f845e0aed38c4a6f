"""Certified removal bounds for regressions with continuous covariates.

For a removal set T in normalized coordinates,

    <beta - beta_S, e> = sum_{i in T} R_i Z_i + <Sigma_S^{-1} Sigma_T e, sum_{i in T} R_i X_i>

The first (linear) term is maximized exactly by sorting.  The second is at
most ``M_XR(k) M_XZ(k) / (1 - M_XX(k))`` where the three factors are MSN
upper bounds on the Gram matrices of ``X_i R_i``, ``X_i Z_i`` and
``X_i (x) X_i``.
"""

from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_features, check_k_max
from .exceptions import NumericalError, UnitMismatch
from .msn import rti_bound, rti_from_rows, spectral_bound
from .regression import (RegressionData, compute_grams, fit_ols,
                         gram_row_source, normalize)

BACKENDS = ("rti", "spectral")


@dataclass(frozen=True)
class RemovalBounds:
    """Per-k sandwich ``L[k] <= Delta_k(e) <= U[k]`` for k = 0..k_max."""

    L: np.ndarray
    U: np.ndarray
    first_order: np.ndarray
    certified_up_to: int
    units: str = "normalized"
    e_scale: float = 1.0
    components: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def k_max(self):
        return len(self.U) - 1

    def to_units(self, units):
        if units == self.units:
            return self
        if units not in ("normalized", "original"):
            raise UnitMismatch(f"unknown units {units!r}")
        f = self.e_scale if units == "original" else 1.0 / self.e_scale
        return replace(self, L=self.L * f, U=self.U * f,
                       first_order=self.first_order * f, units=units)


@dataclass(frozen=True)
class Certificate:
    """No removal of at most ``certified_k_lower`` samples pushes the shift of
    ``<beta, e>`` past ``threshold``; -1 means even k = 0 is not certified."""

    threshold: float
    certified_k_lower: int
    attack_k_upper: int = None

    def __post_init__(self):
        if self.attack_k_upper is not None and not self.certified_k_lower < self.attack_k_upper:
            raise NumericalError(
                f"certificate ({self.certified_k_lower}) contradicts an attack "
                f"that crosses after {self.attack_k_upper} removals")

    @property
    def k_lower(self):
        """Lower bound on the number of removals needed to cross."""
        return self.certified_k_lower + 1


def default_k_max(n, d):
    return max(0, min(n - d - 1, n // 2))


def first_order_term(R, Z, k_max=None):
    """``A[k]`` = sum of the k largest products ``R_i Z_i``; ``A[0] = 0``."""
    p = np.asarray(R, dtype=float) * np.asarray(Z, dtype=float)
    k_max = check_k_max(k_max, p.size)
    A = np.zeros(k_max + 1)
    A[1:] = np.cumsum(np.sort(p)[::-1][:k_max])
    return A


def _parse_backends(backend):
    if backend == "both":
        return BACKENDS
    names = (backend,) if isinstance(backend, str) else tuple(backend)
    for name in names:
        if name not in BACKENDS:
            raise ValueError(f"unknown MSN backend {name!r}; choose from {BACKENDS}")
    return names


def _msn_envelope(norm, grams, kind, backends, k_max):
    """Pointwise minimum of the enabled MSN upper bounds for one Gram matrix."""
    out = None
    for name in backends:
        if name == "rti":
            if grams is not None:
                V = rti_bound(getattr(grams, "G_" + kind), k_max).V
            else:
                V = rti_from_rows(gram_row_source(norm, kind), norm.n, k_max).V
        else:
            if grams is None:
                grams = compute_grams(norm)
            V = spectral_bound(getattr(grams, "G_" + kind), k_max).V
        out = V if out is None else np.minimum(out, V)
    return out


def finalize_bounds(first_upper, first_lower, slack, e_scale, units, components):
    """Assemble ``RemovalBounds`` from first-order terms and a nonnegative
    higher-order slack (``inf`` where uncertifiable)."""
    U = first_upper + slack
    L = first_lower - slack
    U[0] = L[0] = 0.0
    bad = np.flatnonzero(~np.isfinite(U))
    certified_up_to = int(bad[0] - 1) if bad.size else len(U) - 1
    U[certified_up_to + 1:] = np.inf
    L[certified_up_to + 1:] = -np.inf
    bounds = RemovalBounds(L=L, U=U, first_order=first_upper.copy(),
                           certified_up_to=certified_up_to, units="normalized",
                           e_scale=e_scale, components=components)
    return bounds.to_units(units)


def acre_bounds(norm, grams=None, backend="rti", k_max=None, units="normalized"):
    """Certified lower/upper bounds on Delta_k(e) for k = 0..k_max.

    ``grams`` may be omitted; the RTI backend then streams Gram rows and never
    holds an n x n matrix.  With several backends the per-k minimum of each
    MSN bound is used.
    """
    backends = _parse_backends(backend)
    k_max = default_k_max(norm.n, norm.d) if k_max is None else check_k_max(k_max, norm.n)
    A = first_order_term(norm.R, norm.Z, k_max)
    M = {kind: _msn_envelope(norm, grams, kind, backends, k_max)
         for kind in ("XX", "XR", "XZ")}
    den = 1.0 - M["XX"]
    with np.errstate(divide="ignore", invalid="ignore"):
        slack = np.where(den > 0, M["XR"] * M["XZ"] / den, np.inf)
    slack[0] = 0.0
    return finalize_bounds(A, A.copy(), slack, norm.e_scale, units, M)


def certify(bounds, theta, units=None):
    """Largest k such that ``U[k'] <= theta`` for every k' <= k."""
    if units is not None and units != bounds.units:
        raise UnitMismatch(f"threshold given in {units} units, bounds are {bounds.units}")
    ok = bounds.U <= theta
    if not ok[0]:
        return Certificate(threshold=float(theta), certified_k_lower=-1)
    failed = np.flatnonzero(~ok)
    k = int(failed[0] - 1) if failed.size else bounds.k_max
    return Certificate(threshold=float(theta), certified_k_lower=k)


class ACRE(RegressorMixin, BaseEstimator):
    """OLS regressor that also certifies robustness to sample removal.

    Parameters
    ----------
    direction : int or array-like
        Coefficient index, or explicit vector, whose projection is audited.
    backend : {"rti", "spectral", "both"} or tuple
        MSN bounding backend(s).
    k_max : int, optional
        Largest removal count to bound; defaults to ``min(n - d - 1, n // 2)``.
    units : {"original", "normalized"}
        Units of the stored bounds.

    Attributes
    ----------
    coef_ : ndarray of shape (d,)
    bounds_ : RemovalBounds
    lower_bounds_, upper_bounds_, first_order_ : ndarray of shape (k_max + 1,)
    certified_up_to_ : int
    """

    def __init__(self, direction=0, backend="rti", k_max=None, units="original"):
        self.direction = direction
        self.backend = backend
        self.k_max = k_max
        self.units = units

    def fit(self, X, y, sample_weight=None):
        data = RegressionData(X, y, sample_weight)
        self.fit_ = fit_ols(data)
        self.normalized_ = normalize(self.fit_, data, self.direction)
        self.bounds_ = acre_bounds(self.normalized_, backend=self.backend,
                                   k_max=self.k_max, units=self.units)
        self.coef_ = self.fit_.beta
        self.n_features_in_ = data.d
        self.lower_bounds_ = self.bounds_.L
        self.upper_bounds_ = self.bounds_.U
        self.first_order_ = self.bounds_.first_order
        self.certified_up_to_ = self.bounds_.certified_up_to
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        return check_features(X, self.n_features_in_) @ self.coef_

    def certify(self, theta):
        check_is_fitted(self, "bounds_")
        return certify(self.bounds_, theta)

    def k_sign_lower_bound(self):
        """Certified lower bound on the removals needed to flip the sign of
        ``<beta, e>``, or None when the estimate points against ``e``."""
        check_is_fitted(self, "bounds_")
        beta_e = self.normalized_.beta_e
        if beta_e <= 0:
            return None
        theta = beta_e if self.units == "original" else beta_e / self.normalized_.e_scale
        return certify(self.bounds_, theta).k_lower
