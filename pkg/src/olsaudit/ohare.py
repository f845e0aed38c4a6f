"""Removal bounds for regressions that control for one categorical feature.

The categorical feature is absorbed by *reaveraging*: every sample has its
bucket's (weighted) projection subtracted, after which OLS on the continuous
block reproduces the continuous coefficients of the full dummy-variable fit.
Removals then act in two ways, directly (as in :mod:`olsaudit.acre`) and
through the shift of each bucket's average.  The second effect is bounded
per bucket as a function of the number ``k_j`` of samples removed from it,
and the per-bucket bounds are combined by knapsack dynamic programs over
``k = k_1 + ... + k_m``.

Notation used below, for bucket ``j`` and a removal set ``T``
(``T_j = T & B_j``, weights ``u_j`` with unit norm, data already whitened):

* ``a_j = sum_{T_j} X_i u_ji``, ``r_j = sum_{T_j} R_i u_ji``, ``z_j = sum_{T_j} Z_i u_ji``
* ``s_j = ||u_{j,S}||^2 = 1 - sum_{T_j} u_ji^2``

Then ``<beta - beta_S, e> = <e, Sh^{-1} w>`` with
``w = sum_T X_i R_i + sum_j a_j r_j / s_j`` and
``Sh = I - Sigma_T - sum_j a_j a_j' / s_j``.
"""

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_direction, check_features, check_k_max, check_labels
from .acre import default_k_max, finalize_bounds
from .exceptions import (BudgetExceedsTotal, DimensionMismatch,
                         DirectionTouchesDummies, EmptyBucket)
from .msn import ku_from_rows, rti_bound, spectral_bound
from .regression import (RegressionData, compute_grams, fit_ols,
                         gram_row_source, normalize)


@dataclass(frozen=True)
class Buckets:
    """Partition of the samples into categories with unit-norm weight vectors.

    ``u[i]`` is the (only) nonzero entry ``u_{b(i), i}``; unweighted buckets
    have ``u = 1 / sqrt(n_j)``.
    """

    assignment: np.ndarray
    u: np.ndarray
    sizes: np.ndarray
    classes: np.ndarray = None

    @classmethod
    def from_labels(cls, labels, weights=None, categories=None):
        """Build buckets from per-sample labels.

        ``categories`` optionally lists the expected levels; a level with no
        sample raises :class:`EmptyBucket`.
        """
        labels = np.asarray(labels).ravel()
        if labels.size == 0:
            raise EmptyBucket("no samples to partition")
        classes = np.unique(labels)
        if categories is not None:
            missing = sorted(set(categories) - set(classes.tolist()))
            if missing:
                raise EmptyBucket(f"categories without samples: {missing}")
        codes = check_labels(labels, labels.size)
        sizes = np.bincount(codes, minlength=len(classes))
        w = np.ones(labels.size) if weights is None else np.asarray(weights, dtype=float)
        if w.shape != labels.shape:
            raise DimensionMismatch("weights and bucket labels differ in length")
        mass = np.bincount(codes, weights=w, minlength=len(classes))
        u = np.sqrt(w / mass[codes])
        return cls(assignment=codes, u=u, sizes=sizes, classes=classes)

    @property
    def m(self):
        return len(self.sizes)

    @property
    def n(self):
        return len(self.assignment)

    def members(self):
        order = np.argsort(self.assignment, kind="stable")
        return np.split(order, np.cumsum(self.sizes)[:-1])

    def project(self, V):
        """Per-bucket projections ``sum_{i in B_j} u_ji V_i`` (rows of V)."""
        V = np.asarray(V, dtype=float)
        out = np.zeros((self.m,) + V.shape[1:])
        np.add.at(out, self.assignment, self.u.reshape((-1,) + (1,) * (V.ndim - 1)) * V)
        return out


@dataclass(frozen=True)
class ReaveragedRegression:
    Xt: np.ndarray
    Yt: np.ndarray
    bucket_means: tuple          # (per-bucket projections of X, of Y)


@dataclass(frozen=True)
class FirstOrderTables:
    """Per bucket, arrays over k_j = 0..n_j.

    ``r_hi``/``r_lo`` are the largest/smallest sums of ``R_i u_ji`` over
    k_j-subsets (likewise ``z_*`` for Z); ``c_plus``/``c_minus`` bound the
    product ``r_j z_j`` from above/below.
    """

    d: list
    c_plus: list
    c_minus: list
    bound_plus: list
    bound_minus: list
    r_hi: list
    r_lo: list
    z_hi: list
    z_lo: list


@dataclass(frozen=True)
class BucketBoundTables:
    M: list
    Ubar: list
    rho: list
    zeta: list

    def _ratio(self, num):
        out = []
        for top, ubar in zip(num, self.Ubar):
            r = np.zeros_like(top)
            pos = ubar > 0
            r[pos] = top[pos] / ubar[pos]
            out.append(r)
        return out

    def indirect_cs(self):
        return self._ratio([M * M for M in self.M])

    def indirect_xr(self):
        return self._ratio([M * r for M, r in zip(self.M, self.rho)])

    def indirect_xz(self):
        return self._ratio([M * z for M, z in zip(self.M, self.zeta)])


@dataclass(frozen=True)
class DpTable:
    """``F[k]`` (1D) or ``F[u, k]`` (2D); infeasible cells are -inf."""

    F: np.ndarray


def reaverage(data, buckets, e=None):
    """Subtract each bucket's weighted projection from features and labels.

    Weights are folded in: the returned arrays live in sqrt-weight-scaled
    space, so an unweighted OLS of ``Yt`` on ``Xt`` equals the continuous
    block of the weighted dummy-variable regression.
    """
    if buckets.n != data.n:
        raise DimensionMismatch("bucket assignment does not match the data")
    if e is not None:
        e = np.asarray(e, dtype=float).ravel()
        if e.size == data.d + buckets.m:
            if np.any(e[data.d:]):
                raise DirectionTouchesDummies(
                    "the audited direction must be orthogonal to the dummy columns")
            e = e[:data.d]
        check_direction(e, data.d)
    Xw, Yw = data.scaled()
    px = buckets.project(Xw)
    py = buckets.project(Yw)
    Xt = Xw - px[buckets.assignment] * buckets.u[:, None]
    Yt = Yw - py[buckets.assignment] * buckets.u
    return ReaveragedRegression(Xt=Xt, Yt=Yt, bucket_means=(px, py))


def _desc_cumsum(v, count=None):
    v = np.sort(np.asarray(v, dtype=float))[::-1]
    out = np.zeros(v.size + 1)
    np.cumsum(v, out=out[1:])
    return out if count is None else out[:count + 1]


def _ubar(u_vals):
    """``1 - (largest k_j squared weights)``, exactly 0 at k_j = n_j."""
    ub = 1.0 - _desc_cumsum(u_vals * u_vals)
    ub[-1] = 0.0
    return np.clip(ub, 0.0, 1.0)


def bucket_first_order_tables(R, Z, buckets):
    """Per-bucket extremes of the direct and reaveraging first-order terms.

    ``bound_plus[j][k]`` bounds from above the largest contribution that
    removing ``k`` samples of bucket ``j`` can make to the first-order shift;
    ``bound_minus[j][k]`` is attained by the direct maximizer up to a
    correction that is bounded from below.
    """
    R = np.asarray(R, dtype=float)
    Z = np.asarray(Z, dtype=float)
    names = ("d", "c_plus", "c_minus", "bound_plus", "bound_minus",
             "r_hi", "r_lo", "z_hi", "z_lo")
    tables = {name: [] for name in names}
    for idx in buckets.members():
        u = buckets.u[idx]
        r, z = R[idx] * u, Z[idx] * u
        d = _desc_cumsum(R[idx] * Z[idx])
        r_hi, r_lo = _desc_cumsum(r), -_desc_cumsum(-r)
        z_hi, z_lo = _desc_cumsum(z), -_desc_cumsum(-z)
        corners = np.stack([r_hi * z_hi, r_lo * z_lo, r_hi * z_lo, r_lo * z_hi])
        c_plus, c_minus = corners.max(axis=0), corners.min(axis=0)
        c_plus[0] = c_minus[0] = 0.0
        ubar = _ubar(u)
        n_j = idx.size
        plus, minus = d.copy(), d.copy()
        inner = slice(1, n_j)
        # s_j lies in [Ubar, 1]: divide by Ubar only when that enlarges |c|
        plus[inner] += np.where(c_plus[inner] > 0, c_plus[inner] / ubar[inner], c_plus[inner])
        minus[inner] += np.where(c_minus[inner] < 0, c_minus[inner] / ubar[inner], c_minus[inner])
        for name, arr in zip(names, (d, c_plus, c_minus, plus, minus,
                                     r_hi, r_lo, z_hi, z_lo)):
            tables[name].append(arr)
    return FirstOrderTables(**tables)


def _symmetrize(a):
    """``a[k] := min(a[k], a[n - k])``, valid for sums over zero-sum buckets."""
    return np.minimum(a, a[::-1])


def bucket_higher_order_tables(Xn, R, Z, buckets):
    """Per-bucket bounds on ``||a_j||``, ``|r_j|``, ``|z_j|`` and ``min s_j``.

    ``M`` comes from RTI on the bucket's Gram matrix of ``X_i u_ji``; the
    three norm tables are refined with ``a(k) = a(n_j - k)`` which holds
    because each reaveraged bucket sums to zero.
    """
    Xn = np.asarray(Xn, dtype=float)
    M, U, rho, zeta = [], [], [], []
    for idx in buckets.members():
        u = buckets.u[idx]
        V = Xn[idx] * u[:, None]
        G = V @ V.T
        M.append(_symmetrize(rti_bound(0.5 * (G + G.T)).V))
        U.append(_ubar(u))
        rho.append(_symmetrize(_desc_cumsum(np.abs(R[idx] * u))))
        zeta.append(_symmetrize(_desc_cumsum(np.abs(Z[idx] * u))))
    return BucketBoundTables(M=M, Ubar=U, rho=rho, zeta=zeta)


def dp_knapsack_1d(tables, k_max):
    """``F[k] = max sum_j t_j(k_j)`` over ``k_1 + ... + k_m = k``, ``k_j <= n_j``."""
    total = sum(len(t) - 1 for t in tables)
    if k_max > total:
        raise BudgetExceedsTotal(f"k_max={k_max} exceeds the {total} available samples")
    F = np.full(k_max + 1, -np.inf)
    F[0] = 0.0
    for t in tables:
        t = np.asarray(t, dtype=float)
        new = F + t[0]
        for dk in range(1, min(len(t) - 1, k_max) + 1):
            np.maximum(new[dk:], F[:-dk] + t[dk], out=new[dk:])
        F = new
    return DpTable(F)


def dp_knapsack_2d(tables, u_max, k_max):
    """As :func:`dp_knapsack_1d` with exactly ``u`` buckets having ``k_j >= 1``."""
    total = sum(len(t) - 1 for t in tables)
    if k_max > total:
        raise BudgetExceedsTotal(f"k_max={k_max} exceeds the {total} available samples")
    F = np.full((u_max + 1, k_max + 1), -np.inf)
    F[0, 0] = 0.0
    if u_max == 0:
        return DpTable(F)
    for t in tables:
        t = np.asarray(t, dtype=float)
        new = F + t[0]
        for dk in range(1, min(len(t) - 1, k_max) + 1):
            np.maximum(new[1:, dk:], F[:-1, :-dk] + t[dk], out=new[1:, dk:])
        F = new
    return DpTable(F)


def ohare_bounds(norm, buckets, k_max=None, backend="rti", units="normalized"):
    """Certified bounds for a whitened, reaveraged regression.

    ``norm`` must come from :func:`normalize` applied to the reaveraged data.
    For each k the higher-order slack is the maximum over the number ``u`` of
    touched buckets of ``(XR_u * XZ_u) / (1 - CS_u)``, where each factor sums
    a direct KU bound and an indirect DP bound.  If any feasible ``u`` has a
    non-positive denominator the bound for that k is infinite.
    """
    if backend not in ("rti", "spectral", "both"):
        raise ValueError(f"unknown backend {backend!r}")
    n = norm.n
    k_max = default_k_max(n, norm.d) if k_max is None else check_k_max(k_max, n)
    u_max = min(buckets.m, k_max)

    first = bucket_first_order_tables(norm.R, norm.Z, buckets)
    infl_plus = dp_knapsack_1d(first.bound_plus, k_max).F
    infl_minus = dp_knapsack_1d(first.bound_minus, k_max).F

    higher = bucket_higher_order_tables(norm.Xn, norm.R, norm.Z, buckets)
    indirect = {
        "XX": dp_knapsack_2d(higher.indirect_cs(), u_max, k_max).F,
        "XR": dp_knapsack_2d(higher.indirect_xr(), u_max, k_max).F,
        "XZ": dp_knapsack_2d(higher.indirect_xz(), u_max, k_max).F,
    }
    direct = {}
    for kind in ("XX", "XR", "XZ"):
        direct[kind] = ku_from_rows(gram_row_source(norm, kind), buckets.assignment,
                                    u_max=u_max, k_max=k_max).V
    if backend != "rti":
        grams = compute_grams(norm)
        for kind in ("XX", "XR", "XZ"):
            spec = spectral_bound(getattr(grams, "G_" + kind), k_max).V
            direct[kind] = np.where(np.isnan(direct[kind]), np.nan,
                                    np.minimum(direct[kind], spec[None, :]))

    feasible = (~np.isnan(direct["XX"])) & np.isfinite(indirect["XX"])
    feasible[0, :] = False
    cs = direct["XX"] + indirect["XX"]
    xr = direct["XR"] + indirect["XR"]
    xz = direct["XZ"] + indirect["XZ"]
    den = 1.0 - cs
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(den > 0, np.abs(xr) * np.abs(xz) / den, np.inf)
    ratio = np.where(feasible, ratio, -np.inf)
    slack = ratio.max(axis=0)
    slack[0] = 0.0
    slack[~feasible.any(axis=0) & (np.arange(k_max + 1) > 0)] = np.inf

    components = {"direct": direct, "indirect": indirect,
                  "influences_plus": infl_plus.copy(), "influences_minus": infl_minus}
    return finalize_bounds(infl_plus, infl_minus, slack, norm.e_scale, units, components)


class OHARE(RegressorMixin, BaseEstimator):
    """Dummy-variable OLS regressor with certified removal bounds.

    The categorical feature is passed separately as ``groups``; its dummy
    columns are absorbed and never appear in ``X``.  ``direction`` refers to
    the continuous columns only.
    """

    def __init__(self, direction=0, backend="rti", k_max=None, units="original"):
        self.direction = direction
        self.backend = backend
        self.k_max = k_max
        self.units = units

    def fit(self, X, y, groups, sample_weight=None):
        data = RegressionData(X, y, sample_weight)
        buckets = Buckets.from_labels(groups, sample_weight)
        e = check_direction(self.direction, data.d)
        reavg = reaverage(data, buckets, e)
        inner = RegressionData(reavg.Xt, reavg.Yt)
        self.fit_ = fit_ols(inner, absorbed=buckets.m)
        self.normalized_ = normalize(self.fit_, inner, e)
        self.bounds_ = ohare_bounds(self.normalized_, buckets, k_max=self.k_max,
                                    backend=self.backend, units=self.units)
        self.buckets_ = buckets
        self.coef_ = self.fit_.beta
        Xw, Yw = data.scaled()
        offsets = buckets.project(Yw - Xw @ self.coef_)
        self.intercepts_ = offsets / np.sqrt(np.bincount(
            buckets.assignment,
            weights=np.ones(data.n) if sample_weight is None else data.weights))
        self.classes_ = buckets.classes
        self.n_features_in_ = data.d
        self.lower_bounds_ = self.bounds_.L
        self.upper_bounds_ = self.bounds_.U
        self.first_order_ = self.bounds_.first_order
        self.certified_up_to_ = self.bounds_.certified_up_to
        return self

    def predict(self, X, groups):
        check_is_fitted(self, "coef_")
        X = check_features(X, self.n_features_in_)
        groups = np.asarray(groups).ravel()
        pos = np.clip(np.searchsorted(self.classes_, groups), 0, len(self.classes_) - 1)
        if np.any(self.classes_[pos] != groups):
            raise ValueError("unknown category in groups")
        return X @ self.coef_ + self.intercepts_[pos]

    def certify(self, theta):
        from .acre import certify
        check_is_fitted(self, "bounds_")
        return certify(self.bounds_, theta)
