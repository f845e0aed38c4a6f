"""Attack-side baselines: influence-ranked removal with exact refits.

Removing samples one at a time in order of their first-order influence and
refitting after each step produces an explicit removal set, so any reported
``k_found`` is a genuine upper bound on the number of removals needed.
"""

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import check_direction
from .exceptions import RankDeficient
from .regression import COND_LIMIT, RegressionData, refit_without, scaled_condition

#: Steps between full recomputations of the retained moment matrices.
RESYNC_EVERY = 64


@dataclass(frozen=True)
class AttackResult:
    """Outcome of a removal attack.

    ``achieved_shift[k]`` is ``<beta - beta_S, e>`` after removing the first
    ``k`` entries of ``removal_order`` (so ``achieved_shift[0] == 0``).
    ``k_found`` is the first k whose shift reaches ``threshold``; None when
    the attack never crosses.  ``partial`` flags an attack cut short by a
    singular retained design.
    """

    removal_order: np.ndarray
    achieved_shift: np.ndarray
    k_found: int
    threshold: float
    partial: bool = False


class _RetainedSystem:
    """Normal equations of the retained rows, downdated one row at a time."""

    def __init__(self, Xw, Yw, dummy_columns):
        self.Xw, self.Yw = Xw, Yw
        self.keep = np.ones(Xw.shape[0], dtype=bool)
        self.dummy = np.asarray(dummy_columns if dummy_columns is not None else [],
                                dtype=np.intp)
        self.nonzero = Xw[:, self.dummy] != 0
        self.resync()

    def resync(self):
        Xk = self.Xw[self.keep]
        self.S = Xk.T @ Xk
        self.b = Xk.T @ self.Yw[self.keep]
        self.count = self.nonzero[self.keep].sum(axis=0)

    def remove(self, i):
        x = self.Xw[i]
        self.S -= np.outer(x, x)
        self.b -= x * self.Yw[i]
        self.count -= self.nonzero[i]
        self.keep[i] = False

    def _effective(self):
        S, b = self.S.copy(), self.b.copy()
        for col in self.dummy[self.count == 0]:
            S[col, :] = S[:, col] = 0.0
            S[col, col] = 1.0
            b[col] = 0.0
        return 0.5 * (S + S.T), b

    def solve(self, rhs=None):
        """Coefficients (or ``S^{-1} rhs``); None when the design is singular."""
        S, b = self._effective()
        if not scaled_condition(S) < COND_LIMIT:
            return None
        return np.linalg.solve(S, b if rhs is None else rhs)


def _scores(system, beta, e):
    h = system.solve(e)
    R = system.Yw - system.Xw @ beta
    return R * (system.Xw @ h)


def influence_scores(data, e, dummy_columns=None):
    """First-order effect of removing each sample on ``<beta, e>``:
    ``alpha_i = R_i x_i' Sigma^{-1} e`` in the weighted design."""
    e = check_direction(e, data.d)
    Xw, Yw = data.scaled()
    system = _RetainedSystem(Xw, Yw, dummy_columns)
    beta = system.solve()
    if beta is None:
        raise RankDeficient("full design is singular")
    return _scores(system, beta, e)


def amip_attack(data, e, theta, adaptive=False, dummy_columns=None,
                max_removals=None):
    """Greedy influence attack on ``<beta, e>`` with threshold ``theta``.

    Non-adaptive: rank all samples once by their influence score and remove
    them in that order.  Adaptive: recompute residuals, the retained
    covariance and the scores after every removal and take the current top
    sample.  Either way the coefficients are refit after each removal and
    the crossing step is confirmed by an independent full refit.
    """
    if not isinstance(data, RegressionData):
        raise TypeError("data must be a RegressionData")
    e = check_direction(e, data.d)
    n, d = data.n, data.d
    max_removals = n - d - 1 if max_removals is None else min(int(max_removals), n - 1)
    Xw, Yw = data.scaled()
    system = _RetainedSystem(Xw, Yw, dummy_columns)
    beta0 = system.solve()
    if beta0 is None:
        raise RankDeficient("full design is singular")
    beta = beta0
    ranking = None if adaptive else np.argsort(-_scores(system, beta0, e), kind="stable")

    order, shifts = [], [0.0]
    partial = False
    k_found = 0 if 0.0 >= theta else None
    while k_found is None and len(order) < max_removals:
        if adaptive:
            scores = np.where(system.keep, _scores(system, beta, e), -np.inf)
            i = int(np.argmax(scores))
        else:
            i = int(ranking[len(order)])
        system.remove(i)
        if len(order) % RESYNC_EVERY == RESYNC_EVERY - 1:
            system.resync()
        beta_new = system.solve()
        if beta_new is None:
            partial = True
            break
        beta = beta_new
        order.append(i)
        shifts.append(float((beta0 - beta) @ e))
        if shifts[-1] >= theta:
            k = len(order)
            verified = _refit_shift(data, order[:k], beta0, e, dummy_columns)
            shifts[-1] = verified
            if verified >= theta:
                k_found = k

    return AttackResult(removal_order=np.asarray(order, dtype=np.intp),
                        achieved_shift=np.asarray(shifts),
                        k_found=k_found, threshold=float(theta), partial=partial)


def _refit_shift(data, T, beta0, e, dummy_columns):
    try:
        beta = refit_without(data, T, dummy_columns)
    except RankDeficient:
        return -np.inf
    beta = np.where(np.isnan(beta), 0.0, beta)
    return float((beta0 - beta) @ e)


class AMIPAttack(BaseEstimator):
    """Estimator wrapper around :func:`amip_attack`.

    After ``fit``: ``result_`` (an :class:`AttackResult`), ``k_found_`` and
    ``removal_order_``.
    """

    def __init__(self, direction=0, theta=0.0, adaptive=False, max_removals=None):
        self.direction = direction
        self.theta = theta
        self.adaptive = adaptive
        self.max_removals = max_removals

    def fit(self, X, y, sample_weight=None, dummy_columns=None):
        data = RegressionData(X, y, sample_weight)
        self.result_ = amip_attack(data, self.direction, self.theta,
                                   adaptive=self.adaptive,
                                   dummy_columns=dummy_columns,
                                   max_removals=self.max_removals)
        self.k_found_ = self.result_.k_found
        self.removal_order_ = self.result_.removal_order
        self.n_features_in_ = data.d
        return self
