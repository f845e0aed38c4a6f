"""Seeded synthetic regressions and the one-hot brittleness construction.

All randomness comes from ``numpy.random.default_rng(seed)``, i.e. the PCG64
bit generator, whose streams are identical across platforms for a given
numpy release family.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DegenerateUnfixable, InvalidSpec, IoFailure
from .ohare import Buckets
from .regression import COND_LIMIT, RegressionData, scaled_condition

COVARIATE_LAWS = ("gaussian", "sphere", "hypercube")

#: Attempts at a random non-degeneracy nudge before giving up.
NUDGE_ATTEMPTS = 16


@dataclass(frozen=True)
class SyntheticSpec:
    n: int
    d: int
    m: int = 1
    bucket_sizes: tuple = None
    beta_gt: tuple = None
    mu: tuple = None
    sigma: float = 1.0
    covariate_law: str = "gaussian"
    seed: int = 0

    def resolved(self):
        """Copy with defaults filled in (even bucket split, unit beta, zero
        offsets), after validation."""
        if self.n < 1 or self.d < 1 or self.m < 1:
            raise InvalidSpec("n, d and m must be positive")
        if self.m > self.n:
            raise InvalidSpec("more buckets than samples")
        if not self.sigma >= 0:
            raise InvalidSpec("sigma must be nonnegative")
        if self.covariate_law not in COVARIATE_LAWS:
            raise InvalidSpec(f"unknown covariate law {self.covariate_law!r}")
        sizes = self.bucket_sizes
        if sizes is None:
            base, extra = divmod(self.n, self.m)
            sizes = [base + (j < extra) for j in range(self.m)]
        sizes = tuple(int(s) for s in sizes)
        if len(sizes) != self.m or min(sizes) < 1 or sum(sizes) != self.n:
            raise InvalidSpec(f"bucket sizes {sizes} must be {self.m} positive integers summing to {self.n}")
        beta = tuple(np.ones(self.d)) if self.beta_gt is None else tuple(map(float, self.beta_gt))
        mu = tuple(np.zeros(self.m)) if self.mu is None else tuple(map(float, self.mu))
        if len(beta) != self.d or len(mu) != self.m:
            raise InvalidSpec("beta_gt must have length d and mu length m")
        return SyntheticSpec(self.n, self.d, self.m, sizes, beta, mu,
                             float(self.sigma), self.covariate_law, int(self.seed))


def sample_covariates(rng, law, n, d):
    """Isotropic (identity second moment) draws from one of the supported laws."""
    if law == "gaussian":
        return rng.standard_normal((n, d))
    if law == "sphere":
        g = rng.standard_normal((n, d))
        return np.sqrt(d) * g / np.linalg.norm(g, axis=1, keepdims=True)
    if law == "hypercube":
        return rng.uniform(-np.sqrt(3.0), np.sqrt(3.0), size=(n, d))
    raise InvalidSpec(f"unknown covariate law {law!r}")


def generate(spec):
    """Draw ``(RegressionData, Buckets)`` with
    ``Y_i = mu_{j(i)} + <X_i, beta_gt> + sigma * N(0, 1)``.

    Buckets are contiguous blocks of rows in the order of ``bucket_sizes``.
    """
    spec = spec.resolved()
    rng = np.random.default_rng(spec.seed)
    X = sample_covariates(rng, spec.covariate_law, spec.n, spec.d)
    labels = np.repeat(np.arange(spec.m), spec.bucket_sizes)
    noise = rng.standard_normal(spec.n)
    Y = np.asarray(spec.mu)[labels] + X @ np.asarray(spec.beta_gt) + spec.sigma * noise
    return RegressionData(X, Y), Buckets.from_labels(labels)


def write_csv(path, data, buckets=None, feature_names=None, target_name="y",
              bucket_name="bucket"):
    """Write a dataset in the CSV layout read by :mod:`olsaudit.report`.

    Floats are written with ``repr`` so that reading them back is exact.
    """
    names = list(feature_names) if feature_names else [f"x{j}" for j in range(data.d)]
    header = [target_name] + names
    if buckets is not None:
        header.append(bucket_name)
    if data.weights is not None:
        header.append("weight")
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for i in range(data.n):
                row = [repr(float(data.Y[i]))] + [repr(float(v)) for v in data.X[i]]
                if buckets is not None:
                    row.append(str(buckets.classes[buckets.assignment[i]]))
                if data.weights is not None:
                    row.append(repr(float(data.weights[i])))
                writer.writerow(row)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
    return header


def _nondegenerate(Xs, Ys):
    M = np.column_stack([Xs, Ys])
    return bool(scaled_condition(M.T @ M) < COND_LIMIT)


@dataclass(frozen=True)
class BrittleResult:
    data: RegressionData
    retained: np.ndarray                  # rows where the column was zero
    coefficient: float                    # fitted coefficient of the column on the retained rows
    perturbation_norm: float
    nudged: bool = field(default=False)


def make_brittle(data, column, gamma, c, seed=0):
    """Perturb one column on its zero set so that OLS there returns ``gamma``.

    ``column`` must vanish on every retained row ``S`` (typically it is
    nonzero only on a small bucket).  With ``R = Y_S - X_{S,-col} gamma``,
    setting ``X_{S,col} = (c / (2 ||R||)) R`` makes the retained rows a
    perfect fit with coefficients ``gamma`` and ``2 ||R|| / c`` on the
    column.  If ``[X_{S,-col}, Y_S]`` is degenerate it is first nudged by a
    seeded random matrix of norm ``c / 4``.  Total change is below ``c``.
    """
    X = data.X.copy()
    d = data.d
    if not 0 <= column < d:
        raise InvalidSpec(f"column {column} out of range")
    if not c > 0:
        raise InvalidSpec("perturbation budget c must be positive")
    gamma = np.asarray(gamma, dtype=float).ravel()
    if gamma.size != d - 1:
        raise InvalidSpec(f"gamma must have length {d - 1}")
    S = np.flatnonzero(X[:, column] == 0)
    if S.size <= d:
        raise InvalidSpec(f"need more than {d} rows where column {column} is zero")
    others = np.delete(np.arange(d), column)
    Y = data.Y
    if data.weights is not None:
        raise InvalidSpec("the brittleness construction expects unweighted data")

    Xs = X[np.ix_(S, others)]
    nudged = False
    if not _nondegenerate(Xs, Y[S]):
        rng = np.random.default_rng(seed)
        for _ in range(NUDGE_ATTEMPTS):
            P = rng.standard_normal(Xs.shape)
            P *= (c / 4.0) / np.linalg.norm(P)
            if _nondegenerate(Xs + P, Y[S]):
                Xs = Xs + P
                nudged = True
                break
        else:
            raise DegenerateUnfixable(
                f"no non-degenerate nudge of norm {c / 4} found in {NUDGE_ATTEMPTS} tries")

    R = Y[S] - Xs @ gamma
    normR = float(np.linalg.norm(R))
    if normR == 0.0:
        raise DegenerateUnfixable("labels already fit gamma exactly on the retained rows")
    X[np.ix_(S, others)] = Xs
    X[S, column] = (c / (2.0 * normR)) * R
    out = RegressionData(X, Y)
    return BrittleResult(data=out, retained=S, coefficient=2.0 * normR / c,
                         perturbation_norm=float(np.linalg.norm(X - data.X)),
                         nudged=nudged)
