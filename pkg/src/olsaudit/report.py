"""Dataset ingestion, audit orchestration and report emission.

Report JSON layout (``schema_version`` "1.0"); infinite values are encoded
as the strings ``"Infinity"`` and ``"-Infinity"``::

    {
      "schema_version": "1.0",
      "mode": "ols" | "iv",
      "regressions": [
        {
          "name": str, "method": "acre" | "ohare", "target": str,
          "direction": {feature: weight, ...},
          "n": int, "d": int, "m": int, "dropped_rows": int,
          "beta_e": float, "two_sigma": float, "e_scale": float,
          "k_max": int, "units": "original",
          "bounds": {"plus": {"L": [...], "U": [...], "first_order": [...],
                              "certified_up_to": int},
                     "minus": {...}},
          "certificates": {"sign": int | null, "two_sigma": int,
                           "custom": [{"theta": float, "plus": int, "minus": int}]},
          "amip": {"sign": int | null, "two_sigma": int | null,
                   "trace": [...], "partial": bool} | null
        }
      ],
      "iv": {"estimate": float, "k_sign_lower": int | null} | null,
      "runtime_seconds": float, "peak_memory_bytes": int,
      "provenance": {"config_hash": str, "seed": int, "version": str}
    }

``bounds.plus`` audits ``+e`` and ``bounds.minus`` audits ``-e``; both are in
the units of ``<beta, e>``.  Dividing by ``e_scale`` gives whitened units.
Certificates are lower bounds ``k_lower`` on the removals needed; the sign
certificate is null when ``<beta, e> == 0``.
"""

import csv
import hashlib
import json
import math
import resource
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from importlib import metadata

import numpy as np

from .acre import Certificate, acre_bounds, certify, default_k_max
from .baselines import amip_attack
from .exceptions import (ConfigError, DirectionTouchesDummies,
                         EmptyCategoryAfterFiltering, IoFailure,
                         MemoryGuardExceeded, MissingColumn, NonNumericCell)
from .msn import BLOCK_ROWS
from .ohare import Buckets, ohare_bounds, reaverage
from .regression import RegressionData, fit_ols, normalize

SCHEMA_VERSION = "1.0"
DEFAULT_MEMORY_CAP = 2 * 1024 ** 3
INTERCEPT = "(intercept)"
FORMATS = ("json", "csv", "curve")


@dataclass
class AuditConfig:
    input: str = None
    target: str = None
    continuous: list = field(default_factory=list)
    categorical: list = field(default_factory=list)
    dummies: list = field(default_factory=list)     # one-hot encoded as continuous features
    weight: str = None
    direction: object = None                        # feature name or explicit vector
    drop_rows: dict = field(default_factory=dict)   # column -> values marking bad rows
    log_shift: list = field(default_factory=list)   # x -> log(x + median(x))
    product_partition: bool = False
    intercept: bool = None                          # default: only without categorical columns
    mode: str = "ols"
    instrument: str = None
    endogenous: str = None
    outcome: str = None
    backend: str = "rti"
    k_max: int = None
    sign: bool = True
    two_sigma: bool = True
    thetas: list = field(default_factory=list)
    amip: bool = True
    adaptive: bool = False
    output: str = None
    format: str = "json"
    memory_cap: int = DEFAULT_MEMORY_CAP
    seed: int = 0

    @classmethod
    def from_mapping(cls, mapping):
        known = {f.name for f in fields(cls)}
        flat = {}
        for key, value in mapping.items():
            key = key.replace("-", "_")
            if key == "iv" and isinstance(value, dict):
                flat.update({k.replace("-", "_"): v for k, v in value.items()})
            elif key == "thresholds" and isinstance(value, dict):
                for k, v in value.items():
                    k = k.replace("-", "_")
                    flat["thetas" if k == "custom" else k] = v
            else:
                flat[key] = value
        unknown = set(flat) - known
        if unknown:
            raise ConfigError(f"unknown configuration keys: {sorted(unknown)}")
        return cls(**flat)

    def validate(self):
        if self.mode not in ("ols", "iv"):
            raise ConfigError(f"mode must be 'ols' or 'iv', got {self.mode!r}")
        if self.format not in FORMATS:
            raise ConfigError(f"format must be one of {FORMATS}")
        if self.input is None:
            raise ConfigError("an input CSV is required")
        if self.mode == "ols":
            if self.target is None:
                raise ConfigError("ols mode requires a target column")
            if self.direction is None:
                raise ConfigError("a direction (feature name or vector) is required")
        else:
            missing = [r for r in ("instrument", "endogenous", "outcome") if getattr(self, r) is None]
            if missing:
                raise ConfigError(f"iv mode requires roles {missing}")
        if isinstance(self.direction, str) and self.direction in self.categorical:
            raise DirectionTouchesDummies(
                f"direction {self.direction!r} is a categorical column")
        if len(self.categorical) > 1 and not self.product_partition:
            raise ConfigError("several categorical columns need product_partition = true")
        return self

    def digest(self):
        blob = json.dumps(asdict(self), sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()


# -- ingestion -----------------------------------------------------------------

@dataclass
class IngestedData:
    """Numeric table after preprocessing.

    ``X`` holds the continuous features (with encoded dummies and the
    intercept, if any) in the order of ``feature_names``; ``columns`` keeps
    every numeric column by name, for IV stages.
    """

    X: np.ndarray
    feature_names: list
    columns: dict
    weights: np.ndarray
    buckets: Buckets
    dropped_rows: int

    def regression(self, target, features=None):
        if features is None:
            X = self.X
        else:
            X = np.column_stack([self.columns[f] for f in features])
        return RegressionData(X, self.columns[target], self.weights)


def read_csv(path):
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    if not rows:
        raise MissingColumn(f"{path} has no header row")
    header = [h.strip() for h in rows[0]]
    body = [r for r in rows[1:] if r]
    for i, r in enumerate(body):
        if len(r) != len(header):
            raise NonNumericCell(i + 1, "<row>", f"{len(r)} fields, expected {len(header)}")
    return header, body


def _matches(cell, values):
    for v in values:
        if isinstance(v, str):
            if cell.strip() == v:
                return True
        else:
            try:
                if float(cell) == float(v):
                    return True
            except ValueError:
                pass
    return False


def _numeric(name, cells, row_ids):
    out = np.empty(len(cells))
    for j, cell in enumerate(cells):
        try:
            out[j] = float(cell)
        except ValueError:
            raise NonNumericCell(int(row_ids[j]), name, cell) from None
        if not math.isfinite(out[j]):
            raise NonNumericCell(int(row_ids[j]), name, cell)
    return out


def log_shift(x):
    """``log(x + median(x))``; finite and increasing for nonnegative data
    with a positive median."""
    x = np.asarray(x, dtype=float)
    shifted = x + np.median(x)
    if np.any(shifted <= 0):
        bad = int(np.argmin(shifted))
        raise NonNumericCell(bad + 1, "<log-shift>", float(x[bad]))
    return np.log(shifted)


def ingest(config):
    """Read, filter and encode the configured CSV.

    Row numbers in errors are 1-based data rows of the original file.
    """
    header, body = read_csv(config.input)
    index = {name: j for j, name in enumerate(header)}
    roles = ([config.target, config.weight, config.instrument, config.endogenous,
              config.outcome] + list(config.continuous) + list(config.categorical)
             + list(config.dummies) + list(config.log_shift) + list(config.drop_rows))
    for name in roles:
        if name is not None and name not in index:
            raise MissingColumn(f"column {name!r} not found in {config.input}")

    row_ids = np.arange(1, len(body) + 1)
    keep = np.ones(len(body), dtype=bool)
    for col, values in config.drop_rows.items():
        values = values if isinstance(values, list) else [values]
        j = index[col]
        keep &= np.array([not _matches(r[j], values) for r in body], dtype=bool)
    dropped = int((~keep).sum())
    body = [r for r, k in zip(body, keep) if k]
    row_ids = row_ids[keep]
    if not body:
        raise EmptyCategoryAfterFiltering("no rows left after applying the drop rules")

    def cells(name):
        return [r[index[name]] for r in body]

    numeric_names = [n for n in dict.fromkeys(
        [config.target, config.instrument, config.endogenous, config.outcome]
        + list(config.continuous)) if n is not None]
    columns = {name: _numeric(name, cells(name), row_ids) for name in numeric_names}
    for name in config.log_shift:
        if name not in columns:
            raise ConfigError(f"log-shift column {name!r} is not a numeric role")
        columns[name] = log_shift(columns[name])

    weights = None
    if config.weight is not None:
        weights = _numeric(config.weight, cells(config.weight), row_ids)

    buckets = None
    if config.categorical:
        labels = np.array(["\x1f".join(parts) for parts in
                           zip(*(cells(c) for c in config.categorical))])
        buckets = Buckets.from_labels(labels, weights)

    features = list(config.continuous)
    if config.mode == "iv":
        features = [config.instrument] + [f for f in features if f != config.instrument]
    for name in config.dummies:
        levels = np.unique(cells(name))
        raw = np.array(cells(name))
        for level in levels[1:]:
            key = f"{name}={level}"
            columns[key] = (raw == level).astype(float)
            features.append(key)
    add_intercept = config.intercept if config.intercept is not None else buckets is None
    if add_intercept:
        columns[INTERCEPT] = np.ones(len(body))
        features.append(INTERCEPT)
    if not features:
        raise ConfigError("no continuous features configured")
    X = np.column_stack([columns[f] for f in features])
    return IngestedData(X=X, feature_names=features, columns=columns,
                        weights=weights, buckets=buckets, dropped_rows=dropped)


def resolve_direction(direction, feature_names):
    if isinstance(direction, str):
        if direction not in feature_names:
            raise ConfigError(f"direction {direction!r} is not a continuous feature")
        e = np.zeros(len(feature_names))
        e[feature_names.index(direction)] = 1.0
        return e
    e = np.asarray(direction, dtype=float).ravel()
    if e.size != len(feature_names):
        raise ConfigError(
            f"direction vector has {e.size} entries for {len(feature_names)} features")
    return e


# -- resource guard ------------------------------------------------------------

def footprint_bytes(n, k_max, backend, m=0):
    """Peak working memory of an audit, dominated either by three dense n x n
    matrices (spectral backend) or by streamed row blocks plus the per-k
    tables."""
    if backend in ("spectral", "both"):
        return 3 * n * n * 8
    per_k = 4 * n * (k_max + 1) * 8
    return 3 * BLOCK_ROWS * n * 8 + per_k + (m + 1) * (k_max + 1) * 8 * 6


def check_memory(n, k_max, backend, cap, m=0):
    need = footprint_bytes(n, k_max, backend, m)
    if need > cap:
        raise MemoryGuardExceeded(
            f"audit needs about {need / 2**20:.0f} MiB, above the cap of "
            f"{cap / 2**20:.0f} MiB; lower k_max or use the rti backend")
    return need


# -- orchestration -------------------------------------------------------------

@dataclass
class AuditReport:
    mode: str
    regressions: list
    iv: dict = None
    runtime_seconds: float = 0.0
    peak_memory_bytes: int = 0
    provenance: dict = field(default_factory=dict)
    schema_version: str = SCHEMA_VERSION

    def to_dict(self):
        return {"schema_version": self.schema_version, "mode": self.mode,
                "regressions": self.regressions, "iv": self.iv,
                "runtime_seconds": self.runtime_seconds,
                "peak_memory_bytes": self.peak_memory_bytes,
                "provenance": self.provenance}


def _bounds_dict(b):
    return {"L": b.L.tolist(), "U": b.U.tolist(),
            "first_order": b.first_order.tolist(),
            "certified_up_to": b.certified_up_to}


def audit_regression(data, e, buckets, config, name="", target="",
                     feature_names=None, dropped_rows=0):
    """Bound both directions of one regression, certify and attack it."""
    d = data.d
    if buckets is None:
        fit = fit_ols(data)
        norm = normalize(fit, data, e)
        k_max = default_k_max(data.n, d) if config.k_max is None else config.k_max
        check_memory(data.n, k_max, config.backend, config.memory_cap)

        def bound(nr):
            return acre_bounds(nr, backend=config.backend, k_max=k_max, units="original")
        method, m = "acre", 0
        attack_data, attack_e, dummy_cols = data, e, None
    else:
        reavg = reaverage(data, buckets, e)
        inner = RegressionData(reavg.Xt, reavg.Yt)
        fit = fit_ols(inner, absorbed=buckets.m)
        norm = normalize(fit, inner, e)
        k_max = default_k_max(data.n, d) if config.k_max is None else config.k_max
        check_memory(data.n, k_max, config.backend, config.memory_cap, buckets.m)

        def bound(nr):
            return ohare_bounds(nr, buckets, k_max=k_max, backend=config.backend,
                                units="original")
        method, m = "ohare", buckets.m
        onehot = np.zeros((data.n, buckets.m))
        onehot[np.arange(data.n), buckets.assignment] = 1.0
        attack_data = RegressionData(np.column_stack([data.X, onehot]), data.Y, data.weights)
        attack_e = np.concatenate([e, np.zeros(buckets.m)])
        dummy_cols = np.arange(d, d + buckets.m)

    plus = bound(norm)
    minus = bound(norm.flipped())
    beta_e = norm.beta_e
    two_sigma = 2.0 * fit.sigma_hat * norm.e_scale

    certs = {"sign": None, "two_sigma": None, "custom": []}
    amip = None
    sign_bounds = plus if beta_e > 0 else minus
    sign_dir = 1.0 if beta_e > 0 else -1.0
    if config.amip:
        amip = {"sign": None, "two_sigma": None, "trace": [], "partial": False}
    if config.sign and beta_e != 0:
        attack_k = None
        if config.amip:
            res = amip_attack(attack_data, sign_dir * attack_e, abs(beta_e),
                              adaptive=config.adaptive, dummy_columns=dummy_cols)
            attack_k = res.k_found
            amip.update(sign=res.k_found, trace=res.achieved_shift.tolist(),
                        partial=res.partial)
        c = certify(sign_bounds, abs(beta_e))
        # raises NumericalError if the certificate contradicts the attack
        Certificate(c.threshold, c.certified_k_lower, attack_k)
        certs["sign"] = c.k_lower
    if config.two_sigma and math.isfinite(two_sigma):
        for s, b in ((1.0, plus), (-1.0, minus)):
            c = certify(b, two_sigma)
            if config.amip:
                found = amip_attack(attack_data, s * attack_e, two_sigma,
                                    adaptive=config.adaptive,
                                    dummy_columns=dummy_cols).k_found
                Certificate(c.threshold, c.certified_k_lower, found)
                if found is not None:
                    amip["two_sigma"] = found if amip["two_sigma"] is None else min(amip["two_sigma"], found)
            k = c.k_lower
            certs["two_sigma"] = k if certs["two_sigma"] is None else min(certs["two_sigma"], k)
    for theta in config.thetas:
        certs["custom"].append({"theta": float(theta),
                                "plus": certify(plus, float(theta)).k_lower,
                                "minus": certify(minus, float(theta)).k_lower})

    names = feature_names or [f"x{j}" for j in range(d)]
    return {
        "name": name, "method": method, "target": target,
        "direction": {f: float(w) for f, w in zip(names, e) if w != 0},
        "n": data.n, "d": d, "m": m, "dropped_rows": dropped_rows,
        "beta_e": float(beta_e), "two_sigma": float(two_sigma),
        "e_scale": float(norm.e_scale), "k_max": plus.k_max, "units": "original",
        "bounds": {"plus": _bounds_dict(plus), "minus": _bounds_dict(minus)},
        "certificates": certs, "amip": amip,
    }


def package_version():
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0+unknown"


def _peak_memory_bytes():
    peak = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss
    return int(peak if sys.platform == "darwin" else peak * 1024)


def run_audit(config):
    """Run the configured audit end to end and return an :class:`AuditReport`."""
    config.validate()
    start = time.perf_counter()
    table = ingest(config)
    regressions = []
    iv = None
    if config.mode == "ols":
        e = resolve_direction(config.direction, table.feature_names)
        data = table.regression(config.target)
        regressions.append(audit_regression(
            data, e, table.buckets, config, name="ols", target=config.target,
            feature_names=table.feature_names, dropped_rows=table.dropped_rows))
    else:
        e = resolve_direction(config.instrument, table.feature_names)
        for name, target in (("first_stage", config.endogenous),
                             ("reduced_form", config.outcome)):
            data = table.regression(target)
            regressions.append(audit_regression(
                data, e, table.buckets, config, name=name, target=target,
                feature_names=table.feature_names, dropped_rows=table.dropped_rows))
        first, reduced = regressions
        signs = [r["certificates"]["sign"] for r in regressions]
        estimate = reduced["beta_e"] / first["beta_e"] if first["beta_e"] else float("nan")
        iv = {"estimate": estimate,
              "k_sign_lower": min(signs) if None not in signs else None}
    return AuditReport(
        mode=config.mode, regressions=regressions, iv=iv,
        runtime_seconds=time.perf_counter() - start,
        peak_memory_bytes=_peak_memory_bytes(),
        provenance={"config_hash": config.digest(), "seed": config.seed,
                    "version": package_version()})


# -- emission ------------------------------------------------------------------

def _encode(obj):
    if isinstance(obj, float):
        if math.isinf(obj):
            return "Infinity" if obj > 0 else "-Infinity"
        if math.isnan(obj):
            return "NaN"
        return obj
    if isinstance(obj, dict):
        return {k: _encode(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_encode(v) for v in obj]
    if isinstance(obj, np.generic):
        return _encode(obj.item())
    return obj


_SPECIAL = {"Infinity": math.inf, "-Infinity": -math.inf, "NaN": math.nan}


def _decode(obj):
    if isinstance(obj, str) and obj in _SPECIAL:
        return _SPECIAL[obj]
    if isinstance(obj, dict):
        return {k: _decode(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_decode(v) for v in obj]
    return obj


def report_to_json(report):
    return json.dumps(_encode(report.to_dict()), indent=2, allow_nan=False)


def load_report(path):
    """Parse an emitted JSON report back into a dict with float infinities."""
    try:
        with open(path, encoding="utf-8") as fh:
            return _decode(json.load(fh))
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc


def _csv_rows(reg, curve):
    sign = "plus" if reg["beta_e"] >= 0 else "minus"
    b = reg["bounds"][sign]
    trace = (reg.get("amip") or {}).get("trace") or []
    for k in range(len(b["U"])):
        row = [k, repr(b["L"][k]), repr(b["U"][k])]
        if curve:
            row.append(repr(trace[k]) if k < len(trace) else "")
        else:
            row.append(repr(b["first_order"][k]))
        yield row


def _table_paths(path, regressions):
    if len(regressions) == 1:
        return [path]
    stem, dot, ext = path.rpartition(".")
    if not dot:
        stem, ext = path, "csv"
    return [f"{stem}_{r['name']}.{ext}" for r in regressions]


def emit(report, fmt, path):
    """Write ``report`` as JSON, a flat bound CSV or a plot-ready curve table.

    CSV and curve tables use the direction that moves ``<beta, e>`` towards
    zero.  With several regressions (IV mode) one table is written per
    regression, suffixed with its name.  Returns the written paths.
    """
    if fmt not in FORMATS:
        raise ConfigError(f"unknown output format {fmt!r}")
    try:
        if fmt == "json":
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(report_to_json(report))
            return [path]
        paths = _table_paths(path, report.regressions)
        header = ["k", "L", "U", "amip_shift" if fmt == "curve" else "first_order"]
        for reg, p in zip(report.regressions, paths):
            with open(p, "w", newline="", encoding="utf-8") as fh:
                writer = csv.writer(fh)
                writer.writerow(header)
                writer.writerows(_csv_rows(reg, fmt == "curve"))
        return paths
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc
