"""Command-line entry point: ``olsaudit {audit,attack,generate,brittle,msn-bench}``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
failure, 5 resource guard.
"""

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .baselines import amip_attack
from .datagen import COVARIATE_LAWS, SyntheticSpec, generate, make_brittle, write_csv
from .exceptions import AuditError, ConfigError, IoFailure
from .msn import greedy_lower_bound, rti_from_rows, spectral_bound
from .regression import (RegressionData, compute_grams, fit_ols, gram_row_source,
                         normalize, refit_without)
from .report import (AuditConfig, check_memory, emit, ingest, report_to_json,
                     resolve_direction, run_audit)

log = logging.getLogger("olsaudit")

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib


def _csv_list(text):
    return [t.strip() for t in text.split(",") if t.strip()]


def _floats(text):
    return [float(t) for t in _csv_list(text)]


def load_config_file(path):
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc}") from exc
    try:
        if path.suffix.lower() == ".toml":
            return tomllib.loads(raw.decode("utf-8"))
        return json.loads(raw)
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc


def _parse_drop(items):
    out = {}
    for item in items:
        col, sep, values = item.partition("=")
        if not sep:
            raise ConfigError(f"--drop expects COLUMN=V1,V2 (got {item!r})")
        out.setdefault(col, []).extend(_csv_list(values))
    return out


def _add_data_flags(p):
    p.add_argument("--config", help="TOML or JSON file with audit settings")
    p.add_argument("--input", help="CSV file with a header row")
    p.add_argument("--target")
    p.add_argument("--continuous", type=_csv_list, help="comma-separated feature columns")
    p.add_argument("--categorical", type=_csv_list, help="column(s) defining the buckets")
    p.add_argument("--dummies", type=_csv_list,
                   help="columns one-hot encoded as continuous features")
    p.add_argument("--weight")
    p.add_argument("--direction",
                   help="feature name, or comma-separated coefficients over the features")
    p.add_argument("--drop", action="append", default=None, metavar="COL=V1,V2",
                   help="drop rows whose COL equals one of the values (repeatable)")
    p.add_argument("--log-shift", type=_csv_list, dest="log_shift")
    p.add_argument("--product-partition", action="store_true", default=None,
                   dest="product_partition")
    p.add_argument("--intercept", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--mode", choices=("ols", "iv"))
    p.add_argument("--instrument")
    p.add_argument("--endogenous")
    p.add_argument("--outcome")
    p.add_argument("--adaptive", action="store_true", default=None)
    p.add_argument("--seed", type=int)
    p.add_argument("--output", "-o")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="olsaudit",
        description="Certified bounds on how much OLS coefficients move when samples are removed.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    audit = sub.add_parser("audit", help="bound, certify and attack a regression")
    _add_data_flags(audit)
    audit.add_argument("--backend", choices=("rti", "spectral", "both"))
    audit.add_argument("--k-max", type=int, dest="k_max")
    audit.add_argument("--theta", type=float, action="append", dest="thetas",
                       help="extra threshold in coefficient units (repeatable)")
    audit.add_argument("--no-amip", action="store_false", dest="amip", default=None)
    audit.add_argument("--format", choices=("json", "csv", "curve"))
    audit.add_argument("--memory-cap", type=float, dest="memory_cap",
                       help="memory cap in bytes")

    attack = sub.add_parser("attack", help="run only the influence attack")
    _add_data_flags(attack)
    attack.add_argument("--theta", type=float, dest="attack_theta",
                        help="threshold (default: |<beta, e>|, a sign flip)")

    gen = sub.add_parser("generate", help="write a seeded synthetic dataset as CSV")
    gen.add_argument("--n", type=int, required=True)
    gen.add_argument("--d", type=int, required=True)
    gen.add_argument("--m", type=int, default=1)
    gen.add_argument("--bucket-sizes", type=lambda s: [int(v) for v in _csv_list(s)])
    gen.add_argument("--beta", type=_floats)
    gen.add_argument("--mu", type=_floats)
    gen.add_argument("--sigma", type=float, default=1.0)
    gen.add_argument("--law", choices=COVARIATE_LAWS, default="gaussian")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--output", "-o", required=True)

    brittle = sub.add_parser("brittle", help="apply the one-hot brittleness perturbation")
    brittle.add_argument("--input", required=True)
    brittle.add_argument("--target", required=True)
    brittle.add_argument("--continuous", type=_csv_list, required=True)
    brittle.add_argument("--column", required=True, help="column that is zero off the bucket")
    brittle.add_argument("--gamma", type=_floats, required=True)
    brittle.add_argument("--budget", type=float, required=True, help="perturbation budget c")
    brittle.add_argument("--seed", type=int, default=0)
    brittle.add_argument("--output", "-o", required=True)

    bench = sub.add_parser("msn-bench", help="time the MSN bounds on synthetic data")
    bench.add_argument("--n", type=int, default=1000)
    bench.add_argument("--d", type=int, default=10)
    bench.add_argument("--k-max", type=int, dest="k_max", default=None)
    bench.add_argument("--seed", type=int, default=0)
    bench.add_argument("--spectral", action="store_true",
                       help="also run the spectral bound (dense n x n)")
    bench.add_argument("--memory-cap", type=float, dest="memory_cap",
                       default=AuditConfig().memory_cap)
    return parser


_CONFIG_FLAGS = ("input", "target", "continuous", "categorical", "dummies", "weight",
                 "direction", "log_shift", "product_partition", "intercept", "mode",
                 "instrument", "endogenous", "outcome", "adaptive", "seed", "output",
                 "backend", "k_max", "thetas", "amip", "format", "memory_cap")


def config_from_args(args):
    """Config file first, then every flag that was given on the command line."""
    mapping = load_config_file(args.config) if getattr(args, "config", None) else {}
    config = AuditConfig.from_mapping(mapping)
    for name in _CONFIG_FLAGS:
        value = getattr(args, name, None)
        if value is not None:
            setattr(config, name, value)
    if getattr(args, "drop", None):
        config.drop_rows = {**config.drop_rows, **_parse_drop(args.drop)}
    if isinstance(config.direction, str) and "," in config.direction:
        config.direction = _floats(config.direction)
    if config.memory_cap is not None:
        config.memory_cap = int(config.memory_cap)
    return config


def cmd_audit(args):
    config = config_from_args(args)
    report = run_audit(config)
    if config.output:
        paths = emit(report, config.format, config.output)
        log.info("wrote %s", ", ".join(paths))
    else:
        print(report_to_json(report))
    for reg in report.regressions:
        c = reg["certificates"]
        amip = reg["amip"] or {}
        print(f"{reg['name']}: {reg['method']} n={reg['n']} d={reg['d']} m={reg['m']} "
              f"k_sign>={c['sign']} k_2sigma>={c['two_sigma']} "
              f"amip_sign<={amip.get('sign')}", file=sys.stderr)
    return 0


def cmd_attack(args):
    config = config_from_args(args)
    config.mode = "ols"
    config.categorical = config.categorical or []
    config.validate()
    table = ingest(config)
    e = resolve_direction(config.direction, table.feature_names)
    data = table.regression(config.target)
    dummy_cols = None
    if table.buckets is not None:
        b = table.buckets
        onehot = np.zeros((data.n, b.m))
        onehot[np.arange(data.n), b.assignment] = 1.0
        data = RegressionData(np.column_stack([data.X, onehot]), data.Y, data.weights)
        e = np.concatenate([e, np.zeros(b.m)])
        dummy_cols = np.arange(len(table.feature_names), data.d)
    beta_e = float(refit_without(data, [], dummy_cols) @ e)
    sign = 1.0 if beta_e >= 0 else -1.0
    theta = abs(beta_e) if args.attack_theta is None else args.attack_theta
    res = amip_attack(data, sign * e, theta, adaptive=bool(config.adaptive),
                      dummy_columns=dummy_cols)
    out = {"beta_e": beta_e, "direction_sign": sign, "theta": theta,
           "k_found": res.k_found, "partial": res.partial,
           "removal_order": res.removal_order.tolist(),
           "achieved_shift": res.achieved_shift.tolist()}
    text = json.dumps(out, indent=2)
    if config.output:
        Path(config.output).write_text(text)
    else:
        print(text)
    return 0


def cmd_generate(args):
    spec = SyntheticSpec(n=args.n, d=args.d, m=args.m, bucket_sizes=args.bucket_sizes,
                         beta_gt=args.beta, mu=args.mu, sigma=args.sigma,
                         covariate_law=args.law, seed=args.seed)
    data, buckets = generate(spec)
    write_csv(args.output, data, buckets if spec.m > 1 else None)
    return 0


def cmd_brittle(args):
    config = AuditConfig(input=args.input, target=args.target,
                         continuous=args.continuous, intercept=False)
    table = ingest(config)
    if args.column not in table.feature_names:
        raise ConfigError(f"--column {args.column!r} must be one of --continuous")
    data = table.regression(args.target)
    result = make_brittle(data, table.feature_names.index(args.column), args.gamma,
                          args.budget, seed=args.seed)
    write_csv(args.output, result.data, feature_names=table.feature_names,
              target_name=args.target)
    print(json.dumps({"retained_rows": int(result.retained.size),
                      "column_coefficient": result.coefficient,
                      "perturbation_norm": result.perturbation_norm,
                      "nudged": result.nudged}))
    return 0


def cmd_msn_bench(args):
    spec = SyntheticSpec(n=args.n, d=args.d, seed=args.seed)
    data, _ = generate(spec)
    k_max = args.k_max if args.k_max is not None else int(np.sqrt(args.n))
    check_memory(args.n, k_max, "spectral" if args.spectral else "rti", int(args.memory_cap))
    norm = normalize(fit_ols(data), data, 0)
    out = {"n": args.n, "d": args.d, "k_max": k_max}
    t = time.perf_counter()
    V = rti_from_rows(gram_row_source(norm, "XX"), norm.n, k_max).V
    out["rti_seconds"] = time.perf_counter() - t
    out["rti_XX"] = V.tolist()
    if args.spectral:
        grams = compute_grams(norm)
        t = time.perf_counter()
        out["spectral_XX"] = spectral_bound(grams.G_XX, k_max).V.tolist()
        out["spectral_seconds"] = time.perf_counter() - t
        t = time.perf_counter()
        out["greedy_XX"] = np.sqrt(np.maximum(
            greedy_lower_bound(grams.G_XX, k_max).L, 0)).tolist()
        out["greedy_seconds"] = time.perf_counter() - t
    print(json.dumps(out, indent=2))
    return 0


COMMANDS = {"audit": cmd_audit, "attack": cmd_attack, "generate": cmd_generate,
            "brittle": cmd_brittle, "msn-bench": cmd_msn_bench}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except AuditError as exc:
        print(f"olsaudit: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    except ValueError as exc:        # input validation from numpy / scikit-learn
        print(f"olsaudit: invalid data: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
