"""Command-line interface: ``gen``, ``test``, ``simulate`` and ``calibrate``.

Exit codes: 0 = no change detected (or success), 1 = change detected,
2 = usage or data error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from .elcore import CONVENTIONS, PROOF_CONSISTENT
from .errors import ConfigError, ElChangeError
from .inference import NORMAL_QUANTILE, TestConfig, test_changepoint
from .model import CoefficientPair, Design, ErrorSpec, generate_design, generate_response, sequence_beta
from .simlab import (
    ONE_MINUS_BETA0,
    SIGMA2_SOURCES,
    ExperimentSpec,
    design_seed,
    empirical_critical_value,
    replicate_seed,
    run_coverage,
    run_power,
    with_critical,
)

EXIT_RETAINED = 0
EXIT_CHANGE = 1
EXIT_ERROR = 2
THREADS_ENV = "ELCHANGE_THREADS"
TABLE_COLUMNS = ("n", "k", "p", "error", "CR", "power", "c_hat", "seed", "runtime")


class DataError(Exception):
    pass


def fmt(x) -> str:
    """Shortest round-trip decimal form of a float."""
    return repr(float(x))


# ---------------------------------------------------------------------------
# dataset files


def write_dataset(path, Y, X) -> None:
    n, p = X.shape
    buf = io.StringIO()
    buf.write(",".join(["y"] + [f"x{j}" for j in range(1, p + 1)]) + "\n")
    for i in range(n):
        buf.write(",".join([fmt(Y[i])] + [fmt(v) for v in X[i]]) + "\n")
    with open(path, "w", newline="") as fh:
        fh.write(buf.getvalue())


def read_dataset(path) -> tuple[np.ndarray, np.ndarray]:
    """Parse a ``y,x1,...,xp`` CSV into ``(Y, X)``."""
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    with fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    p = len(header) - 1
    if p < 1 or header != ["y"] + [f"x{j}" for j in range(1, p + 1)]:
        raise DataError(f"{path}: line 1: header must be y,x1,...,xp, got {','.join(header)}")
    data = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != p + 1:
            raise DataError(f"{path}: line {lineno}: expected {p + 1} fields, got {len(row)}")
        try:
            vals = [float(v) for v in row]
        except ValueError:
            raise DataError(f"{path}: line {lineno}: non-numeric or missing field") from None
        if not all(math.isfinite(v) for v in vals):
            raise DataError(f"{path}: line {lineno}: non-finite value")
        data.append(vals)
    if not data:
        raise DataError(f"{path}: no data rows")
    arr = np.array(data)
    return arr[:, 0], arr[:, 1:]


def parse_vector(text: str, p: int | None = None, what: str = "vector") -> np.ndarray:
    """Comma/whitespace separated numbers, or a path to a file holding them."""
    src = text
    if os.path.exists(text):
        src = Path(text).read_text()
    try:
        vals = [float(t) for t in src.replace(",", " ").split()]
    except ValueError:
        raise DataError(f"cannot parse {what} from {text!r}") from None
    if not vals:
        raise DataError(f"{what} is empty")
    if p is not None and len(vals) != p:
        raise DataError(f"{what} has {len(vals)} entries, expected {p}")
    return np.array(vals)


def parse_critical(text: str):
    if text in ("normal", NORMAL_QUANTILE):
        return NORMAL_QUANTILE
    if text.startswith("fixed:"):
        try:
            return float(text[len("fixed:"):])
        except ValueError:
            pass
    raise argparse.ArgumentTypeError(f"critical must be 'normal' or 'fixed:VALUE', got {text!r}")


def resolve_threads(flag: int | None) -> int:
    if flag is not None:
        return max(1, flag)
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


# ---------------------------------------------------------------------------
# gen


def cmd_gen(args) -> int:
    n, p, k = args.n, args.p, args.k
    beta0 = sequence_beta(p) if args.beta0 is None else parse_vector(args.beta0, p, "beta0")
    if args.beta2 is None:
        beta2 = beta0
    elif args.beta2 in ("one-minus", ONE_MINUS_BETA0):
        beta2 = 1.0 - beta0
    else:
        beta2 = parse_vector(args.beta2, p, "beta2")
    err = ErrorSpec.from_name(args.error)
    design = generate_design(n, p, k, design_seed(args.seed))
    Y = generate_response(design, CoefficientPair(beta0, beta2), err, replicate_seed(args.seed, 0))
    try:
        write_dataset(args.out, Y, design.X)
    except OSError as exc:
        print(f"error: cannot write {args.out}: {exc.strerror}", file=sys.stderr)
        return EXIT_ERROR
    print(f"wrote {n} rows to {args.out}")
    return EXIT_RETAINED


# ---------------------------------------------------------------------------
# test


def cmd_test(args) -> int:
    Y, X = read_dataset(args.data)
    n, p = X.shape
    if not 1 <= args.k < n:
        raise DataError(f"--k must satisfy 1 <= k < n = {n}, got {args.k}")
    beta0 = None if args.beta0 is None else parse_vector(args.beta0, p, "beta0")
    config = TestConfig(alpha=args.alpha, beta0=beta0, critical_value=args.critical,
                        sigma_convention=args.convention)
    res = test_changepoint(Design(X, args.k), Y, config)
    if args.json:
        out = {"n": n, "k": args.k, "p": p, "alpha": args.alpha}
        out.update(res.to_dict())
        print(json.dumps(out, indent=2))
    else:
        verdict = "change detected (H1)" if res.reject else "no change detected (H0 retained)"
        if res.degenerate:
            verdict = "degenerate: zero residual variance on the first segment; H0 retained"
        print(f"n={n} k={args.k} p={p} beta={res.beta_source}")
        print(f"Z = {res.z_value:.6g}   critical value = {res.critical_value:.6g}   p-value = {res.p_value:.4g}")
        print(verdict)
        for w in res.assumption_report.warnings:
            print(f"warning: {w}", file=sys.stderr)
    return EXIT_CHANGE if res.reject else EXIT_RETAINED


# ---------------------------------------------------------------------------
# simulate


_REQUIRED = ("task", "n", "k", "p", "error", "replications", "seed", "output")
_OPTIONAL = {
    "alpha": 0.05,
    "critical": "normal",
    "calibration_replications": 10000,
    "alternative": None,
    "beta0": None,
    "estimate_beta": False,
    "sigma2_source": "true",
    "convention": PROOF_CONSISTENT,
    "coverage_k": None,
}
_TASKS = ("coverage", "power", "calibrate")


def load_config(path) -> dict:
    """Read and validate an experiment config; raises ConfigError."""
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(raw) - set(_REQUIRED) - set(_OPTIONAL))
    missing = [key for key in _REQUIRED if key not in raw]
    problems = []
    if unknown:
        problems.append("unknown keys: " + ", ".join(unknown))
    if missing:
        problems.append("missing keys: " + ", ".join(missing))
    if problems:
        raise ConfigError("; ".join(problems))
    cfg = dict(_OPTIONAL)
    cfg.update(raw)

    bad = []
    if cfg["task"] not in _TASKS:
        bad.append("task")
    rows = {}
    for key in ("n", "k", "p"):
        v = cfg[key]
        vals = v if isinstance(v, list) else [v]
        if not vals or not all(isinstance(x, int) and not isinstance(x, bool) for x in vals):
            bad.append(key)
        rows[key] = vals
    lengths = {len(v) for v in rows.values() if len(v) != 1}
    if len(lengths) > 1:
        bad.append("n/k/p (list lengths differ)")
    errs = cfg["error"] if isinstance(cfg["error"], list) else [cfg["error"]]
    for e in errs:
        try:
            ErrorSpec.from_name(e)
        except (ElChangeError, TypeError):
            bad.append("error")
            break
    for key in ("replications", "calibration_replications", "seed"):
        v = cfg[key]
        if not isinstance(v, int) or isinstance(v, bool) or (key != "seed" and v < 1):
            bad.append(key)
    crit = cfg["critical"]
    if not (crit in ("normal", "empirical") or (isinstance(crit, (int, float)) and not isinstance(crit, bool) and crit >= 0)):
        bad.append("critical")
    if not isinstance(cfg["alpha"], (int, float)) or not 0 < cfg["alpha"] < 1:
        bad.append("alpha")
    if cfg["sigma2_source"] not in SIGMA2_SOURCES:
        bad.append("sigma2_source")
    if cfg["convention"] not in CONVENTIONS:
        bad.append("convention")
    if not isinstance(cfg["estimate_beta"], bool):
        bad.append("estimate_beta")
    if not isinstance(cfg["output"], str) or not cfg["output"]:
        bad.append("output")
    if cfg["task"] == "power" and cfg["alternative"] is None:
        bad.append("alternative (required for task 'power')")
    if cfg["task"] == "coverage" and cfg["alternative"] is not None:
        bad.append("alternative (not allowed for task 'coverage')")
    if cfg["coverage_k"] is not None and not isinstance(cfg["coverage_k"], int):
        bad.append("coverage_k")
    if bad:
        raise ConfigError("invalid values for keys: " + ", ".join(bad))

    m = max(len(v) for v in rows.values())
    cfg["rows"] = [tuple(rows[key][i if len(rows[key]) > 1 else 0] for key in ("n", "k", "p")) for i in range(m)]
    cfg["errors"] = errs
    alt = cfg["alternative"]
    if isinstance(alt, list) and alt and all(isinstance(a, list) for a in alt):
        cfg["alternative"] = tuple(tuple(a) for a in alt)
    elif isinstance(alt, list):
        cfg["alternative"] = tuple(alt)
    # build every spec now so that bad combinations fail before any work
    cfg["specs"] = [(row, e, _spec(cfg, row, e)) for row in cfg["rows"] for e in errs]
    return cfg


def _spec(cfg, row, error, *, k=None, alternative="keep") -> ExperimentSpec:
    n, k0, p = row
    crit = cfg["critical"]
    return ExperimentSpec(
        n=n, k=k0 if k is None else k, p=p,
        error_law=error,
        beta0=cfg["beta0"],
        alternative=cfg["alternative"] if alternative == "keep" else alternative,
        replications=cfg["replications"],
        master_seed=cfg["seed"],
        alpha=cfg["alpha"],
        critical_value=NORMAL_QUANTILE if crit in ("normal", "empirical") else float(crit),
        estimate_beta=cfg["estimate_beta"],
        sigma2_source=cfg["sigma2_source"],
        convention=cfg["convention"],
    )


def run_config(cfg: dict, workers: int) -> list[dict]:
    out = []
    for row, error, spec in cfg["specs"]:
        t0 = time.perf_counter()
        CR = power = c_hat = None
        calibrate = cfg["task"] == "calibrate" or cfg["critical"] == "empirical"
        if calibrate:
            null = _spec(cfg, row, error, alternative=None)
            c_hat = empirical_critical_value(null, cfg["calibration_replications"], workers)
            spec = with_critical(spec, c_hat)
        if cfg["task"] == "coverage":
            CR = run_coverage(spec, workers).coverage_rate
        elif cfg["task"] == "power":
            power = run_power(spec, workers).power
        else:
            cov_spec = _spec(cfg, row, error, k=cfg["coverage_k"], alternative=None)
            CR = run_coverage(with_critical(cov_spec, c_hat), workers).coverage_rate
            if cfg["alternative"] is not None:
                power = run_power(spec, workers).power
        if c_hat is None:
            c_hat = spec.critical()
        out.append({
            "n": row[0], "k": row[1], "p": row[2], "error": error,
            "CR": CR, "power": power, "c_hat": c_hat, "seed": cfg["seed"],
            "runtime": time.perf_counter() - t0,
        })
    return out


def format_table(rows: list[dict]) -> str:
    buf = io.StringIO()
    buf.write(",".join(TABLE_COLUMNS) + "\n")
    for r in rows:
        cells = []
        for col in TABLE_COLUMNS:
            v = r[col]
            if v is None:
                cells.append("")
            elif isinstance(v, float):
                cells.append(fmt(v))
            else:
                cells.append(str(v))
        buf.write(",".join(cells) + "\n")
    return buf.getvalue()


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    workers = resolve_threads(args.threads)
    rows = run_config(cfg, workers)
    text = format_table(rows)
    out = args.out or cfg["output"]
    try:
        with open(out, "w", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        print(f"error: cannot write {out}: {exc.strerror}", file=sys.stderr)
        return EXIT_ERROR
    for r in rows:
        parts = [f"n={r['n']} k={r['k']} p={r['p']} {r['error']}"]
        for col in ("CR", "power", "c_hat"):
            if r[col] is not None:
                parts.append(f"{col}={r[col]:.4f}")
        parts.append(f"({r['runtime']:.1f}s)")
        print("  ".join(parts))
    print(f"wrote {len(rows)} rows to {out}")
    return EXIT_RETAINED


# ---------------------------------------------------------------------------
# calibrate


def cmd_calibrate(args) -> int:
    spec = ExperimentSpec(n=args.n, k=args.k, p=args.p, error_law=args.error,
                          replications=args.replications, master_seed=args.seed,
                          alpha=args.alpha, sigma2_source=args.sigma2_source)
    workers = resolve_threads(args.threads)
    c_hat = empirical_critical_value(spec, args.replications, workers)
    result = {"n": args.n, "k": args.k, "p": args.p, "error": args.error,
              "alpha": args.alpha, "replications": args.replications,
              "seed": args.seed, "c_hat": c_hat}
    if args.check_k is not None:
        cov = ExperimentSpec(n=args.n, k=args.check_k, p=args.p, error_law=args.error,
                             replications=args.check_replications, master_seed=args.seed,
                             alpha=args.alpha, critical_value=c_hat,
                             sigma2_source=args.sigma2_source)
        result["check_k"] = args.check_k
        result["CR"] = run_coverage(cov, workers).coverage_rate
    if args.json:
        print(json.dumps(result, indent=2))
    else:
        line = f"c_hat = {c_hat:.4f}  (n={args.n}, k={args.k}, p={args.p}, {args.error}, M={args.replications})"
        if "CR" in result:
            line += f"\ncoverage at k={args.check_k} with c_hat: {result['CR']:.4f}"
        print(line)
    return EXIT_RETAINED


# ---------------------------------------------------------------------------


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {v}")
    return v


def _alpha(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError(f"alpha must lie in (0, 1), got {v}")
    return v


def _error_law(text: str) -> str:
    try:
        return ErrorSpec.from_name(text).law
    except ElChangeError:
        raise argparse.ArgumentTypeError(f"error must be gaussian or exp, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="elchange", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="write a synthetic two-phase dataset")
    g.add_argument("--n", type=_positive_int, required=True)
    g.add_argument("--p", type=_positive_int, required=True)
    g.add_argument("--k", type=_positive_int, required=True)
    g.add_argument("--error", type=_error_law, default="gaussian", help="gaussian or exp")
    g.add_argument("--beta0", help="phase-one coefficients (list or file); default 1..p")
    g.add_argument("--beta2", help="phase-two coefficients (list, file or 'one-minus'); default beta0")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    t = sub.add_parser("test", help="test a dataset for a change after observation k")
    t.add_argument("--data", required=True, help="CSV with header y,x1,...,xp")
    t.add_argument("--k", type=_positive_int, required=True)
    t.add_argument("--alpha", type=_alpha, default=0.05)
    t.add_argument("--beta0", help="file (or list) with the known phase-one coefficients")
    t.add_argument("--critical", type=parse_critical, default=NORMAL_QUANTILE,
                   help="'normal' or 'fixed:VALUE'")
    t.add_argument("--convention", choices=CONVENTIONS, default=PROOF_CONSISTENT)
    t.add_argument("--json", action="store_true")
    t.set_defaults(func=cmd_test)

    s = sub.add_parser("simulate", help="run a Monte Carlo experiment config")
    s.add_argument("config")
    s.add_argument("--threads", type=_positive_int)
    s.add_argument("--out", help="override the config's output path")
    s.set_defaults(func=cmd_simulate)

    c = sub.add_parser("calibrate", help="simulate the empirical critical value")
    c.add_argument("--n", type=_positive_int, required=True)
    c.add_argument("--k", type=_positive_int, required=True)
    c.add_argument("--p", type=_positive_int, required=True)
    c.add_argument("--error", type=_error_law, default="gaussian")
    c.add_argument("--replications", type=_positive_int, default=10000)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--alpha", type=_alpha, default=0.05)
    c.add_argument("--sigma2-source", choices=SIGMA2_SOURCES, default="true")
    c.add_argument("--check-k", type=_positive_int, help="also report coverage at this k using c_hat")
    c.add_argument("--check-replications", type=_positive_int, default=2000)
    c.add_argument("--threads", type=_positive_int)
    c.add_argument("--json", action="store_true")
    c.set_defaults(func=cmd_calibrate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command in ("gen", "calibrate") and not args.k < args.n:
        parser.error(f"--k must be smaller than --n (got k={args.k}, n={args.n})")
    try:
        return args.func(args)
    except (DataError, ElChangeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
