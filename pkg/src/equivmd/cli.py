"""Command-line interface: ``equivmd test | simulate | summarize``.

Exit codes: 0 the command ran (an equivalence decision is reported, never
encoded in the exit status), 2 invalid input, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import logging
import math
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from ._kernels import get_backend
from .bootstrap import DEFAULT_SEED, BootstrapConfig
from .distributions import RngSeed
from .equivtests import Method, TestConfig, parse_method, run_test
from .errors import (
    AbcNumericalFailure,
    ConvergenceFailure,
    EquivMDError,
    IncompleteGridError,
    NotSpdError,
    UnknownMethodError,
    UnknownScenarioError,
)
from .simharness import (
    DEFAULT_MASTER_SEED,
    SIZES,
    build_scenario,
    default_workers,
    parse_methods,
    read_results,
    run_scenario,
    summarize_mad,
    write_results,
)

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3
PAPER_SCALE_REPS = 350_000

log = logging.getLogger("equivmd")


class InputError(Exception):
    pass


def _vector_arg(text):
    try:
        return np.array([float(v) for v in text.split(",") if v.strip()])
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _sniff(line):
    if "\t" in line:
        return "\t"
    if "," in line:
        return ","
    if ";" in line:
        return ";"
    return None


def load_matrix(path, header=False, delimiter=None) -> np.ndarray:
    """Read a delimited observation matrix (rows = observations)."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"{path}: no such file")
    lines = [ln for ln in path.read_text().splitlines() if ln.strip()]
    if header:
        lines = lines[1:]
    if not lines:
        raise InputError(f"{path}: need at least 2 observations per group, found 0")
    delim = delimiter if delimiter is not None else _sniff(lines[0])
    rows = []
    for k, ln in enumerate(lines, 1 + int(header)):
        cells = ln.split(delim) if delim else ln.split()
        try:
            rows.append([float(c) for c in cells])
        except ValueError:
            raise InputError(f"{path}:{k}: non-numeric value in {ln!r} (use --header if the first row holds names)") from None
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise InputError(f"{path}: rows have differing numbers of columns {sorted(widths)}")
    a = np.array(rows, dtype=float)
    if a.shape[0] < 2:
        raise InputError(f"{path}: need at least 2 observations per group, found {a.shape[0]}")
    if not np.all(np.isfinite(a)):
        raise InputError(f"{path}: non-finite values")
    return a


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def format_report(report: dict) -> str:
    out = report["outcome"]
    lines = [
        f"method:            {out['method']}",
        f"test file:         {report['test_file']} (n={report['n_test']})",
        f"reference file:    {report['ref_file']} (n={report['n_ref']})",
        f"variables:         {report['p']}",
        f"alpha:             {_fmt(report['alpha'])}",
        f"margin direction:  {', '.join(_fmt(v) for v in report['margin_d'])}",
        "statistics:",
    ]
    for key, val in out.get("statistics", {}).items():
        lines.append(f"  {key:<22} {_fmt(val)}")
    lines += [
        f"test statistic:    {_fmt(out['statistic'])}",
        f"threshold:         {_fmt(out['threshold'])}",
        f"compared against:  {_fmt(out['reference'])}",
        f"decision:          {out['decision']}"
        + (" (equivalence concluded)" if out["reject"] else " (equivalence not shown)"),
    ]
    diag = out.get("diagnostics") or {}
    if diag:
        lines.append("diagnostics:")
        for key, val in diag.items():
            lines.append(f"  {key:<22} {_fmt(val) if not isinstance(val, dict) else json.dumps(val)}")
    return "\n".join(lines)


def cmd_test(args) -> int:
    try:
        xt = load_matrix(args.test_file, args.header, args.delimiter)
        xr = load_matrix(args.ref_file, args.header, args.delimiter)
        if xt.shape[1] != xr.shape[1]:
            raise InputError(
                f"dimension mismatch: {args.test_file} has {xt.shape[1]} columns, "
                f"{args.ref_file} has {xr.shape[1]}"
            )
        if args.margin_d.size != xt.shape[1]:
            raise InputError(f"--margin-d has {args.margin_d.size} entries, data have {xt.shape[1]} columns")
        method = parse_method(args.method)
        if method is Method.T2EQTM:
            raise InputError("T2EQTM needs the true covariance and is available in simulations only")
        cfg = TestConfig(
            method=method,
            d=args.margin_d,
            alpha=args.alpha,
            bootstrap=BootstrapConfig(args.bootstrap_b, RngSeed(args.seed), args.alpha),
            fixed_margin_sq=args.fixed_margin_sq if method is Method.EXACT_FIXED_MARGIN else None,
        )
        if method is not Method.EXACT_FIXED_MARGIN and args.fixed_margin_sq is not None:
            raise InputError("--fixed-margin-sq only applies to ExactFixedMargin")
    except UnknownMethodError as exc:
        return _fail(EXIT_INPUT, str(exc.args[0]))
    except (InputError, EquivMDError, ValueError) as exc:
        return _fail(EXIT_INPUT, str(exc))
    try:
        outcome = run_test(xt, xr, cfg)
    except (NotSpdError, AbcNumericalFailure, ConvergenceFailure, ArithmeticError) as exc:
        return _fail(EXIT_NUMERIC, f"numerical failure: {exc}")
    except EquivMDError as exc:
        return _fail(EXIT_INPUT, str(exc))
    report = {
        "version": __version__,
        "test_file": str(args.test_file),
        "ref_file": str(args.ref_file),
        "n_test": int(xt.shape[0]),
        "n_ref": int(xr.shape[0]),
        "p": int(xt.shape[1]),
        "alpha": args.alpha,
        "margin_d": args.margin_d.tolist(),
        "bootstrap_b": args.bootstrap_b,
        "seed": args.seed,
        "outcome": outcome.as_dict(),
    }
    if args.json:
        print(json.dumps(report, indent=2))
    else:
        print(format_report(report))
    if outcome.failed:
        print(f"numerical failure: {outcome.diagnostics.get('failure')}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def _scenarios_arg(text):
    if text.strip().lower() == "all":
        return [f"S{i}" for i in range(1, 9)]
    return [s.strip().upper() for s in text.split(",") if s.strip()]


def cmd_simulate(args) -> int:
    try:
        specs = [build_scenario(s, args.sizes or SIZES) for s in _scenarios_arg(args.scenario)]
        methods = parse_methods(args.methods)
        boot = BootstrapConfig(args.bootstrap_b, RngSeed(args.seed), args.alpha)
        if args.reps < 1:
            raise InputError("--reps must be positive")
    except UnknownScenarioError as exc:
        return _fail(EXIT_INPUT, str(exc.args[0]))
    except UnknownMethodError as exc:
        return _fail(EXIT_INPUT, str(exc.args[0]))
    except (InputError, EquivMDError, ValueError) as exc:
        return _fail(EXIT_INPUT, str(exc))
    if args.reps >= PAPER_SCALE_REPS:
        log.warning("%d replications per cell will take days on a single machine", args.reps)
    workers = args.workers or default_workers()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    started = time.time()
    results = []
    for spec in specs:
        log.info("running %s (%d reps x %d sizes x %d methods)", spec.id, args.reps, len(spec.sizes), len(methods))
        results += run_scenario(spec, methods, args.reps, boot, args.seed, workers, progress=True)
    results_path = out / "results.csv"
    write_results(results, results_path)
    manifest = {
        "command": "simulate",
        "version": __version__,
        "scenarios": [s.id for s in specs],
        "methods": [m.value for m in methods],
        "sizes": list(specs[0].sizes) if specs else [],
        "reps": args.reps,
        "bootstrap_b": args.bootstrap_b,
        "alpha": args.alpha,
        "seed": args.seed,
        "workers": workers,
        "kernel_backend": get_backend().name,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "started": _dt.datetime.fromtimestamp(started).isoformat(timespec="seconds"),
        "elapsed_seconds": round(time.time() - started, 1),
        "results_file": results_path.name,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    print(f"wrote {results_path} ({len(results)} rows) and {out / 'manifest.json'}")
    return EXIT_OK


def cmd_summarize(args) -> int:
    if not args.results:
        return _fail(EXIT_INPUT, "no results files given")
    results = []
    try:
        for path in args.results:
            if not Path(path).is_file():
                raise InputError(f"{path}: no such file")
            results += read_results(path)
        summary = summarize_mad(results, args.nominal)
    except (InputError, IncompleteGridError, ValueError, KeyError) as exc:
        return _fail(EXIT_INPUT, str(exc))
    if args.csv:
        summary.to_csv(args.csv)
    print(summary.format())
    return EXIT_OK


def _fail(code, message) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="equivmd", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    t = sub.add_parser("test", help="run one equivalence test on two data files")
    t.add_argument("test_file")
    t.add_argument("ref_file")
    t.add_argument("--margin-d", type=_vector_arg, required=True, help="margin direction, e.g. 10,10,10")
    t.add_argument("--method", default=Method.PCT_DIF_BC.value)
    t.add_argument("--alpha", type=float, default=0.05)
    t.add_argument("--bootstrap-b", type=int, default=1000)
    t.add_argument("--seed", type=int, default=DEFAULT_SEED)
    t.add_argument("--fixed-margin-sq", type=float, default=None)
    t.add_argument("--header", action="store_true", help="first row of each file holds column names")
    t.add_argument("--delimiter", default=None, help="override delimiter auto-detection")
    t.add_argument("--json", action="store_true", help="machine-readable report")
    t.set_defaults(func=cmd_test)

    s = sub.add_parser("simulate", help="run Monte Carlo scenarios S1..S8")
    s.add_argument("--scenario", default="S1", help="S1..S8, comma list, or 'all'")
    s.add_argument("--methods", default="all", help="comma list of methods or 'all'")
    s.add_argument("--reps", type=int, default=10_000)
    s.add_argument("--bootstrap-b", type=int, default=1000)
    s.add_argument("--alpha", type=float, default=0.05)
    s.add_argument("--seed", type=int, default=DEFAULT_MASTER_SEED)
    s.add_argument("--workers", type=int, default=None, help="default: $EQUIVMD_WORKERS or CPU count")
    s.add_argument("--sizes", type=lambda v: tuple(int(x) for x in v.split(",")), default=None)
    s.add_argument("--out", default="results")
    s.set_defaults(func=cmd_simulate)

    m = sub.add_parser("summarize", help="mean absolute deviation table from results files")
    m.add_argument("results", nargs="*")
    m.add_argument("--nominal", type=float, default=0.05)
    m.add_argument("--csv", default=None, help="also write the table as CSV")
    m.set_defaults(func=cmd_summarize)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose or args.command == "simulate" else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    return args.func(args)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
