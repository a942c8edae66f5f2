"""Command-line driver: ``dyncrm <subcommand> ...``.

Exit codes: 0 success, 2 usage, 3 data error, 4 numerical or convergence
failure, 5 an expectation that does not exist (``eta`` above its bound).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import warnings
from pathlib import Path

from . import crm, fit, glm, oracle
from . import portfolio as pf
from .errors import (
    ConvergenceError,
    DataError,
    DegeneracyError,
    DomainError,
    EstimationError,
    ExistenceError,
    GridError,
)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC, EXIT_EXISTENCE = 0, 2, 3, 4, 5
THREADS_ENV = "DYNCRM_THREADS"


class UsageError(Exception):
    pass


def write_json(path: Path, obj):
    text = json.dumps(obj, indent=2, sort_keys=True, allow_nan=False)
    path.write_text(text + "\n", encoding="utf-8")


def read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


def thread_count(args) -> int:
    if args.threads is not None:
        n = args.threads
    else:
        env = os.environ.get(THREADS_ENV)
        try:
            n = int(env) if env else 1
        except ValueError:
            raise UsageError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
    if n < 1:
        raise UsageError("thread count must be >= 1")
    return n


def crm_params_from_dict(d) -> crm.CrmParams:
    """Model parameters from a params file; prior scales default to the tied values."""
    try:
        a1, a2 = float(d["alpha0_1"]), float(d["alpha0_2"])
        return crm.CrmParams(
            float(d.get("q1", 1.0)), float(d.get("q2", 1.0)), a1, float(d.get("beta0_1", a1)),
            a2, float(d.get("beta0_2", a2 - 1.0)), zeta1=tuple(d["zeta1"]),
            zeta2=tuple(d["zeta2"]), eta=float(d.get("eta", 0.0)),
            psi=float(d.get("psi", 1.0)), variant=d.get("variant", "plain"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, DomainError):
            raise
        raise DomainError(f"invalid parameter record: {exc}") from exc


def _load_data(args):
    schema = pf.Schema.load(args.schema)
    return schema, pf.ingest(args.data, schema)


def _target_year(args, schema):
    year = args.year if args.year is not None else schema.holdout_year
    if year is None:
        raise UsageError("no target year: pass --year or set holdout_year in the schema")
    return int(year)


def _training(port: pf.Portfolio, schema: pf.Schema):
    return port.before(schema.holdout_year) if schema.holdout_year is not None else port


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_fit_glm(args):
    schema, port = _load_data(args)
    train = _training(port, schema)
    X, y1, y2 = train.stacked()
    names = train.design_names
    result = {
        "frequency": glm.fit_poisson(X, y1, names).to_dict(),
        "severity": glm.fit_gamma_severity(X, y1, y2, names).to_dict(),
        "severity_independent": glm.fit_gamma_severity(X, y1, y2, names,
                                                       include_count=False).to_dict(),
    }
    write_json(_out(args) / "glm.json", result)


def _glm_fits(args, train):
    if args.glm:
        d = read_json(args.glm)
        return (glm.GlmFit.from_dict(d["frequency"]), glm.GlmFit.from_dict(d["severity"]),
                glm.GlmFit.from_dict(d["severity_independent"]))
    X, y1, y2 = train.stacked()
    names = train.design_names
    return (glm.fit_poisson(X, y1, names), glm.fit_gamma_severity(X, y1, y2, names),
            glm.fit_gamma_severity(X, y1, y2, names, include_count=False))


def cmd_fit_dep(args):
    schema, port = _load_data(args)
    train = _training(port, schema)
    config_d = read_json(args.params).get("optimizer", {}) if args.params else {}
    config = fit.FitConfig.from_dict({**config_d, "threads": thread_count(args)})
    f_freq, f_sev, f_sev0 = _glm_fits(args, train)
    panel = train.panel()
    names = [b.value for b in fit.Benchmark] if args.benchmark == "all" else [args.benchmark]
    out = _out(args)
    for name in names:
        sev = f_sev0 if name == fit.Benchmark.NAIVE.value else f_sev
        res = fit.fit_dependence(panel, f_freq, sev, name, config, args.variant)
        d = res.to_dict()
        d["optimizer"] = config.to_dict()
        d["optimizer"].pop("threads")
        write_json(out / f"fit_{name}.json", d)


def cmd_predict(args):
    schema, port = _load_data(args)
    year = _target_year(args, schema)
    res = fit.FitResult.from_dict(read_json(args.params))
    rows = pf.predict_portfolio(port, res, year, threads=thread_count(args))
    pf.write_premiums(_out(args) / "premiums.csv", rows)


def cmd_validate(args):
    schema, port = _load_data(args)
    year = _target_year(args, schema)
    premiums = {}
    for item in args.premiums:
        name, sep, path = item.partition("=")
        if not sep:
            name, path = Path(item).stem, item
        try:
            premiums[name] = pf.read_premiums(path)
        except OSError as exc:
            raise DataError(f"cannot read {path}: {exc}") from exc
    report = pf.validate(port, premiums, year)
    write_json(_out(args) / "report.json", report.to_dict())


def _years(text):
    try:
        if ":" in text:
            a, b = text.split(":")
            return list(range(int(a), int(b) + 1))
        return [int(v) for v in text.split(",")]
    except ValueError:
        raise UsageError(f"cannot parse years {text!r} (use 2001:2005 or 2001,2002)") from None


def _seed(args, d=None):
    seed = args.seed if args.seed is not None else (d or {}).get("seed")
    if seed is None:
        raise UsageError("a seed is required (--seed or 'seed' in the params file)")
    return int(seed)


def cmd_simulate(args):
    d = read_json(args.params)
    params = crm_params_from_dict(d)
    seed = _seed(args, d)
    years = _years(args.years)
    covs = tuple(d.get("covariates", pf.SYNTHETIC_SCHEMA.covariates))
    schema = pf.Schema(covs, bool(d.get("intercept", True)), years[-1] if args.holdout else None)
    port = pf.synthetic_portfolio(params, args.n_policies, years, seed, schema)
    out = _out(args)
    pf.write_portfolio(out / "portfolio.csv", port, schema)
    write_json(out / "schema.json", schema.to_dict())


def cmd_verify(args):
    seed = _seed(args)
    result = oracle.run_verification(seed, quick=args.quick, threads=thread_count(args))
    write_json(_out(args) / "verify.json", result)
    for c in result["checks"]:
        print(f"{'PASS' if c['passed'] else 'FAIL'}  {c['check']}  {c['value']:.3g}")
    if not result["passed"]:
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_weights(args):
    schema, port = _load_data(args)
    year = _target_year(args, schema)
    res = fit.FitResult.from_dict(read_json(args.params))
    params = res.params()
    with open(_out(args) / "weights.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("policy_id", "index", "year", "omega1", "omega2"))
        for h in port.histories:
            past = h.before(year)
            om1, om2 = crm.premium_weights(past, params)
            labels = ["prior"] + [str(p.year) for p in past.periods]
            for i, (lab, a, b) in enumerate(zip(labels, om1, om2)):
                w.writerow((h.policy_id, i, lab, pf.fmt(a), pf.fmt(b)))


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dyncrm", description=__doc__.splitlines()[0])
    parser.add_argument("--threads", type=int, default=None,
                        help=f"worker threads (default: ${THREADS_ENV} or 1)")
    sub = parser.add_subparsers(dest="command", required=True)

    def data_args(p):
        p.add_argument("--data", required=True, help="portfolio CSV")
        p.add_argument("--schema", required=True, help="schema JSON")

    def out_arg(p):
        p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("fit-glm", help="fit the frequency and severity regressions")
    data_args(p)
    out_arg(p)
    p.set_defaults(func=cmd_fit_glm)

    p = sub.add_parser("fit-dep", help="fit the dependence parameters of a benchmark")
    data_args(p)
    p.add_argument("--glm", help="glm.json from fit-glm (refitted when omitted)")
    p.add_argument("--params", help="params JSON with an 'optimizer' section")
    p.add_argument("--benchmark", default="proposed",
                   choices=[b.value for b in fit.Benchmark] + ["all"])
    p.add_argument("--variant", default="plain", choices=[v.value for v in crm.Variant])
    out_arg(p)
    p.set_defaults(func=cmd_fit_dep)

    p = sub.add_parser("predict", help="a posteriori premiums for a target year")
    data_args(p)
    p.add_argument("--params", required=True, help="fitted parameters JSON")
    p.add_argument("--year", type=int)
    out_arg(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("validate", help="hold-out RMSE and MAE of premium files")
    data_args(p)
    p.add_argument("--premiums", nargs="+", required=True, metavar="NAME=PATH")
    p.add_argument("--year", type=int)
    out_arg(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("simulate", help="simulate a synthetic portfolio")
    p.add_argument("--params", required=True, help="model parameters JSON")
    p.add_argument("--n-policies", type=int, default=500)
    p.add_argument("--years", default="2001:2005")
    p.add_argument("--seed", type=int)
    p.add_argument("--holdout", action="store_true", help="mark the last year as hold-out")
    out_arg(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("verify", help="run the oracle comparisons")
    p.add_argument("--seed", type=int)
    p.add_argument("--quick", action="store_true")
    out_arg(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("weights", help="credibility weights of every policy")
    data_args(p)
    p.add_argument("--params", required=True, help="fitted parameters JSON")
    p.add_argument("--year", type=int)
    out_arg(p)
    p.set_defaults(func=cmd_weights)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            code = args.func(args)
        return EXIT_OK if code is None else code
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"dyncrm: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ExistenceError as exc:
        print(f"dyncrm: existence condition violated: {exc}", file=sys.stderr)
        return EXIT_EXISTENCE
    except (ConvergenceError, GridError, DegeneracyError) as exc:
        print(f"dyncrm: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DataError, DomainError, EstimationError) as exc:
        print(f"dyncrm: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FloatingPointError as exc:
        print(f"dyncrm: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def main():
    sys.exit(run())
