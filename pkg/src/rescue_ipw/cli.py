"""Command-line front end.

Machine-readable JSON goes to stdout (and ``--out`` where offered); a short
human summary goes to stderr. Exit codes: 0 ok, 1 I/O error, 2 bad usage or
input, 3 estimation failure, 4 variance failure.
"""

import argparse
import json
import math
import sys
import time
import warnings

import numpy as np

from . import __version__
from .data import Schema, load_dataset, write_dataset
from .errors import DataError, DimensionMismatch, EmptyStratum, EstimationError, VarianceError
from .estimators import Estimand
from .rng import SEED_ENV, default_seed
from .simulate import (
    SCENARIOS,
    TOY_TABLE,
    PotentialOutcomeTable,
    ScenarioConfig,
    generate_scenario,
    toy_estimands,
)
from .study import parse_rho_grid, run_mc_study, sensitivity_sweep, write_plot_data, write_study_csv
from .tilt import Variant
from .variance import EstimatorSpec, bootstrap, influence_se_balanced

SCHEMA_VERSION = 1

EXIT_OK, EXIT_IO, EXIT_USAGE, EXIT_ESTIMATION, EXIT_VARIANCE = 0, 1, 2, 3, 4


class UsageError(Exception):
    pass


# ------------------------------------------------------------------ JSON output


def to_json(obj, indent=2, _level=0):
    """JSON text with every float written to 17 significant digits; NaN/inf become null."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, (bool, np.bool_)) or obj is None:
        return json.dumps(None if obj is None else bool(obj))
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return format(v, ".17g") if math.isfinite(v) else "null"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {to_json(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        if len(obj) == 0:
            return "[]"
        items = [pad + to_json(v, indent, _level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _emit(report, out_path=None):
    text = to_json(report) + "\n"
    sys.stdout.write(text)
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text)


def _human(line=""):
    print(line, file=sys.stderr)


# ------------------------------------------------------------------ arguments


def _seed(value):
    if value is not None:
        return value
    return default_seed(fallback=None)


def _truncation(text):
    if text is None:
        return None
    try:
        lo, hi = (float(x) for x in text.split(","))
    except ValueError:
        raise UsageError(f"--truncate expects lo,hi percentiles, got {text!r}") from None
    if not 0 <= lo < hi <= 100:
        raise UsageError("--truncate needs 0 <= lo < hi <= 100")
    return (lo, hi)


def _se_mode(text):
    if text in ("influence", "none"):
        return text, None
    if text.startswith("bootstrap:"):
        try:
            b = int(text.split(":", 1)[1])
        except ValueError:
            b = 0
        if b >= 2:
            return "bootstrap", b
    raise UsageError(f"--se must be influence, none or bootstrap:B with B >= 2, got {text!r}")


def _list_arg(text):
    if text is None:
        return None
    return [x.strip() for x in text.split(",") if x.strip()]


def _add_schema(p):
    g = p.add_argument_group("input columns")
    g.add_argument("--col-r", default="R", help="randomised arm column (1 = active)")
    g.add_argument("--col-s", default="S", help="switch indicator column")
    g.add_argument("--col-y", default="Y", help="outcome column")
    g.add_argument("--cols-l", default="L_",
                   help="post-treatment covariate columns: a prefix or a comma-separated list")
    g.add_argument("--cols-c", default="C_",
                   help="baseline covariate columns: a prefix or a comma-separated list")
    g.add_argument("--strata-col", "--col-stratum", dest="strata_col", default=None,
                   help="column of bootstrap strata labels")


def _schema(args):
    def resolve(text):
        return _list_arg(text) if "," in text else text

    return Schema(col_r=args.col_r, col_s=args.col_s, col_y=args.col_y,
                  cols_l=resolve(args.cols_l), cols_c=resolve(args.cols_c),
                  col_stratum=args.strata_col)


def _add_scenario(p):
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--scenario", type=int, choices=sorted(SCENARIOS), help="built-in scenario")
    g.add_argument("--config", help="scenario JSON file")


def _config(args):
    if args.scenario is not None:
        return SCENARIOS[args.scenario], str(args.scenario)
    try:
        return ScenarioConfig.from_json(args.config), args.config
    except (ValueError, TypeError, KeyError) as exc:
        raise UsageError(f"bad scenario config: {exc}") from None


def _add_estimation(p):
    p.add_argument("--variant", choices=[v.value for v in Variant], default=Variant.NON_SWITCHER.value,
                   help="records driving the tilt equations")
    p.add_argument("--truncate", default=None, metavar="LO,HI",
                   help="clamp treated weights to these percentiles")
    p.add_argument("--flip", action="store_true", help="relabel arms before estimating")
    p.add_argument("--propensity-covariates", default=None,
                   help="comma-separated baseline covariates for P(R=1|C); default: none")


def _digest(dataset):
    return dataset.summary()


def build_parser():
    parser = argparse.ArgumentParser(prog="rescue-ipw",
                                     description="Tilted-IPW estimation of the balanced rescue-medication estimand.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write a simulated trial dataset")
    _add_scenario(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=None, help=f"default: ${SEED_ENV}")
    p.add_argument("--out", required=True)
    p.add_argument("--retain-l", action="store_true", help="keep L for control records too")

    p = sub.add_parser("estimate", help="estimate one estimand from a dataset CSV")
    p.add_argument("--input", required=True)
    _add_schema(p)
    p.add_argument("--estimand", required=True, choices=["balanced", "policy", "hypothetical"])
    p.add_argument("--rho", type=float, default=None)
    _add_estimation(p)
    p.add_argument("--se", default=None, help="influence | bootstrap:B | none")
    p.add_argument("--seed", type=int, default=None, help=f"bootstrap seed (default: ${SEED_ENV} or 0)")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default=None, help="also write the JSON report here")

    p = sub.add_parser("sweep", help="balanced estimates over a grid of rho")
    p.add_argument("--input", required=True)
    _add_schema(p)
    p.add_argument("--rho-grid", required=True, metavar="LO:HI:STEP")
    _add_estimation(p)
    p.add_argument("--se", default="influence", choices=["influence", "none"])
    p.add_argument("--out", default=None)

    p = sub.add_parser("study", help="Monte-Carlo replication study")
    _add_scenario(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--reps", type=int, required=True)
    p.add_argument("--rho", type=float, required=True)
    p.add_argument("--truncate", default=None, metavar="LO,HI")
    p.add_argument("--variant", choices=[v.value for v in Variant], default=Variant.NON_SWITCHER.value)
    p.add_argument("--seed", type=int, default=None, help=f"default: ${SEED_ENV} or 0")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", default=None, help="summary CSV (default: stdout)")
    p.add_argument("--json", dest="json_out", default=None, help="JSON echo of options and results")
    p.add_argument("--plot-data", default=None, help="per-replicate estimates CSV")

    p = sub.add_parser("toy", help="estimands of a potential-outcome table")
    p.add_argument("--table", default=None, help="CSV with y10,y11,y00,y01,s0,s1 columns")
    return parser


# ------------------------------------------------------------------ commands


def cmd_simulate(args):
    seed = _seed(args.seed)
    if seed is None:
        raise UsageError(f"--seed is required unless ${SEED_ENV} is set")
    if args.n < 2:
        raise UsageError("--n must be at least 2")
    config, label = _config(args)
    data = generate_scenario(config, args.n, seed, retain_l=args.retain_l)
    write_dataset(data, args.out)
    digest = _digest(data)
    _emit({"schema": SCHEMA_VERSION, "command": "simulate", "scenario": label, "seed": seed,
           "out": args.out, "input": digest})
    _human(f"wrote {args.out}: n={digest['n']}, treated={digest['n_treated']}, control={digest['n_control']}")
    return EXIT_OK


def _run_estimate(dataset, args, estimand, se_mode, boot_b, seed, truncation, covs):
    if estimand == "balanced":
        spec = EstimatorSpec(Estimand.BALANCED_FLIPPED if args.flip else Estimand.BALANCED,
                             {"rho": args.rho, "variant": args.variant, "truncation": truncation,
                              "propensity_covariates": covs})
    elif estimand == "policy":
        spec = EstimatorSpec(Estimand.TREATMENT_POLICY, {"propensity_covariates": covs})
    else:
        spec = EstimatorSpec(Estimand.HYPOTHETICAL, {"propensity_covariates": covs})
    result = spec.run(dataset)
    try:
        if se_mode == "influence":
            se1, se0, se = influence_se_balanced(dataset, result)
            result = result.with_uncertainty(se=se, se_mu1=se1, se_mu0=se0, se_method="influence",
                                             ci=(result.mu - 1.959963984540054 * se,
                                                 result.mu + 1.959963984540054 * se))
        elif se_mode == "bootstrap":
            bs = bootstrap(dataset, spec, boot_b, seed, strata=dataset.strata, jobs=args.jobs)
            result = result.with_uncertainty(se=bs.se, se_mu1=bs.se_mu1, se_mu0=bs.se_mu0,
                                             se_method=f"bootstrap:{boot_b}", ci=bs.ci)
            if bs.failures:
                msg = f"{bs.failures} of {boot_b} bootstrap replicates failed and were dropped"
                result = result.with_uncertainty(warnings=result.warnings + (msg,))
    except EstimationError as exc:
        raise VarianceError(str(exc)) from exc
    return result


def cmd_estimate(args):
    if args.estimand == "balanced" and args.rho is None:
        raise UsageError("--estimand balanced requires --rho")
    if args.estimand != "balanced" and (args.flip or args.truncate):
        raise UsageError("--flip and --truncate apply to the balanced estimand only")
    se_text = args.se or ("influence" if args.estimand == "balanced" else "none")
    se_mode, boot_b = _se_mode(se_text)
    if se_mode == "influence" and args.estimand != "balanced":
        raise UsageError("influence-function SEs are available for the balanced estimand only")
    truncation = _truncation(args.truncate)
    covs = _list_arg(args.propensity_covariates) or []
    seed = _seed(args.seed)
    seed = 0 if seed is None else seed
    started = time.perf_counter()
    dataset = load_dataset(args.input, _schema(args))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        result = _run_estimate(dataset, args, args.estimand, se_mode, boot_b, seed, truncation, covs)
    messages = _collect(caught, result.warnings)
    report = {
        "schema": SCHEMA_VERSION,
        "command": "estimate",
        "argv": args.argv,
        "input": _digest(dataset),
        "result": result.to_dict(),
        "warnings": messages,
        "wall_time": time.perf_counter() - started,
    }
    _emit(report, args.out)
    _human(_result_line(result))
    for msg in messages:
        _human(f"warning: {msg}")
    return EXIT_OK


def _collect(caught, extra=()):
    out = []
    for msg in [str(w.message) for w in caught] + list(extra):
        if msg not in out:
            out.append(msg)
    return out


def _result_line(res):
    se = "" if res.se is None else f"  se={res.se:.4f}"
    return f"{res.estimand.value:<18} mu1={res.mu1:.4f}  mu0={res.mu0:.4f}  mu={res.mu:.4f}{se}"


def cmd_sweep(args):
    try:
        grid = parse_rho_grid(args.rho_grid)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    truncation = _truncation(args.truncate)
    if args.se == "influence" and truncation is not None:
        raise UsageError("influence SEs need untruncated weights; use --se none with --truncate")
    covs = _list_arg(args.propensity_covariates) or []
    started = time.perf_counter()
    dataset = load_dataset(args.input, _schema(args))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            results = sensitivity_sweep(dataset, grid, variant=args.variant, truncation=truncation,
                                        propensity_covariates=covs, flip=args.flip)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        if args.se == "influence":
            results = [r.with_uncertainty(se=se, se_mu1=s1, se_mu0=s0, se_method="influence")
                       for r, (s1, s0, se) in ((r, influence_se_balanced(dataset, r)) for r in results)]
    rows = [dict(rho=r.options["rho"], **r.to_dict()) for r in results]
    _emit({"schema": SCHEMA_VERSION, "command": "sweep", "argv": args.argv,
           "input": _digest(dataset), "results": rows,
           "warnings": _collect(caught, [m for r in results for m in r.warnings]),
           "wall_time": time.perf_counter() - started}, args.out)
    _human(f"{'rho':>6} {'mu1':>9} {'mu0':>9} {'mu':>9} {'se':>9}")
    for r in results:
        se = "" if r.se is None else f"{r.se:9.4f}"
        _human(f"{r.options['rho']:6.3f} {r.mu1:9.4f} {r.mu0:9.4f} {r.mu:9.4f} {se}")
    return EXIT_OK


def cmd_study(args):
    if args.reps < 1 or args.n < 2:
        raise UsageError("--reps must be >= 1 and --n >= 2")
    if not 0 < args.rho <= 1:
        raise UsageError("--rho must lie in (0, 1]")
    config, label = _config(args)
    seed = _seed(args.seed)
    seed = 0 if seed is None else seed
    truncation = _truncation(args.truncate)
    started = time.perf_counter()
    res = run_mc_study(config, args.n, args.reps, args.rho, truncation=truncation,
                       variant=args.variant, seed=seed, jobs=args.jobs, scenario=label)
    if args.out:
        write_study_csv([res], args.out)
    else:
        write_study_csv([res], sys.stdout)
    if args.plot_data:
        write_plot_data([res], args.plot_data)
    echo = {
        "schema": SCHEMA_VERSION,
        "command": "study",
        "options": res.options(),
        "params": {k: vars(v) for k, v in res.params.items()},
        "weight_p5": res.weight_p5,
        "weight_p95": res.weight_p95,
        "reps_completed": res.reps_completed,
        "reps_failed": res.reps_failed,
    }
    if args.json_out:
        with open(args.json_out, "w", encoding="utf-8") as fh:
            fh.write(to_json(echo) + "\n")
    if args.out:
        sys.stdout.write(to_json(echo) + "\n")
    _human(f"scenario {label}: n={res.n} reps={res.reps} rho={res.rho_assumed} failed={res.reps_failed} "
           f"({time.perf_counter() - started:.1f}s)")
    for name, p in res.params.items():
        se = "NA" if p.se is None else f"{p.se:.4f}"
        _human(f"  {name:<11} bias={p.bias:+.4f} se={se}")
    return EXIT_OK


def cmd_toy(args):
    table = TOY_TABLE if args.table is None else PotentialOutcomeTable.from_csv(args.table)
    est = toy_estimands(table)
    floats = est.as_floats()
    names = ("policy", "hypothetical", "principal_stratification", "balanced")
    exact = [None if v is None else str(v) for v in
             (est.policy, est.hypothetical, est.principal_stratification, est.balanced)]
    _emit({"schema": SCHEMA_VERSION, "command": "toy",
           "estimands": dict(zip(names, floats)), "exact": dict(zip(names, exact))})
    shown = ", ".join("undefined" if v is None else repr(v) for v in floats)
    _human(f"(policy, hypothetical, principal, balanced) = ({shown})")
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "estimate": cmd_estimate, "sweep": cmd_sweep,
            "study": cmd_study, "toy": cmd_toy}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code
    args.argv = list(sys.argv[1:] if argv is None else argv)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        _human(f"error: {exc}")
        return EXIT_USAGE
    except (DataError, DimensionMismatch, EmptyStratum, ValueError) as exc:
        _human(f"input error: {exc}")
        return EXIT_USAGE
    except VarianceError as exc:
        _human(f"variance error: {exc}")
        return EXIT_VARIANCE
    except EstimationError as exc:
        _human(f"estimation error: {exc}")
        return EXIT_ESTIMATION
    except OSError as exc:
        _human(f"I/O error: {exc}")
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
