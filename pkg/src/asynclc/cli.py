"""Command-line interface.

Subcommands: fit, scb, select-bandwidth, simulate, reproduce, normalize.
Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
Every error prints a machine-parsable `ERROR <CODE>:` line to stderr. A flat
key=value config file may supply defaults (--config); explicit flags win.
Bandwidth flags accept a float, "auto", or a rule like "n^-0.6" / "4*n^-0.6".
"""

from __future__ import annotations

import argparse
import json
import re
import sys
from pathlib import Path

import numpy as np

from . import bandwidth as bw_mod
from . import io as io_mod
from .errors import (
    AsynclcError,
    CovarianceNotPD,
    DegenerateScale,
    EmptyInput,
    EstimationFailed,
    FoldDegenerate,
    InvalidBandwidth,
    InvalidDataset,
    InvalidParameter,
    InvalidSampleSize,
    NoLocalData,
    OrphanSubject,
    ParseError,
    SelectionFailed,
    SingularFit,
    SingularLocalFit,
)
from .estimators import METHODS, Bandwidths, fit_curve, normalize_longitudinal
from .kernels import KernelFamily, bandwidth_rule
from .scb import MultiplierLaw, bootstrap_band
from .simulation import DgpConfig, EstimatorConfig, McConfig, run_monte_carlo

_USAGE_ERRORS = (InvalidParameter, InvalidBandwidth, InvalidSampleSize)
_DATA_ERRORS = (ParseError, OrphanSubject, EmptyInput, InvalidDataset, FileNotFoundError)
_NUMERICAL_ERRORS = (
    NoLocalData,
    SingularLocalFit,
    SingularFit,
    DegenerateScale,
    EstimationFailed,
    SelectionFailed,
    CovarianceNotPD,
    FoldDegenerate,
)

_ERROR_CODES = {
    ParseError: "PARSE_ERROR",
    OrphanSubject: "ORPHAN_SUBJECT",
    EmptyInput: "EMPTY_INPUT",
    InvalidDataset: "INVALID_DATA",
    FileNotFoundError: "FILE_NOT_FOUND",
    NoLocalData: "NO_LOCAL_DATA",
    SingularLocalFit: "SINGULAR_FIT",
    SingularFit: "SINGULAR_FIT",
    DegenerateScale: "DEGENERATE_SCALE",
    EstimationFailed: "ESTIMATION_FAILED",
    SelectionFailed: "SELECTION_FAILED",
    CovarianceNotPD: "COVARIANCE_NOT_PD",
    FoldDegenerate: "FOLD_DEGENERATE",
}


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


_RULE_RE = re.compile(r"^(?:(?P<scale>\d+(?:\.\d+)?)\*?)?n\^(?P<exp>-?\d+(?:\.\d+)?)$")


def _resolve_bandwidth(text: str | None, n: int) -> float | str | None:
    """A bandwidth flag value: float, 'auto', or an n^-a rule."""
    if text is None:
        return None
    text = text.strip().lower()
    if text == "auto":
        return "auto"
    m = _RULE_RE.match(text)
    if m:
        scale = float(m.group("scale")) if m.group("scale") else 1.0
        return bandwidth_rule(n, -float(m.group("exp")), scale)
    try:
        value = float(text)
    except ValueError:
        raise InvalidParameter(f"cannot parse bandwidth {text!r}") from None
    if value <= 0:
        raise InvalidBandwidth(f"bandwidth must be positive, got {value}")
    return value


def _grid(args) -> np.ndarray:
    if args.grid_points < 1:
        raise InvalidParameter("grid-points must be >= 1")
    return np.linspace(args.grid_start, args.grid_stop, args.grid_points)


def _family(args) -> KernelFamily:
    return KernelFamily(args.family)


def _add_io_flags(p, with_async=True):
    p.add_argument("--sync", required=True, help="synchronous CSV (subject_id,time,y,x1..xp)")
    if with_async:
        p.add_argument("--async", dest="async_path", default=None,
                       help="asynchronous CSV (subject_id,time,z1..zq)")


def _add_fit_flags(p):
    p.add_argument("--method", choices=list(METHODS) + ["two-step"],
                   default="two-step-centering")
    p.add_argument("--h", default=None, help="first-stage bandwidth (float, rule, or auto)")
    p.add_argument("--h1", default=None, help="second-stage/pair bandwidth")
    p.add_argument("--h2", default=None, help="second-stage/pair bandwidth")
    p.add_argument("--grid-start", type=float, default=0.05)
    p.add_argument("--grid-stop", type=float, default=0.95)
    p.add_argument("--grid-points", type=int, default=181)
    p.add_argument("--family", choices=[f.value for f in KernelFamily],
                   default=KernelFamily.EPANECHNIKOV.value)
    p.add_argument("--cv-folds", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)


def _resolve_fit_bandwidths(args, dataset):
    """Resolve flag values, running CV where 'auto' was requested."""
    n = dataset.n
    family = _family(args)
    h = _resolve_bandwidth(args.h, n)
    h1 = _resolve_bandwidth(args.h1, n)
    h2 = _resolve_bandwidth(args.h2, n)
    if args.method == "one-step":
        if h1 == "auto" or h2 == "auto":
            plan = bw_mod.default_plan(n, "one-step", n_folds=args.cv_folds, seed=args.seed)
            chosen = bw_mod.select(plan, dataset, "one-step", family=family).chosen
            h1 = chosen[0] if h1 == "auto" else h1
            h2 = chosen[1] if h2 == "auto" else h2
        if h1 is None or h2 is None:
            raise InvalidParameter("one-step fit requires --h1 and --h2")
        return Bandwidths(h1=h1, h2=h2)
    if h == "auto":
        plan = bw_mod.default_plan(n, "first", n_folds=args.cv_folds, seed=args.seed)
        h = bw_mod.select(plan, dataset, "first", family=family).chosen
    if h is None:
        raise InvalidParameter("two-step fits require --h")
    if dataset.q >= 1:
        if h1 == "auto" or h2 == "auto":
            beta_curve = fit_curve(dataset, args.method, Bandwidths(h=h), family=family)
            plan = bw_mod.default_plan(n, "second", n_folds=args.cv_folds, seed=args.seed)
            chosen = bw_mod.select(plan, dataset, "second", beta_curve=beta_curve, family=family).chosen
            h1 = chosen[0] if h1 == "auto" else h1
            h2 = chosen[1] if h2 == "auto" else h2
        if h1 is None or h2 is None:
            raise InvalidParameter("two-step fits with asynchronous covariates require --h1 and --h2")
        return Bandwidths(h=h, h1=h1, h2=h2)
    return Bandwidths(h=h)


def _cmd_fit(args) -> int:
    dataset = io_mod.ingest(args.sync, args.async_path)
    bw = _resolve_fit_bandwidths(args, dataset)
    curve = fit_curve(dataset, args.method, bw, grid=_grid(args), family=_family(args))
    io_mod.emit_curve_csv(curve, args.out)
    print(f"wrote {args.out}")
    return 0


def _cmd_scb(args) -> int:
    if not 0.0 < args.alpha < 1.0:
        raise InvalidParameter(f"alpha must be in (0, 1), got {args.alpha}")
    if args.b < 100:
        raise InvalidParameter(f"B must be >= 100, got {args.b}")
    dataset = io_mod.ingest(args.sync, args.async_path)
    bw = _resolve_fit_bandwidths(args, dataset)
    curve = fit_curve(dataset, args.method, bw, grid=_grid(args), family=_family(args))
    targets = ("beta", "gamma") if args.target == "both" else (args.target,)
    law = MultiplierLaw(args.law)
    bands = {}
    meta = {"alpha": args.alpha, "B": args.b, "seed": args.seed, "law": args.law, "bands": {}}
    for target in targets:
        if target == "gamma" and dataset.q < 1:
            continue
        coef = args.coef
        if target == "beta" and args.method == "two-step-vcm":
            coef = args.coef + 1  # the band process for VCM covers (alpha, beta)
        band = bootstrap_band(
            dataset, curve, target=target, coef=coef,
            B=args.b, alpha=args.alpha, law=law, seed=args.seed,
        )
        block_size = dict(curve.blocks)[target]
        column = target if block_size == 1 else f"{target}{args.coef + 1}"
        bands[column] = band
        meta["bands"][column] = {"c_alpha": band.c_alpha, "coef": args.coef}
    curve.bands.update(bands)
    io_mod.emit_curve_csv(curve, args.out, bands=bands)
    meta_path = Path(args.out).with_suffix(".meta.json")
    with open(meta_path, "w") as fh:
        json.dump(meta, fh, indent=2)
    print(f"wrote {args.out} and {meta_path}")
    return 0


def _cmd_select_bandwidth(args) -> int:
    dataset = io_mod.ingest(args.sync, args.async_path)
    family = _family(args)
    times = tuple(float(t) for t in args.times.split(","))
    if args.candidates:
        raw = [c for c in args.candidates.split(",") if c]
        if args.stage == "first":
            candidates = tuple(float(c) for c in raw)
        else:
            candidates = tuple(
                (float(c.split(":")[0]), float(c.split(":")[-1])) for c in raw
            )
        plan = bw_mod.CvPlan(candidates, n_folds=args.folds, eval_times=times, seed=args.seed)
    else:
        plan = bw_mod.default_plan(dataset.n, args.stage, n_folds=args.folds,
                                   eval_times=times, seed=args.seed)
    beta_curve = None
    if args.stage == "second":
        h = _resolve_bandwidth(args.h, dataset.n)
        if h == "auto" or h is None:
            first_plan = bw_mod.default_plan(dataset.n, "first", n_folds=args.folds, seed=args.seed)
            h = bw_mod.select(first_plan, dataset, "first", family=family).chosen
        beta_curve = fit_curve(dataset, args.method, Bandwidths(h=h), family=family)
    result = bw_mod.select(plan, dataset, args.stage, beta_curve=beta_curve, family=family)
    io_mod.emit_cv_csv(result, args.out)
    lo, hi = result.theoretical_range
    print(f"chosen: {result.chosen!r} (theoretical range [{lo:.6g}, {hi:.6g}])")
    print(f"wrote {args.out}")
    return 0


def _estimator_from_flags(args, n: int) -> EstimatorConfig:
    h = _resolve_bandwidth(args.h, n)
    h1 = _resolve_bandwidth(args.h1, n)
    h2 = _resolve_bandwidth(args.h2, n)
    if "auto" in (h, h1, h2):
        raise InvalidParameter("simulate requires explicit bandwidths (float or rule)")
    targets = tuple(t for t in args.scb_targets.split(",") if t) if args.scb_targets else ()
    return EstimatorConfig(
        label=args.label or args.method,
        method=args.method,
        h=h,
        h1=h1,
        h2=h2,
        curve_metrics=args.curve_metrics or bool(targets),
        scb_targets=targets,
    )


def _cmd_simulate(args) -> int:
    if not 0.0 < args.alpha < 1.0:
        raise InvalidParameter(f"alpha must be in (0, 1), got {args.alpha}")
    if args.reps < 1:
        raise InvalidParameter("reps must be >= 1")
    cfg = _estimator_from_flags(args, args.n)
    mc = McConfig(
        replicates=args.reps,
        estimators=(cfg,),
        eval_times=tuple(float(t) for t in args.times.split(",")),
        scb_b=args.scb_b,
        scb_alpha=args.alpha,
        scb_law=MultiplierLaw(args.scb_law),
        base_seed=args.seed,
    )
    dgp = DgpConfig(n=args.n, setting=args.setting, seed=args.seed)
    report = run_monte_carlo(mc, dgp)
    paths = io_mod.emit_report(report, args.out, Path(args.out).with_suffix(".json"))
    for row in report.pointwise:
        print(
            f"{row.estimator} {row.block} t={row.time:g}: bias={row.bias:.4f} "
            f"sd={row.sd:.4f} se={row.se_mean:.4f} cp={row.cp_pct:.1f}"
        )
    for w in report.warnings:
        print(w, file=sys.stderr)
    print("wrote " + ", ".join(str(p) for p in paths))
    return 0


def _reproduce_configs(preset: str, n: int, scb: bool) -> tuple[str, tuple[EstimatorConfig, ...]]:
    h6 = bandwidth_rule(n, 0.6)
    h7 = bandwidth_rule(n, 0.7)
    h45 = bandwidth_rule(n, 0.45)
    h5 = bandwidth_rule(n, 0.5)
    two_step = lambda label, h, method="two-step-centering", **kw: EstimatorConfig(
        label=label, method=method, h=h, h1=h5, h2=h5, **kw
    )
    one_step = lambda label, h, **kw: EstimatorConfig(
        label=label, method="one-step", h1=h, h2=h, **kw
    )
    if preset == "table1":
        return "i", (
            two_step("two-step h=n^-0.6", h6),
            two_step("two-step h=n^-0.7", h7),
            one_step("one-step h=n^-0.45", h45),
            one_step("one-step h=n^-0.5", h5),
        )
    if preset == "table2":
        kw = {"curve_metrics": True, "scb_targets": ("beta", "gamma") if scb else ()}
        return "i", (
            two_step("two-step h=n^-0.6", h6, **kw),
            two_step("two-step h=n^-0.7", h7, **kw),
            one_step("one-step h=n^-0.45", h45, **kw),
            one_step("one-step h=n^-0.5", h5, **kw),
        )
    if preset == "table_s1":
        return "i", (
            two_step("vcm h=n^-0.6", h6, method="two-step-vcm"),
            two_step("vcm h=n^-0.7", h7, method="two-step-vcm"),
        )
    if preset == "table_s2":
        return "ii", (
            two_step("two-step h=n^-0.6", h6),
            two_step("two-step h=n^-0.7", h7),
            two_step("vcm h=n^-0.6", h6, method="two-step-vcm"),
            two_step("vcm h=n^-0.7", h7, method="two-step-vcm"),
            one_step("one-step h=n^-0.45", h45),
            one_step("one-step h=n^-0.5", h5),
        )
    raise InvalidParameter(f"unknown preset {preset!r}")


def _cmd_reproduce(args) -> int:
    default_setting, configs = _reproduce_configs(args.preset, args.n, scb=True)
    setting = args.setting or default_setting
    # the published simultaneous-coverage table is only reproduced by the
    # standard-normal multiplier law (see README)
    law = MultiplierLaw.STANDARD_NORMAL if args.preset == "table2" else MultiplierLaw.RADEMACHER
    mc = McConfig(
        replicates=args.reps,
        estimators=configs,
        scb_b=args.scb_b,
        scb_law=law,
        base_seed=args.seed,
    )
    dgp = DgpConfig(n=args.n, setting=setting, seed=args.seed)
    report = run_monte_carlo(mc, dgp)
    paths = io_mod.emit_report(report, args.out, Path(args.out).with_suffix(".json"))
    for row in report.pointwise:
        print(
            f"{row.estimator} {row.block} t={row.time:g}: bias={row.bias:.4f} "
            f"sd={row.sd:.4f} se={row.se_mean:.4f} cp={row.cp_pct:.1f}"
        )
    for row in report.curves:
        scb_txt = "" if row.scb_pct is None else f" scb={row.scb_pct:.1f}"
        print(
            f"{row.estimator} {row.block}: rase={row.rase_mean:.4f}({row.rase_sd:.4f}) "
            f"ci={row.ci_sim_pct:.1f}{scb_txt}"
        )
    for w in report.warnings:
        print(w, file=sys.stderr)
    print("wrote " + ", ".join(str(p) for p in paths))
    return 0


def _cmd_normalize(args) -> int:
    dataset = io_mod.ingest(args.sync, args.async_path)
    if args.columns.strip().lower() == "all":
        columns = [f"x{j + 1}" for j in range(dataset.p)] + [f"z{j + 1}" for j in range(dataset.q)]
    else:
        columns = [c.strip() for c in args.columns.split(",") if c.strip()]
    h = _resolve_bandwidth(args.h, dataset.n)
    if h in (None, "auto"):
        raise InvalidParameter("normalize requires an explicit --h")
    for column in columns:
        dataset = normalize_longitudinal(dataset, h, column, family=_family(args))
    io_mod.write_dataset(dataset, args.out_sync, args.out_async)
    print(f"wrote {args.out_sync}" + (f" and {args.out_async}" if args.out_async else ""))
    return 0


def _build_parser() -> _Parser:
    parser = _Parser(prog="asynclc", description=__doc__)
    parser.add_argument("--config", default=None, help="flat key=value config file")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit coefficient curves over a grid")
    _add_io_flags(p)
    _add_fit_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("scb", help="fit plus wild-bootstrap simultaneous bands")
    _add_io_flags(p)
    _add_fit_flags(p)
    p.add_argument("--target", choices=["beta", "gamma", "both"], default="both")
    p.add_argument("--coef", type=int, default=0, help="coefficient index within the target block")
    p.add_argument("--b", type=int, default=1000, help="bootstrap replicates")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--law", choices=[l.value for l in MultiplierLaw],
                   default=MultiplierLaw.RADEMACHER.value)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_scb)

    p = sub.add_parser("select-bandwidth", help="kernel-smoothed D-fold cross-validation")
    _add_io_flags(p)
    p.add_argument("--stage", choices=list(bw_mod.STAGES), required=True)
    p.add_argument("--method", choices=METHODS, default="two-step-centering")
    p.add_argument("--candidates", default=None,
                   help="comma list; pairs as h1:h2 for second/one-step stages")
    p.add_argument("--h", default=None, help="first-stage bandwidth when --stage second")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--times", default="0.3,0.6,0.9")
    p.add_argument("--family", choices=[f.value for f in KernelFamily],
                   default=KernelFamily.EPANECHNIKOV.value)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_select_bandwidth)

    p = sub.add_parser("simulate", help="Monte Carlo study of one estimator")
    p.add_argument("--setting", choices=["i", "ii"], default="i")
    p.add_argument("--n", type=int, default=400)
    p.add_argument("--reps", type=int, default=200)
    p.add_argument("--method", choices=METHODS + ("oracle",), default="two-step-centering")
    p.add_argument("--label", default=None)
    p.add_argument("--h", default=None)
    p.add_argument("--h1", default=None)
    p.add_argument("--h2", default=None)
    p.add_argument("--times", default="0.3,0.6,0.9")
    p.add_argument("--curve-metrics", action="store_true")
    p.add_argument("--scb-targets", default="", help="comma list of beta,gamma")
    p.add_argument("--scb-b", type=int, default=500)
    p.add_argument("--scb-law", choices=[l.value for l in MultiplierLaw],
                   default=MultiplierLaw.RADEMACHER.value)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("reproduce", help="desk-scale presets for the simulation tables")
    p.add_argument("preset", choices=["table1", "table2", "table_s1", "table_s2"])
    p.add_argument("--setting", choices=["i", "ii"], default=None)
    p.add_argument("--n", type=int, default=400)
    p.add_argument("--reps", type=int, default=200)
    p.add_argument("--scb-b", type=int, default=500)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_reproduce)

    p = sub.add_parser("normalize", help="standardize covariate columns")
    _add_io_flags(p)
    p.add_argument("--columns", default="all", help="comma list like x1,z1 or 'all'")
    p.add_argument("--h", default=None, help="bandwidth for the smoothed moments")
    p.add_argument("--family", choices=[f.value for f in KernelFamily],
                   default=KernelFamily.EPANECHNIKOV.value)
    p.add_argument("--out-sync", required=True)
    p.add_argument("--out-async", default=None)
    p.set_defaults(func=_cmd_normalize)

    return parser


def _apply_config(parser: _Parser, argv: list[str]) -> list[str]:
    """Pre-scan for --config and fold its keys in as subparser defaults."""
    if "--config" not in argv:
        return argv
    idx = argv.index("--config")
    if idx + 1 >= len(argv):
        raise _UsageError("--config requires a path")
    path = argv[idx + 1]
    rest = argv[:idx] + argv[idx + 2 :]
    if not rest:
        raise _UsageError("a subcommand is required")
    command = rest[0]
    sub_actions = [a for a in parser._actions if isinstance(a, argparse._SubParsersAction)]
    if not sub_actions or command not in sub_actions[0].choices:
        raise _UsageError(f"unknown subcommand {command!r}")
    sub = sub_actions[0].choices[command]
    allowed = {a.dest for a in sub._actions if a.dest != "help"}
    values = io_mod.parse_config_file(path, allowed)
    sub.set_defaults(**values)
    # config supplies strings; coerce typed options through their parser type
    for action in sub._actions:
        if action.dest in values and action.type is not None:
            sub.set_defaults(**{action.dest: action.type(values[action.dest])})
    return rest


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _build_parser()
    try:
        argv = _apply_config(parser, argv)
        args = parser.parse_args(argv)
        if getattr(args, "method", None) == "two-step":
            args.method = "two-step-centering"
        return args.func(args)
    except _UsageError as exc:
        print(f"ERROR BAD_PARAM: {exc}", file=sys.stderr)
        return 1
    except _USAGE_ERRORS as exc:
        print(f"ERROR BAD_PARAM: {exc}", file=sys.stderr)
        return 1
    except _DATA_ERRORS as exc:
        code = _ERROR_CODES.get(type(exc), "DATA_ERROR")
        print(f"ERROR {code}: {exc}", file=sys.stderr)
        return 2
    except _NUMERICAL_ERRORS as exc:
        code = _ERROR_CODES.get(type(exc), "NUMERICAL_ERROR")
        print(f"ERROR {code}: {exc}", file=sys.stderr)
        return 3
    except AsynclcError as exc:
        print(f"ERROR INTERNAL: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
