"""Command-line entry point: ``sweetspot analyze | simulate | experiment``."""

import argparse
import json
import logging
import sys
import warnings
from dataclasses import replace
from pathlib import Path

from .errors import SweetSpotError
from .experiments import ExperimentGrid, run_power, run_prevalidation_ablation, run_type1
from .inference import ESTIMATORS
from .pipeline import AnalysisConfig, analyze, file_digest
from .predilection import DEFAULT_RIDGE, load_model, save_model
from .report import emit_plot_data, report_json, write_intermediate
from .scan import ScanConstraints
from .trial_data import (
    COVARIATE_REGION,
    HIGHER_IS_WORSE,
    OUTCOME_DIRECTIONS,
    SEVERITY_BAND,
    CsvSchema,
    NullSimConfig,
    SweetSpotSimConfig,
    load_trial_csv,
    simulate_null_trial,
    simulate_sweetspot_trial,
    write_trial_csv,
    write_truth_json,
)

EXIT_OK, EXIT_VALIDATION, EXIT_INTERNAL = 0, 1, 2

log = logging.getLogger("sweetspot")


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise _UsageError(f"{self.prog}: error: {message}")


def _floats(text):
    return tuple(float(v) for v in text.split(",") if v.strip())


def _ints(text):
    return tuple(int(v) for v in text.split(",") if v.strip())


def build_parser():
    p = _Parser(prog="sweetspot", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    a = sub.add_parser("analyze", help="find and assess the sweet spot in a trial CSV")
    a.add_argument("--input", required=True)
    a.add_argument("--treat-col", default="treat")
    a.add_argument("--outcome-col", default="outcome")
    a.add_argument("--covariate-cols", default="rest", help="comma list, or 'rest' for all other columns")
    a.add_argument("--id-col", default="id", help="patient id column; row numbers are used if absent")
    a.add_argument("--outcome-kind", choices=("auto", "binary", "continuous"), default="auto")
    a.add_argument("--outcome-direction", choices=OUTCOME_DIRECTIONS, default=HIGHER_IS_WORSE)
    a.add_argument("--link", choices=("logistic", "linear"))
    a.add_argument("--folds", type=int, default=10)
    a.add_argument("--ridge", type=float, default=DEFAULT_RIDGE)
    a.add_argument("--no-prevalidation", action="store_true")
    a.add_argument("--stratify-folds", action="store_true")
    a.add_argument("--ratio", type=int, default=1, help="controls per treated patient (k)")
    a.add_argument("--permutations", type=int, default=1000)
    a.add_argument("--bootstraps", type=int, default=1000)
    a.add_argument("--estimator", choices=ESTIMATORS, default="plugin")
    a.add_argument("--alpha", type=float, default=0.05)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--min-len", type=int, default=2)
    a.add_argument("--max-len", type=int)
    a.add_argument("--min-fraction", type=float)
    a.add_argument("--max-fraction", type=float)
    a.add_argument("--stride", type=int, default=1)
    a.add_argument("--smoothing-window", type=int, default=51)
    a.add_argument("--out-dir")
    a.add_argument("--emit-intermediate", action="store_true")
    a.add_argument("--model-in")
    a.add_argument("--model-out")
    a.add_argument("--json", action="store_true", help="print the report JSON to stdout")

    s = sub.add_parser("simulate", help="write a synthetic trial CSV plus ground-truth sidecar")
    s.add_argument("kind", choices=("null", "sweetspot"))
    s.add_argument("--n-patients", type=int, default=400)
    s.add_argument("--n-covariates", type=int, default=10)
    s.add_argument("--treat-prob", type=float, default=0.5)
    s.add_argument("--effect", type=float, default=0.05, help="base treatment effect")
    s.add_argument("--noise-sd", type=float, default=1.0)
    s.add_argument("--extra-effect", type=float, default=0.3)
    s.add_argument("--spot-fraction", type=float, default=0.3)
    s.add_argument("--spot-definition", choices=(SEVERITY_BAND, COVARIATE_REGION), default=SEVERITY_BAND)
    s.add_argument("--region-covariates", type=_ints, default=(0, 1, 2))
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)

    e = sub.add_parser("experiment", help="run a simulation study")
    e.add_argument("kind", choices=("type1", "power", "power-covariate", "preval-ablation"))
    e.add_argument("--trials", type=int, help="trials per cell")
    e.add_argument("--effects", type=_floats, help="extra-effect grid, comma separated")
    e.add_argument("--fractions", type=_floats, help="spot-fraction grid, comma separated")
    e.add_argument("--p-list", type=_ints, default=(10, 100))
    e.add_argument("--n-patients", type=int)
    e.add_argument("--n-covariates", type=int, default=10)
    e.add_argument("--effect", type=float, default=0.05, help="base treatment effect")
    e.add_argument("--alpha", type=float, default=0.05)
    e.add_argument("--permutations", type=int)
    e.add_argument("--bootstraps", type=int)
    e.add_argument("--no-prevalidation", action="store_true")
    e.add_argument("--master-seed", type=int, default=0)
    e.add_argument("--workers", type=int, default=1)
    e.add_argument("--full", action="store_true", help="1000 trials per cell, 1000 permutations and bootstraps")
    e.add_argument("--out-dir", required=True)
    return p


def _cmd_analyze(args):
    cov = args.covariate_cols if args.covariate_cols == "rest" else [c.strip() for c in args.covariate_cols.split(",")]
    with open(args.input, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
    id_col = args.id_col if args.id_col in header else None
    schema = CsvSchema(args.treat_col, args.outcome_col, cov, id_col)
    ds = load_trial_csv(args.input, schema, args.outcome_kind, args.outcome_direction)
    model = load_model(args.model_in, ds.covariate_names) if args.model_in else None
    cfg = AnalysisConfig(
        link=args.link,
        n_folds=args.folds,
        ridge_penalty=args.ridge,
        ratio=args.ratio,
        constraints=ScanConstraints(args.min_len, args.max_len, args.stride, args.min_fraction, args.max_fraction),
        n_permutations=args.permutations,
        n_bootstraps=args.bootstraps,
        estimator=args.estimator,
        seed=args.seed,
        alpha=args.alpha,
        smoothing_window=args.smoothing_window,
        prevalidate=not args.no_prevalidation,
        stratify_folds=args.stratify_folds,
        model=model,
    )
    result = analyze(ds, cfg, input_digest=file_digest(args.input))
    text = report_json(result.report)
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(text, encoding="utf-8")
        if args.emit_intermediate:
            write_intermediate(result, out / "intermediate")
            emit_plot_data(result, out / "plot_data")
    if args.model_out:
        save_model(result.model, args.model_out)
    if args.json:
        sys.stdout.write(text)
    else:
        _print_summary(result.report)
    return EXIT_OK


def _print_summary(r):
    sp, perm, deb = r["sweet_spot"], r["permutation"], r["debias"]
    verdict = "significant" if r["significant"] else "not significant"
    print(f"matched sets: {r['matching']['n_sets']}")
    print(f"sweet spot: sets {sp['i_hat']}-{sp['j_hat']} (scores {sp['score_lo']:.3f} to {sp['score_hi']:.3f}), "
          f"Z = {sp['z_hat']:.3f}")
    out = "n/a" if sp["tau_outside"] is None else f"{sp['tau_outside']:.3f}"
    print(f"effect inside: {deb['tau_hat']:.3f} (corrected {deb['tau_corrected']:.3f}); outside: {out}")
    print(f"permutation p-value: {perm['p_value']:.4f} ({perm['estimator']}, B={perm['n_permutations']}) -> {verdict}")


def _cmd_simulate(args):
    base = NullSimConfig(args.n_patients, args.n_covariates, args.treat_prob, args.effect, args.noise_sd, args.seed)
    if args.kind == "null":
        ds, truth = simulate_null_trial(base)
    else:
        ds, truth = simulate_sweetspot_trial(SweetSpotSimConfig(
            base, args.extra_effect, args.spot_fraction, args.spot_definition, args.region_covariates))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_trial_csv(ds, out)
    write_truth_json(truth, out.with_suffix(".truth.json"))
    print(f"wrote {out} ({ds.n_patients} patients, {ds.n_treated} treated)")
    return EXIT_OK


def _cmd_experiment(args):
    full = args.full
    n_patients = args.n_patients or (800 if args.kind == "preval-ablation" else 400)
    base = NullSimConfig(n_patients=n_patients, n_covariates=args.n_covariates, base_treatment_effect=args.effect)
    grid = ExperimentGrid.full() if full else ExperimentGrid()
    overrides = {"base_cfg": base, "alpha": args.alpha, "master_seed": args.master_seed,
                 "prevalidation": not args.no_prevalidation}
    for key, val in (("n_trials_per_cell", args.trials), ("extra_effect_grid", args.effects),
                     ("spot_fraction_grid", args.fractions), ("n_permutations", args.permutations),
                     ("n_bootstraps", args.bootstraps)):
        if val is not None:
            overrides[key] = val
    grid = replace(grid, **overrides)
    if args.kind == "type1":
        summary = run_type1(grid, workers=args.workers)
    elif args.kind == "power":
        summary = run_power(grid, SEVERITY_BAND, workers=args.workers)
    elif args.kind == "power-covariate":
        summary = run_power(grid, COVARIATE_REGION, workers=args.workers)
    else:
        summary = run_prevalidation_ablation(grid, args.p_list, n_patients, workers=args.workers)
    summary.write(args.out_dir)
    for c in summary.cells:
        coords = {k: c[k] for k in ("p", "prevalidation", "extra_effect", "spot_fraction") if k in c}
        print(json.dumps(coords), f"rejection_rate={c['rejection_rate']:.3f} se={c['se']:.3f}")
    return EXIT_OK


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_VALIDATION
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_VALIDATION
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if not args.verbose:
        warnings.simplefilter("default")
    handler = {"analyze": _cmd_analyze, "simulate": _cmd_simulate, "experiment": _cmd_experiment}[args.command]
    try:
        return handler(args)
    except (SweetSpotError, FileNotFoundError, IsADirectoryError, UnicodeDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001 - top-level boundary
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
