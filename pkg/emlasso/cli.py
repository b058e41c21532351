"""
Command-line front end.

    emlasso fit DATA --em V1,V2,V3,V4 --q-model "1 + A + X" --g-model hal
    emlasso simulate --scenario s1 --impl qcgc --n 1000 --reps 1000 --seed 42
    emlasso report run_1000.json run_10000.json

Exit codes: 0 success, 2 usage or validation error, 3 numerical failure.
"""
import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Tuple

from .emselect import CvConfig, PipelineOptions, run_pipeline
from .errors import EmLassoError, NumericalError, PipelineError, ValidationError
from .hal import HalSpec
from .report_generator import ReportGenerator, fit_result_to_dict, render_table, report_frame
from .simlab import IMPLEMENTATIONS, SCENARIOS, ScenarioConfig, naive_linear_analysis, run_replications
from .tabular import INTERCEPT, EmCandidateSet, ModelSpec, Term, load_csv, parse_formula, validate_spec

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3
SEED_ENV = "EMLASSO_SEED"


@dataclass
class FitRequest:
    data: str
    treatment: str = "A"
    outcome: str = "Y"
    em: List[str] = field(default_factory=list)
    q_model: str = "hal"
    g_model: str = "hal"
    truncation: Optional[Tuple[float, float]] = None
    alpha: float = 0.05
    gamma: float = 1.0
    folds: int = 10
    seed: int = 0
    hal_order: int = 3
    output: Optional[str] = None
    naive: bool = False

    def to_dict(self):
        out = asdict(self)
        out["truncation"] = list(self.truncation) if self.truncation else None
        return out


def default_seed():
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return 0
    try:
        return int(raw)
    except ValueError:
        raise ValidationError(f"{SEED_ENV} must be an integer, got {raw!r}")


def parse_truncation(values):
    """``[lo]`` means (lo, 1 − lo); ``[lo, hi]`` is taken as given."""
    if not values:
        return None
    if len(values) == 1:
        lo, hi = values[0], 1.0 - values[0]
    elif len(values) == 2:
        lo, hi = values
    else:
        raise ValidationError("--trunc takes one or two values")
    if not 0.0 < lo < hi < 1.0:
        raise ValidationError(f"Truncation bounds must satisfy 0 < lo < hi < 1, got ({lo}, {hi})")
    return float(lo), float(hi)


def model_from_text(text, family, hal_order, folds=10):
    if str(text).strip().lower() == "hal":
        return HalSpec(max_order=hal_order, n_folds=folds)
    return parse_formula(text, family)


def naive_spec(table, em):
    """Main terms for A and every covariate plus A × each candidate."""
    terms = [INTERCEPT, Term((), True)]
    terms += [Term((name,)) for name in table.covariate_names]
    terms += [Term((name,), True) for name in em.names]
    return ModelSpec(tuple(terms), "linear")


# =========================================================
# 1) FIT
# =========================================================
def run_fit(table, request):
    """Validate a request against a loaded table, run the pipeline and build the result document."""
    if not request.em:
        raise ValidationError("At least one candidate effect modifier is required (--em)")
    em = EmCandidateSet(tuple(request.em))
    em.validate(table)
    q_spec = model_from_text(request.q_model, "linear", request.hal_order, request.folds)
    g_spec = model_from_text(request.g_model, "logistic", request.hal_order, request.folds)
    for spec in (q_spec, g_spec):
        if isinstance(spec, ModelSpec):
            validate_spec(table, spec)

    options = PipelineOptions(
        gamma=request.gamma, truncation=request.truncation, alpha=request.alpha, seed=request.seed,
        cv=CvConfig(K=request.folds, seed=request.seed),
    )
    result = run_pipeline(table, q_spec, g_spec, em, options)
    naive = None
    if request.naive:
        naive = naive_linear_analysis(table, naive_spec(table, em), em.names, request.alpha)
    return fit_result_to_dict(result, {"request": request.to_dict(), "options": options.to_dict()}, naive)


def cmd_fit(request):
    table = load_csv(request.data, request.treatment, request.outcome)
    doc = run_fit(table, request)
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if request.output:
        with open(request.output, "w", encoding="utf-8") as fh:
            fh.write(text)
        logger.info(f"Fit result written to {request.output}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


# =========================================================
# 2) SIMULATE
# =========================================================
def cmd_simulate(args):
    config = ScenarioConfig(
        scenario=args.scenario, n=args.n, reps=args.reps, seed=args.seed, implementation=args.impl,
        alpha=args.alpha, folds=args.folds, truncation=parse_truncation(args.trunc), gamma=args.gamma,
    )
    if args.threads < 1:
        raise ValidationError(f"--threads must be at least 1, got {args.threads}")
    report = run_replications(config, threads=args.threads, progress=not args.quiet)
    generator = ReportGenerator()
    for path in (args.csv, args.json):
        if path:
            generator.generate_report(report, path)
    if not args.csv and not args.json:
        sys.stdout.write(render_table([report_frame(report)]))
    return EXIT_OK


# =========================================================
# 3) REPORT
# =========================================================
def cmd_report(paths):
    sys.stdout.write(ReportGenerator().render(paths))
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="emlasso", description="Doubly robust adaptive-LASSO effect-modifier discovery")
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    parser.add_argument("--quiet", action="store_true", help="warnings only, no progress bar")
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="select effect modifiers in a CSV dataset")
    fit.add_argument("data")
    fit.add_argument("--treatment", default="A")
    fit.add_argument("--outcome", default="Y")
    fit.add_argument("--em", required=True, help="comma-separated candidate effect modifiers")
    fit.add_argument("--q-model", default="hal", help="outcome formula or 'hal'")
    fit.add_argument("--g-model", default="hal", help="propensity formula or 'hal'")
    fit.add_argument("--trunc", type=float, nargs="+", default=None, metavar="BOUND")
    fit.add_argument("--alpha", type=float, default=0.05)
    fit.add_argument("--gamma", type=float, default=1.0)
    fit.add_argument("--folds", type=int, default=10)
    fit.add_argument("--seed", type=int, default=None)
    fit.add_argument("--hal-order", type=int, default=3)
    fit.add_argument("--output", "-o", default=None)
    fit.add_argument("--naive", action="store_true", help="also report the naive linear analysis")

    sim = sub.add_parser("simulate", help="run a Monte Carlo scenario")
    sim.add_argument("--scenario", default="s1", type=str.upper, choices=SCENARIOS)
    sim.add_argument("--impl", default="qcgc", type=str.lower, choices=IMPLEMENTATIONS)
    sim.add_argument("--n", type=int, default=1000)
    sim.add_argument("--reps", type=int, default=1000)
    sim.add_argument("--seed", type=int, default=None)
    sim.add_argument("--alpha", type=float, default=0.05)
    sim.add_argument("--folds", type=int, default=10)
    sim.add_argument("--trunc", type=float, nargs="+", default=None, metavar="BOUND")
    sim.add_argument("--gamma", type=float, default=1.0)
    sim.add_argument("--threads", type=int, default=1)
    sim.add_argument("--csv", default=None)
    sim.add_argument("--json", default=None)

    rep = sub.add_parser("report", help="render saved reports side by side")
    rep.add_argument("paths", nargs="+")
    return parser


def _configure_logging(args):
    level = logging.INFO
    if args.verbose:
        level = logging.DEBUG
    elif args.quiet:
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger().setLevel(level)


def _dispatch(args):
    if args.command == "report":
        return cmd_report(args.paths)
    seed = args.seed if args.seed is not None else default_seed()
    args.seed = seed
    if args.command == "simulate":
        return cmd_simulate(args)
    request = FitRequest(
        data=args.data, treatment=args.treatment, outcome=args.outcome,
        em=[e.strip() for e in args.em.split(",") if e.strip()],
        q_model=args.q_model, g_model=args.g_model, truncation=parse_truncation(args.trunc),
        alpha=args.alpha, gamma=args.gamma, folds=args.folds, seed=seed, hal_order=args.hal_order,
        output=args.output, naive=args.naive,
    )
    return cmd_fit(request)


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_VALIDATION
    _configure_logging(args)
    try:
        return _dispatch(args)
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION if exc.is_validation else EXIT_NUMERICAL
    except (ValidationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except EmLassoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
