"""
Simulation laboratory: data-generating processes, the six analysis
implementations, Monte Carlo metrics and the replication runner.

Every DGP is a table of (Term, coefficient) pairs for the outcome mean and the
propensity logit over independent Bernoulli covariates, so the same tables
drive data generation, the true CATE and exact cell enumeration.
"""
import logging
import time
from dataclasses import asdict, dataclass, field
from itertools import product
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy import stats
from scipy.special import expit
from tqdm import tqdm

from .emselect import CvConfig, PipelineOptions, run_pipeline
from .errors import EmLassoError, ValidationError
from .hal import HalSpec
from .lassocd import DEFAULT_N_LAMBDAS, DEFAULT_RATIO
from .linmod import fit_ols
from .tabular import INTERCEPT, EmCandidateSet, ModelSpec, ObservationTable, Term, build_design

logger = logging.getLogger(__name__)

SCENARIOS = ("S1", "S2", "S3", "HD1")
IMPLEMENTATIONS = ("qcgc", "qc", "gc", "hal", "nlin", "clin")
LINEAR_COMPARATORS = ("nlin", "clin")

BASE_PROBS = {"X": 0.4, "V1": 0.5, "V2": 0.6, "V3": 0.5, "V4": 0.7, "Z": 0.45}
N_NOISE = 50
NOISE_PROB = 0.5
CANDIDATES = ("V1", "V2", "V3", "V4")

A = Term((), True)


def _t(*factors, treated=False):
    return Term(tuple(factors), treated)


S1_OUTCOME = (
    (INTERCEPT, 1.0), (A, 1.0), (_t("X"), -0.5), (_t("V1"), 2.0), (_t("V2"), 1.0), (_t("V3"), 1.0),
    (_t("V4"), -0.2), (_t("V1", "V2", "V3"), 4.0), (_t("V1", treated=True), 0.5), (_t("V3", treated=True), 1.0),
)
S1_PROPENSITY = ((_t("Z"), 0.5), (_t("X"), -0.2), (_t("V1"), 0.3), (_t("V2"), 0.4))

# S3: covariates weakly predict the outcome and strongly predict treatment
S3_OUTCOME_SCALE = 0.25
S3_PROPENSITY_SCALE = 3.0


def _scenario_tables(scenario):
    if scenario in ("S1", "HD1"):
        return S1_OUTCOME, S1_PROPENSITY
    if scenario == "S2":
        outcome = tuple((t, 0.0 if t == _t("V1", "V2", "V3") else c) for t, c in S1_OUTCOME)
        return outcome, S1_PROPENSITY
    if scenario == "S3":
        outcome = tuple(
            (t, c if (t.treated or t.is_intercept) else S3_OUTCOME_SCALE * c) for t, c in S1_OUTCOME
        )
        propensity = tuple((t, S3_PROPENSITY_SCALE * c) for t, c in S1_PROPENSITY)
        return outcome, propensity
    raise ValidationError(f"Unknown scenario '{scenario}', expected one of {SCENARIOS}")


def _check_scenario(scenario):
    scenario = str(scenario).upper()
    if scenario not in SCENARIOS:
        raise ValidationError(f"Unknown scenario '{scenario}', expected one of {SCENARIOS}")
    return scenario


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: str = "S1"
    n: int = 1000
    reps: int = 1000
    seed: int = 0
    implementation: str = "qcgc"
    alpha: float = 0.05
    folds: int = 10
    truncation: Optional[Tuple[float, float]] = None
    gamma: float = 1.0
    n_lambdas: int = DEFAULT_N_LAMBDAS
    ratio: float = DEFAULT_RATIO

    def __post_init__(self):
        object.__setattr__(self, "scenario", _check_scenario(self.scenario))
        impl = str(self.implementation).lower()
        if impl not in IMPLEMENTATIONS:
            raise ValidationError(f"Unknown implementation '{self.implementation}', expected one of {IMPLEMENTATIONS}")
        object.__setattr__(self, "implementation", impl)
        if self.n < 2:
            raise ValidationError(f"n must be at least 2, got {self.n}")
        if self.reps < 1:
            raise ValidationError(f"reps must be at least 1, got {self.reps}")
        if not 0.0 < self.alpha < 1.0:
            raise ValidationError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.truncation is not None:
            object.__setattr__(self, "truncation", tuple(float(x) for x in self.truncation))

    def to_dict(self):
        out = asdict(self)
        out["truncation"] = list(self.truncation) if self.truncation else None
        return out


@dataclass(frozen=True)
class ScenarioTruth:
    scenario: str
    outcome_terms: tuple
    propensity_terms: tuple
    probs: Dict[str, float]
    candidates: Tuple[str, ...]

    @property
    def beta0(self):
        return dict(self.outcome_terms).get(A, 0.0)

    @property
    def beta_v(self):
        coefs = dict(self.outcome_terms)
        return {name: coefs.get(_t(name, treated=True), 0.0) for name in self.candidates}

    @property
    def true_ems(self):
        return tuple(name for name, b in self.beta_v.items() if b != 0.0)

    def outcome_mean(self, cols, a):
        return _evaluate(self.outcome_terms, cols, a)

    def propensity(self, cols):
        return expit(_evaluate(self.propensity_terms, cols, 0.0))

    def cate(self, cols):
        return self.outcome_mean(cols, 1.0) - self.outcome_mean(cols, 0.0)


def _evaluate(terms, cols, a):
    n = len(next(iter(cols.values())))
    total = np.zeros(n)
    for term, coef in terms:
        if coef == 0.0:
            continue
        col = np.full(n, float(coef))
        for name in term.factors:
            col = col * cols[name]
        if term.treated:
            col = col * a
        total += col
    return total


def scenario_truth(scenario):
    scenario = _check_scenario(scenario)
    outcome, propensity = _scenario_tables(scenario)
    probs = dict(BASE_PROBS)
    candidates = CANDIDATES
    if scenario == "HD1":
        noise = tuple(f"N{k}" for k in range(1, N_NOISE + 1))
        probs.update({name: NOISE_PROB for name in noise})
        candidates = CANDIDATES + noise
    return ScenarioTruth(scenario, outcome, propensity, probs, candidates)


def generate_scenario(config, rep_rng):
    """Draw one dataset of size config.n and return it with its truth record."""
    truth = scenario_truth(config.scenario)
    n = config.n
    cols = {name: rep_rng.binomial(1, p, n).astype(float) for name, p in truth.probs.items()}
    g1 = truth.propensity(cols)
    a = rep_rng.binomial(1, g1).astype(float)
    y = truth.outcome_mean(cols, a) + rep_rng.standard_normal(n)
    table = ObservationTable(pd.DataFrame(cols), a, y)
    return table, truth


def enumerate_cells(scenario):
    """All covariate cells of the outcome/propensity-relevant covariates with their probabilities."""
    truth = scenario_truth(scenario)
    names = list(BASE_PROBS)
    grid = np.array(list(product((0.0, 1.0), repeat=len(names))))
    cells = pd.DataFrame(grid, columns=names)
    prob = np.ones(len(cells))
    for name in names:
        p = truth.probs[name]
        prob *= np.where(cells[name] == 1.0, p, 1.0 - p)
    cols = {name: cells[name].to_numpy() for name in names}
    cells["prob"] = prob
    cells["g1"] = truth.propensity(cols)
    cells["cate"] = truth.cate(cols)
    return cells


def true_msm_coefficients(scenario):
    """
    Population least-squares projection of the CATE on (1, V1..V4), by exact
    enumeration over covariate cells. Returns (β₀, {name: β}).
    """
    cells = enumerate_cells(scenario)
    X = np.column_stack([np.ones(len(cells))] + [cells[name].to_numpy() for name in CANDIDATES])
    w = np.sqrt(cells["prob"].to_numpy())
    coef, *_ = np.linalg.lstsq(X * w[:, None], cells["cate"].to_numpy() * w, rcond=None)
    coef = np.where(np.abs(coef) < 1e-12, 0.0, coef)
    betas = dict(zip(CANDIDATES, (float(c) for c in coef[1:])))
    truth = scenario_truth(scenario)
    for name in truth.candidates[len(CANDIDATES):]:
        betas[name] = 0.0
    return float(coef[0]), betas


def true_treatment_prevalence(scenario):
    cells = enumerate_cells(scenario)
    return float(np.sum(cells["prob"] * cells["g1"]))


@dataclass(frozen=True)
class ImplementationSpec:
    """Nuisance models for LASSO implementations, or one outcome model for comparators."""

    q_spec: object = None
    g_spec: object = None
    comparator: Optional[ModelSpec] = None

    @property
    def is_comparator(self):
        return self.comparator is not None


def _covariates(scenario):
    return [name for name in scenario_truth(scenario).probs]


def correct_outcome_spec(scenario):
    outcome, _ = _scenario_tables(_check_scenario(scenario))
    return ModelSpec(tuple(t for t, c in outcome if c != 0.0 or t.is_intercept), "linear")


def correct_propensity_spec(scenario):
    _, propensity = _scenario_tables(_check_scenario(scenario))
    return ModelSpec((INTERCEPT,) + tuple(t for t, _ in propensity), "logistic")


def implementation_specs(scenario, implementation):
    scenario = _check_scenario(scenario)
    impl = str(implementation).lower()
    truth = scenario_truth(scenario)
    q_true = correct_outcome_spec(scenario)
    g_true = correct_propensity_spec(scenario)
    if impl == "qcgc":
        return ImplementationSpec(q_true, g_true)
    if impl == "qc":
        return ImplementationSpec(q_true, ModelSpec((INTERCEPT, _t("X")), "logistic"))
    if impl == "gc":
        return ImplementationSpec(ModelSpec((INTERCEPT, A, _t("V3")), "linear"), g_true)
    if impl == "hal":
        hal = HalSpec(max_order=2 if scenario == "HD1" else 3)
        return ImplementationSpec(hal, hal)
    if impl == "nlin":
        names = _covariates(scenario)
        terms = (INTERCEPT, A) + tuple(_t(x) for x in names) + tuple(_t(x, treated=True) for x in names)
        return ImplementationSpec(comparator=ModelSpec(terms, "linear"))
    if impl == "clin":
        terms = list(q_true.terms)
        for name in truth.candidates:
            term = _t(name, treated=True)
            if term not in terms:
                terms.append(term)
        return ImplementationSpec(comparator=ModelSpec(tuple(terms), "linear"))
    raise ValidationError(f"Unknown implementation '{implementation}', expected one of {IMPLEMENTATIONS}")


@dataclass
class LinearEstimate:
    estimate: float
    se: float
    ci_lo: float
    ci_hi: float
    p_value: float


def naive_linear_analysis(table, spec, candidates=CANDIDATES, alpha=0.05):
    """
    OLS of Y on the spec; per candidate, the A×candidate interaction estimate
    with a Wald interval from the t distribution.
    """
    X = build_design(table, spec)
    fit = fit_ols(X, table.outcome, spec.term_names)
    se = fit.standard_errors()
    df = fit.df_resid
    if df < 1:
        raise ValidationError("No residual degrees of freedom for Wald intervals")
    crit = stats.t.ppf(1.0 - alpha / 2.0, df)
    index = {term: j for j, term in enumerate(spec.terms)}
    out = {}
    for name in candidates:
        term = _t(name, treated=True)
        if term not in index:
            continue
        j = index[term]
        est, s = float(fit.coefficients[j]), float(se[j])
        p_value = float(2.0 * stats.t.sf(abs(est / s), df)) if s > 0 else 0.0
        out[name] = LinearEstimate(est, s, est - crit * s, est + crit * s, p_value)
    return out


@dataclass
class ReplicationRecord:
    rep: int
    beta: Dict[str, float] = field(default_factory=dict)
    selected: Tuple[str, ...] = ()
    intervals: Dict[str, Tuple[float, float]] = field(default_factory=dict)
    p_values: Dict[str, float] = field(default_factory=dict)
    failed: bool = False
    error: Optional[str] = None


@dataclass
class VariableSummary:
    variable: str
    mean_beta: Optional[float]
    pct_sel: Optional[float]
    pct_cov: Optional[float]


@dataclass
class SimulationReport:
    config: ScenarioConfig
    variables: List[VariableSummary]
    fcr: Optional[float]
    failed_reps: int
    completed_reps: int
    wall_clock: float = field(default=0.0, compare=False)

    def row(self, name):
        for v in self.variables:
            if v.variable == name:
                return v
        raise KeyError(name)


def _ok(records):
    return [r for r in records if not r.failed]


def percent_selection(records, name):
    records = _ok(records)
    if not records:
        return None
    return 100.0 * sum(name in r.selected for r in records) / len(records)


def coverage(records, truth, name, conditional=True):
    """
    Percentage of intervals for ``name`` that contain its true coefficient.

    With ``conditional`` the denominator is the replications that selected
    exactly the true effect modifiers; otherwise every replication with an
    interval for ``name``. Returns None for an empty denominator.
    """
    target = truth.beta_v.get(name, 0.0)
    records = _ok(records)
    if conditional:
        true_set = set(truth.true_ems)
        pool = [r for r in records if set(r.selected) == true_set]
    else:
        pool = records
    pool = [r for r in pool if name in r.intervals]
    if not pool:
        return None
    hits = sum(r.intervals[name][0] <= target <= r.intervals[name][1] for r in pool)
    return 100.0 * hits / len(pool)


def fcr(records, truth):
    """Non-covering intervals among selected coefficients, pooled over replications."""
    beta_v = truth.beta_v
    selected = 0
    missed = 0
    for r in _ok(records):
        for name in r.selected:
            if name not in r.intervals:
                continue
            selected += 1
            lo, hi = r.intervals[name]
            if not lo <= beta_v.get(name, 0.0) <= hi:
                missed += 1
    if selected == 0:
        return None
    return missed / selected


def median_selection(report, names):
    values = [report.row(name).pct_sel for name in names]
    values = [v for v in values if v is not None]
    if not values:
        return None
    return float(np.median(values))


def replication_seed(seed, rep):
    return int(np.random.SeedSequence([seed, rep]).generate_state(1)[0])


def run_replication(config, rep):
    """One dataset and one analysis; numerical or validation failures are recorded."""
    rng = np.random.default_rng([config.seed, rep])
    table, truth = generate_scenario(config, rng)
    impl = implementation_specs(config.scenario, config.implementation)
    try:
        if impl.is_comparator:
            estimates = naive_linear_analysis(table, impl.comparator, truth.candidates, config.alpha)
            return ReplicationRecord(
                rep,
                beta={k: e.estimate for k, e in estimates.items()},
                selected=tuple(k for k, e in estimates.items() if e.p_value < config.alpha),
                intervals={k: (e.ci_lo, e.ci_hi) for k, e in estimates.items()},
                p_values={k: e.p_value for k, e in estimates.items()},
            )
        seed = replication_seed(config.seed, rep)
        options = PipelineOptions(
            gamma=config.gamma, truncation=config.truncation, alpha=config.alpha, seed=seed,
            cv=CvConfig(K=config.folds, n_lambdas=config.n_lambdas, ratio=config.ratio, seed=seed),
        )
        result = run_pipeline(table, impl.q_spec, impl.g_spec, EmCandidateSet(truth.candidates), options)
    except EmLassoError as exc:
        logger.warning(f"Replication {rep} failed: {exc}")
        return ReplicationRecord(rep, failed=True, error=str(exc))
    fit = result.fit
    return ReplicationRecord(
        rep,
        beta=dict(zip(fit.names, (float(b) for b in fit.beta))),
        selected=tuple(fit.selected),
        intervals={iv.name: (iv.ci_lo, iv.ci_hi) for iv in result.intervals},
        p_values={iv.name: iv.p_value for iv in result.intervals},
    )


def summarize(config, records, wall_clock=0.0):
    truth = scenario_truth(config.scenario)
    ok = _ok(records)
    conditional = config.implementation not in LINEAR_COMPARATORS
    variables = []
    for name in truth.candidates:
        mean_beta = float(np.mean([r.beta.get(name, 0.0) for r in ok])) if ok else None
        variables.append(VariableSummary(
            name, mean_beta, percent_selection(records, name), coverage(records, truth, name, conditional),
        ))
    failed = len(records) - len(ok)
    return SimulationReport(config, variables, fcr(records, truth), failed, len(ok), wall_clock)


def run_replications(config, threads=1, progress=True):
    """
    Run config.reps independent replications. Replication r always draws from
    the stream seeded by (config.seed, r), so the report does not depend on
    ``threads`` or on scheduling.
    """
    start = time.perf_counter()
    reps = tqdm(range(config.reps), desc=f"{config.scenario}/{config.implementation}", disable=not progress)
    if threads == 1:
        records = [run_replication(config, rep) for rep in reps]
    else:
        records = Parallel(n_jobs=threads)(delayed(run_replication)(config, rep) for rep in reps)
    records = sorted(records, key=lambda r: r.rep)
    elapsed = time.perf_counter() - start
    report = summarize(config, records, elapsed)
    logger.info(
        f"{config.scenario}/{config.implementation} n={config.n}: {report.completed_reps} replications "
        f"({report.failed_reps} failed) in {elapsed:.1f}s"
    )
    return report
