"""
Effect-modifier selection by adaptive LASSO on a doubly robust pseudo-outcome.

Pipeline: fit Q̄ and g, build D, regress D on every candidate (pilot), weight
each candidate by |β̃ⱼ|^(−γ), choose λ by cross-validation, refit at the
chosen λ, and attach selective intervals to the selected candidates.
"""
import logging
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .drpseudo import NuisanceEstimates, estimate_nuisances, pseudo_outcome
from .errors import PipelineError, ValidationError, run_stage
from .lassocd import (
    DEFAULT_FOLDS,
    DEFAULT_N_LAMBDAS,
    DEFAULT_RATIO,
    LassoProblem,
    cv_select_lambda,
    lambda_grid,
    solve_weighted_lasso,
)
from .linmod import fit_ols
from .selinf import selective_intervals

logger = logging.getLogger(__name__)

ZERO_TOL = 1e-8


@dataclass(frozen=True)
class CvConfig:
    K: int = DEFAULT_FOLDS
    n_lambdas: int = DEFAULT_N_LAMBDAS
    ratio: float = DEFAULT_RATIO
    seed: int = 0
    n_jobs: int = 1


@dataclass(frozen=True)
class PipelineOptions:
    gamma: float = 1.0
    truncation: Optional[Tuple[float, float]] = None
    alpha: float = 0.05
    seed: int = 0
    cv: Optional[CvConfig] = None

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValidationError(f"alpha must lie in (0, 1), got {self.alpha}")

    def cv_config(self):
        return self.cv if self.cv is not None else CvConfig(seed=self.seed)

    def to_dict(self):
        out = asdict(self)
        out["cv"] = asdict(self.cv_config())
        out["truncation"] = list(self.truncation) if self.truncation else None
        return out


@dataclass
class EmFit:
    names: List[str]
    pilot: np.ndarray
    pilot_intercept: float
    sigma2: float
    gamma: float
    weights: np.ndarray
    lambda_: float
    beta0: float
    beta: np.ndarray
    converged: bool = True
    cv_mse: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def active_set(self):
        return np.flatnonzero(self.beta != 0.0)

    @property
    def signs(self):
        return np.sign(self.beta[self.active_set])

    @property
    def selected(self):
        return [self.names[j] for j in self.active_set]

    def to_dict(self):
        def finite_or_none(x):
            return float(x) if np.isfinite(x) else None

        return {
            "names": list(self.names),
            "pilot": [float(b) for b in self.pilot],
            "sigma2": float(self.sigma2),
            "gamma": float(self.gamma),
            "weights": [finite_or_none(w) for w in self.weights],
            "lambda": float(self.lambda_),
            "beta0": float(self.beta0),
            "beta": [float(b) for b in self.beta],
            "selected": self.selected,
        }


@dataclass
class PipelineResult:
    fit: EmFit
    intervals: list
    nuisance: NuisanceEstimates
    pseudo: np.ndarray = field(repr=False, default=None)

    def interval_for(self, name):
        for interval in self.intervals:
            if interval.name == name:
                return interval
        return None


def _as_matrix(V):
    V = np.asarray(V, dtype=float)
    if V.ndim == 1:
        V = V[:, None]
    return V


def pilot_ols(D, V):
    """Full-model OLS of D on an intercept and every candidate."""
    d = np.asarray(getattr(D, "d", D), dtype=float).ravel()
    V = _as_matrix(V)
    n, p = V.shape
    if n <= p + 1:
        raise ValidationError(f"Pilot regression needs n > p + 1 (n={n}, p={p})")
    X = np.column_stack([np.ones(n), V])
    return fit_ols(X, d, ["1"] + [f"V{j + 1}" for j in range(p)])


def adaptive_weights(pilot, gamma=1.0, zero_tol=None):
    """
    |β̃ⱼ|^(−γ), or +inf where |β̃ⱼ| < zero_tol. The default zero_tol is
    1e-8·max(1, max|β̃|).
    """
    if gamma <= 0:
        raise ValidationError(f"gamma must be positive, got {gamma}")
    pilot = np.asarray(pilot, dtype=float).ravel()
    if zero_tol is None:
        zero_tol = ZERO_TOL * max(1.0, float(np.max(np.abs(pilot))) if pilot.size else 0.0)
    mag = np.abs(pilot)
    with np.errstate(divide="ignore"):
        weights = np.where(mag < zero_tol, np.inf, mag ** (-gamma))
    return weights


def select_effect_modifiers(D, V, gamma=1.0, cv_config=None, names=None, pilot=None):
    """Pilot OLS, adaptive weights, CV over λ and the refit at the chosen λ."""
    d = np.asarray(getattr(D, "d", D), dtype=float).ravel()
    V = _as_matrix(V)
    p = V.shape[1]
    names = list(names) if names is not None else [f"V{j + 1}" for j in range(p)]
    cv_config = cv_config or CvConfig()

    if pilot is None:
        pilot = pilot_ols(d, V)
    beta_tilde = pilot.coefficients[1:]
    weights = adaptive_weights(beta_tilde, gamma)
    problem = LassoProblem(V, d, weights, family="linear")

    if not np.any(np.isfinite(weights)):
        logger.info("Every pilot coefficient is zero; no candidate can be selected")
        return EmFit(names, beta_tilde, float(pilot.coefficients[0]), pilot.residual_variance, gamma,
                     weights, 0.0, float(np.mean(d)), np.zeros(p))

    grid = lambda_grid(problem, cv_config.n_lambdas, cv_config.ratio)
    cv = cv_select_lambda(problem, K=cv_config.K, grid=grid, rng_seed=cv_config.seed, n_jobs=cv_config.n_jobs)
    solution = None
    for lam in grid[: cv.chosen_index + 1]:
        solution = solve_weighted_lasso(problem, float(lam), warm_start=solution)
    fit = EmFit(
        names, beta_tilde, float(pilot.coefficients[0]), pilot.residual_variance, gamma, weights,
        cv.chosen_lambda, solution.intercept, solution.coefficients, solution.converged, cv.cv_mse,
    )
    logger.info(f"Selected effect modifiers {fit.selected} at lambda={fit.lambda_:.4g}")
    return fit


def estimate_cate(fit, v):
    """β̂₀ + vᵀβ̂; accepts one point or a matrix of points."""
    v = np.asarray(v, dtype=float)
    if v.shape[-1] != len(fit.beta):
        raise ValidationError(f"Expected {len(fit.beta)} candidate values, got {v.shape[-1]}")
    value = fit.beta0 + v @ fit.beta
    return float(value) if np.ndim(value) == 0 else value


def _stage(name, func, *args, **kwargs):
    try:
        return run_stage(name, func, *args, **kwargs)
    except PipelineError as exc:
        logger.error(f"Pipeline failed in stage '{exc.stage}': {exc.cause}")
        raise


def run_pipeline(table, q_spec, g_spec, em, options=None):
    """
    Fit nuisances, build the pseudo-outcome, select effect modifiers and
    compute selective intervals. Errors carry the failing stage.
    """
    options = options or PipelineOptions()
    # candidates are checked before any nuisance is fitted
    _stage("pilot", em.validate, table)

    nuisance = _stage("nuisance_q", estimate_nuisances, table, q_spec, g_spec, options.truncation, options.seed)
    pseudo = _stage("pseudo_outcome", pseudo_outcome, nuisance, table.treatment, table.outcome)

    V = em.matrix(table)
    pilot = _stage("pilot", pilot_ols, pseudo, V)
    fit = _stage(
        "selection", select_effect_modifiers, pseudo, V, options.gamma, options.cv_config(), em.names, pilot,
    )

    intervals = []
    if fit.active_set.size and fit.sigma2 > 0:
        intervals = _stage(
            "selinf", selective_intervals, V, pseudo.d, fit.lambda_, fit.weights, fit.active_set, fit.signs,
            fit.sigma2, options.alpha, em.names,
        )
    elif fit.active_set.size:
        logger.warning("Pilot residual variance is zero; selective intervals are not defined")
    return PipelineResult(fit, intervals, nuisance, pseudo.d)
