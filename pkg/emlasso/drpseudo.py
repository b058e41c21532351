"""
Doubly robust pseudo-outcome

    D = (2A − 1) / g(A|W) · (Y − Q̄(A, W)) + Q̄(1, W) − Q̄(0, W)

and the nuisance fits (Q̄, g) that feed it.
"""
import logging
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from .errors import NumericalError, PipelineError, ValidationError, run_stage
from .hal import HalSpec, fit_hal, hal_predict
from .linmod import fit_logistic, fit_ols, predict_linear, predict_probability
from .tabular import ModelSpec, build_design, validate_spec

logger = logging.getLogger(__name__)


@dataclass
class NuisanceEstimates:
    q0: np.ndarray
    q1: np.ndarray
    g1: np.ndarray
    truncation: Optional[Tuple[float, float]] = None
    n_truncated: int = 0
    q_label: str = ""
    g_label: str = ""

    def __post_init__(self):
        self.q0 = np.asarray(self.q0, dtype=float).ravel()
        self.q1 = np.asarray(self.q1, dtype=float).ravel()
        self.g1 = np.asarray(self.g1, dtype=float).ravel()
        n = len(self.q0)
        if len(self.q1) != n or len(self.g1) != n:
            raise ValidationError(f"Nuisance vectors differ in length: {n}, {len(self.q1)}, {len(self.g1)}")
        if self.truncation is not None:
            lo, hi = self.truncation
            if not 0.0 < lo < hi < 1.0:
                raise ValidationError(f"Truncation bounds must satisfy 0 < lo < hi < 1, got ({lo}, {hi})")

    @property
    def n(self):
        return len(self.q0)

    def outcome_at(self, treatment):
        a = np.asarray(treatment, dtype=float)
        return np.where(a == 1.0, self.q1, self.q0)

    def summary(self, pseudo=None):
        """Compact description of the nuisance fits for result files."""
        out = {
            "q_model": self.q_label,
            "g_model": self.g_label,
            "g1_min": float(np.min(self.g1)),
            "g1_mean": float(np.mean(self.g1)),
            "g1_max": float(np.max(self.g1)),
            "truncation": list(self.truncation) if self.truncation else None,
            "n_truncated": int(self.n_truncated),
            "plugin_ate": float(np.mean(self.q1 - self.q0)),
        }
        if pseudo is not None:
            out["aipw_ate"] = float(np.mean(getattr(pseudo, "d", pseudo)))
        return out


@dataclass
class PseudoOutcome:
    d: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.d)


def truncate_propensity(g1, lo, hi):
    if not 0.0 < lo < hi < 1.0:
        raise ValidationError(f"Truncation bounds must satisfy 0 < lo < hi < 1, got ({lo}, {hi})")
    return np.clip(np.asarray(g1, dtype=float), lo, hi)


def pseudo_outcome(nuisance, treatment, outcome):
    """Rowwise doubly robust transformation; g(0|W) is taken as 1 − g1."""
    a = np.asarray(treatment, dtype=float).ravel()
    y = np.asarray(outcome, dtype=float).ravel()
    if len(a) != nuisance.n or len(y) != nuisance.n:
        raise ValidationError(f"Expected {nuisance.n} rows, got treatment {len(a)} and outcome {len(y)}")
    if not np.all((a == 0.0) | (a == 1.0)):
        raise ValidationError("Treatment must be 0/1")
    g_a = np.where(a == 1.0, nuisance.g1, 1.0 - nuisance.g1)
    zero = np.flatnonzero(g_a <= 0.0)
    if zero.size:
        raise NumericalError(
            f"Propensity of the received treatment is 0 in row {int(zero[0]) + 1}; consider truncation"
        )
    d = (2.0 * a - 1.0) / g_a * (y - nuisance.outcome_at(a)) + nuisance.q1 - nuisance.q0
    if not np.all(np.isfinite(d)):
        bad = int(np.flatnonzero(~np.isfinite(d))[0]) + 1
        raise NumericalError(f"Pseudo-outcome is not finite in row {bad}")
    provenance = {"truncation": nuisance.truncation, "q_model": nuisance.q_label, "g_model": nuisance.g_label}
    return PseudoOutcome(d, provenance)


def _spec_label(spec):
    if isinstance(spec, HalSpec):
        return spec.label
    return spec.formula()


def fit_outcome_model(table, spec, seed=0):
    """Q̄(0, W) and Q̄(1, W) from a ModelSpec or a HAL fit on (A, W)."""
    if isinstance(spec, HalSpec):
        W = table.covariate_matrix
        AW = np.column_stack([table.treatment, W])
        order = min(spec.max_order, AW.shape[1])
        fit = fit_hal(AW, table.outcome, family="linear", max_order=order, K=spec.n_folds, seed=seed,
                      n_lambdas=spec.n_lambdas, ratio=spec.ratio, tol=spec.tol)
        q0 = hal_predict(fit, np.column_stack([np.zeros(table.n), W]))
        q1 = hal_predict(fit, np.column_stack([np.ones(table.n), W]))
        return q0, q1
    if spec.family != "linear":
        raise ValidationError("The outcome model must use the linear family")
    validate_spec(table, spec)
    X = build_design(table, spec)
    fit = fit_ols(X, table.outcome, spec.term_names)
    q0 = predict_linear(fit, build_design(table, spec, a_override=0))
    q1 = predict_linear(fit, build_design(table, spec, a_override=1))
    return q0, q1


def fit_propensity_model(table, spec, seed=0):
    """g(1|W) from a logistic ModelSpec or a logistic HAL fit on W."""
    if isinstance(spec, HalSpec):
        W = table.covariate_matrix
        order = min(spec.max_order, W.shape[1])
        fit = fit_hal(W, table.treatment, family="logistic", max_order=order, K=spec.n_folds, seed=seed,
                      n_lambdas=spec.n_lambdas, ratio=spec.ratio, tol=spec.tol)
        return hal_predict(fit, W)
    if spec.uses_treatment:
        raise ValidationError("The propensity model cannot contain the treatment")
    validate_spec(table, spec)
    X = build_design(table, spec)
    fit = fit_logistic(X, table.treatment, term_names=spec.term_names)
    return predict_probability(fit, X)


def estimate_nuisances(table, q_model, g_model, truncation=None, seed=0):
    """
    Fit Q̄ and g on the full sample and optionally truncate g(1|W).

    Failures are raised as PipelineError tagged ``nuisance_q``, ``nuisance_g``
    or ``pseudo_outcome``.
    """
    for stage, spec in (("nuisance_q", q_model), ("nuisance_g", g_model)):
        if not isinstance(spec, (ModelSpec, HalSpec)):
            raise PipelineError(stage, ValidationError(f"Unsupported nuisance model {spec!r}"))
    q0, q1 = run_stage("nuisance_q", fit_outcome_model, table, q_model, seed)
    g1 = run_stage("nuisance_g", fit_propensity_model, table, g_model, seed)
    n_truncated = 0
    if truncation is not None:
        lo, hi = truncation
        clipped = run_stage("nuisance_g", truncate_propensity, g1, lo, hi)
        n_truncated = int(np.count_nonzero(clipped != g1))
        g1 = clipped
        if n_truncated:
            logger.info(f"Truncated {n_truncated} propensity scores into [{lo}, {hi}]")
        truncation = (float(lo), float(hi))
    return run_stage(
        "pseudo_outcome", NuisanceEstimates,
        q0, q1, g1, truncation, n_truncated, _spec_label(q_model), _spec_label(g_model),
    )
