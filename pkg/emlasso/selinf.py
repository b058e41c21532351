"""
Post-selection inference for the weighted LASSO.

Conditioning on the selected model M and its signs s, the selection event is a
polyhedron {y : A y ≤ b}. Any linear contrast ηᵀy is then a normal variable
truncated to [ν⁻, ν⁺], and inverting its CDF in the mean gives confidence
intervals and p-values that are valid given the selection.

The KKT conditions are written for the objective

    Σᵢ (yᵢ − vᵢᵀβ)² + λ Σⱼ wⱼ|βⱼ|

so on the selected model β_M = G⁻¹(V_Mᵀy − (λ/2)(w∘s)_M) with G = V_MᵀV_M.
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy import linalg
from scipy.optimize import brentq
from scipy.special import log_ndtr, ndtr

from .errors import (
    BracketingError,
    DegenerateTruncationError,
    InfeasibleSelectionError,
    ValidationError,
)
from .linmod import checked_cholesky

logger = logging.getLogger(__name__)

FEASIBILITY_TOL = 1e-8
MAX_EXPANSIONS = 200


@dataclass
class Polyhedron:
    a_mat: np.ndarray
    b: np.ndarray
    model: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    signs: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def n_constraints(self):
        return len(self.b)

    def slack(self, y):
        return self.b - self.a_mat @ np.asarray(y, dtype=float)

    def contains(self, y, tol=0.0):
        return bool(np.all(self.slack(y) >= -tol))


@dataclass
class SelectiveInterval:
    name: str
    index: int
    estimate: float
    sigma_star2: float
    nu_lo: float
    nu_hi: float
    ci_lo: float
    ci_hi: float
    p_value: float
    alpha: float = 0.05
    eta: Optional[np.ndarray] = field(default=None, repr=False)

    def covers(self, value):
        return self.ci_lo <= value <= self.ci_hi

    def to_dict(self):
        return {
            "name": self.name,
            "estimate": self.estimate,
            "sigma_star2": self.sigma_star2,
            "nu_lo": self.nu_lo,
            "nu_hi": self.nu_hi,
            "ci_lo": self.ci_lo,
            "ci_hi": self.ci_hi,
            "p_value": self.p_value,
        }


def _model_indices(weights, active_set):
    unpen = np.flatnonzero(weights == 0.0)
    active = np.asarray(active_set, dtype=int)
    if np.any(weights[active] == 0.0):
        raise ValidationError("Unpenalized columns are always in the model and cannot be listed as active")
    return np.union1d(unpen, active).astype(int)


def _gram_inverse(V_M):
    if V_M.shape[1] == 0:
        return np.zeros((0, 0))
    L = checked_cholesky(V_M.T @ V_M)
    return linalg.cho_solve((L, True), np.eye(V_M.shape[1]))


def selection_polyhedron(V, lambda_, weights, active_set, signs):
    """
    Polyhedron {y : A y ≤ b} of responses whose weighted-LASSO fit at λ has
    the given active set and signs.

    ``V`` includes every unpenalized column (weight 0), which always belongs
    to the model. Columns with infinite weight are never selected and impose
    no constraint.
    """
    V = np.asarray(V, dtype=float)
    weights = np.asarray(weights, dtype=float).ravel()
    active_set = np.asarray(active_set, dtype=int).ravel()
    signs = np.asarray(signs, dtype=float).ravel()
    if V.shape[1] != len(weights):
        raise ValidationError(f"{len(weights)} weights for {V.shape[1]} columns")
    if len(active_set) != len(signs):
        raise ValidationError("active_set and signs must have equal length")
    if np.any(~np.isfinite(weights[active_set])):
        raise ValidationError("Columns with infinite weight cannot be active")

    model = _model_indices(weights, active_set)
    s_full = np.zeros(V.shape[1])
    s_full[active_set] = signs
    V_M = V[:, model]
    G_inv = _gram_inverse(V_M)
    ws = (weights * s_full)[model]
    ws[weights[model] == 0.0] = 0.0
    G_inv_ws = G_inv @ ws

    rows = []
    rhs = []

    # sign conditions on penalized active coordinates
    pinv = G_inv @ V_M.T
    pos = {col: k for k, col in enumerate(model)}
    for col, s in zip(active_set, signs):
        k = pos[col]
        rows.append(-s * pinv[k])
        rhs.append(-0.5 * lambda_ * s * G_inv_ws[k])

    # dual feasibility on inactive, finitely weighted coordinates
    inactive = np.setdiff1d(np.flatnonzero(np.isfinite(weights)), model)
    if inactive.size:
        V_I = V[:, inactive]
        C = V_I.T @ V_M @ G_inv
        resid_op = 2.0 * (V_I.T - C @ V_M.T)
        shift = lambda_ * (V_I.T @ (V_M @ G_inv_ws))
        bound = lambda_ * weights[inactive]
        rows.extend(resid_op)
        rhs.extend(bound - shift)
        rows.extend(-resid_op)
        rhs.extend(bound + shift)

    n = V.shape[0]
    a_mat = np.vstack(rows) if rows else np.zeros((0, n))
    b = np.asarray(rhs, dtype=float)
    logger.debug(f"Selection polyhedron: {len(b)} constraints, model size {len(model)}")
    return Polyhedron(a_mat, b, model, signs)


def _feasibility_scale(poly, y):
    ay = poly.a_mat @ y
    return max(1.0, float(np.max(np.abs(poly.b))) if poly.b.size else 0.0,
               float(np.max(np.abs(ay))) if ay.size else 0.0)


def truncation_interval(poly, y, eta, sigma2=1.0):
    """
    Range [ν⁻, ν⁺] of ηᵀy' over the polyhedron, moving y along the direction
    that leaves the component of y independent of ηᵀy fixed.
    """
    y = np.asarray(y, dtype=float).ravel()
    eta = np.asarray(eta, dtype=float).ravel()
    if sigma2 <= 0:
        raise ValidationError(f"sigma2 must be positive, got {sigma2}")
    norm2 = float(eta @ eta)
    if norm2 == 0.0:
        raise ValidationError("Contrast vector eta is zero")
    if poly.n_constraints == 0:
        return -np.inf, np.inf

    tol = FEASIBILITY_TOL * _feasibility_scale(poly, y)
    slack = poly.slack(y)
    if np.any(slack < -tol):
        worst = int(np.argmin(slack))
        raise InfeasibleSelectionError(
            f"Observed response violates selection constraint {worst} by {-slack[worst]:.3e}"
        )
    c = eta / norm2
    z = y - c * float(eta @ y)
    ac = poly.a_mat @ c
    resid = poly.b - poly.a_mat @ z
    tiny = 1e-12 * max(1.0, float(np.max(np.abs(ac))))
    neg = ac < -tiny
    posi = ac > tiny
    nu_lo = float(np.max(resid[neg] / ac[neg])) if neg.any() else -np.inf
    nu_hi = float(np.min(resid[posi] / ac[posi])) if posi.any() else np.inf
    flat = ~(neg | posi)
    if np.any(resid[flat] < -tol):
        raise InfeasibleSelectionError("A constraint independent of the contrast is violated")
    if not nu_lo < nu_hi:
        raise DegenerateTruncationError(f"Truncation interval collapsed: [{nu_lo}, {nu_hi}]")
    return nu_lo, nu_hi


def truncnorm_cdf(x, mu, sigma2, lo, hi, return_flag=False):
    """
    CDF at x of N(mu, sigma2) truncated to [lo, hi].

    Evaluated through log Φ on whichever side of the mean the interval lies,
    so far-tail truncations keep full relative precision. Points outside
    [lo, hi] are clamped to 0 or 1; with ``return_flag`` the clamp is reported.
    """
    if sigma2 <= 0:
        raise ValidationError(f"sigma2 must be positive, got {sigma2}")
    if not lo < hi:
        raise ValidationError(f"Truncation bounds must satisfy lo < hi, got [{lo}, {hi}]")
    sd = np.sqrt(sigma2)
    x_arr = np.asarray(x, dtype=float)
    mu_arr = np.asarray(mu, dtype=float)
    a = (lo - mu_arr) / sd
    b = (hi - mu_arr) / sd
    t = np.clip((x_arr - mu_arr) / sd, a, b)
    with np.errstate(all="ignore"):
        # interval above the mean: survival functions
        lsa, lsb, lst = log_ndtr(-a), log_ndtr(-b), log_ndtr(-t)
        upper = -np.expm1(lst - lsa) / -np.expm1(lsb - lsa)
        # interval below the mean: lower-tail CDFs
        lpa, lpb, lpt = log_ndtr(a), log_ndtr(b), log_ndtr(t)
        lower = np.exp(lpt - lpb) * -np.expm1(lpa - lpt) / -np.expm1(lpa - lpb)
        direct = (ndtr(t) - ndtr(a)) / (ndtr(b) - ndtr(a))
    value = np.where(a >= 0, upper, np.where(b <= 0, lower, direct))
    value = np.where(t <= a, 0.0, np.where(t >= b, 1.0, value))
    value = np.clip(np.nan_to_num(value, nan=0.0), 0.0, 1.0)
    flag = np.asarray((x_arr < lo) | (x_arr > hi))
    if value.ndim == 0:
        value = float(value)
        flag = bool(flag)
    if return_flag:
        return value, flag
    return value


def _find_root(f, estimate, sd, direction):
    """Expand geometrically from estimate ± 10σ until f changes sign."""
    step = 10.0 * sd
    inner = estimate
    f_inner = f(inner)
    for _ in range(MAX_EXPANSIONS):
        outer = estimate + direction * step
        f_outer = f(outer)
        if np.sign(f_outer) != np.sign(f_inner) or f_outer == 0.0:
            lo, hi = sorted((inner, outer))
            return brentq(f, lo, hi, xtol=1e-8 * sd)
        inner, f_inner = outer, f_outer
        step *= 2.0
    raise BracketingError(f"Could not bracket the pivot root after {MAX_EXPANSIONS} expansions")


def selective_ci(estimate, sigma_star2, nu_lo, nu_hi, alpha=0.05):
    """
    Invert the truncated pivot: F(estimate; L*) = 1 − α/2 and
    F(estimate; U*) = α/2. The pivot decreases in μ.
    """
    if not 0.0 < alpha < 1.0:
        raise ValidationError(f"alpha must lie in (0, 1), got {alpha}")
    if sigma_star2 <= 0:
        raise ValidationError(f"sigma_star2 must be positive, got {sigma_star2}")
    if not nu_lo <= estimate <= nu_hi:
        raise ValidationError(f"Estimate {estimate} lies outside its truncation interval [{nu_lo}, {nu_hi}]")
    sd = float(np.sqrt(sigma_star2))

    def pivot(mu):
        return truncnorm_cdf(estimate, mu, sigma_star2, nu_lo, nu_hi)

    def solve_for(target):
        g = lambda mu: pivot(mu) - target
        g0 = g(estimate)
        if g0 == 0.0:
            return float(estimate)
        # pivot above target means μ must move up
        return float(_find_root(g, estimate, sd, 1.0 if g0 > 0 else -1.0))

    lower = solve_for(1.0 - alpha / 2.0)
    upper = solve_for(alpha / 2.0)
    if not lower <= estimate <= upper:
        logger.debug(f"Estimate {estimate:.4g} falls outside its interval [{lower:.4g}, {upper:.4g}]")
    return lower, upper


def selective_pvalue(estimate, sigma_star2, nu_lo, nu_hi):
    """Two-sided p-value for a zero mean: 2·min(F, 1 − F) at μ = 0."""
    F = truncnorm_cdf(estimate, 0.0, sigma_star2, nu_lo, nu_hi)
    return float(min(1.0, 2.0 * min(F, 1.0 - F)))


def selective_intervals(V, y, lambda_, weights, active_set, signs, sigma2, alpha=0.05,
                        names: Optional[List[str]] = None):
    """
    Selective interval and p-value for every selected candidate.

    ``V`` holds the candidates only; an unpenalized intercept column is added
    here and always refit, but never reported.
    """
    V = np.asarray(V, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    n, p = V.shape
    names = list(names) if names is not None else [f"V{j + 1}" for j in range(p)]
    active_set = np.asarray(active_set, dtype=int).ravel()
    if active_set.size == 0:
        return []
    if sigma2 <= 0:
        raise ValidationError(f"Residual variance must be positive for selective inference, got {sigma2}")

    V_full = np.column_stack([np.ones(n), V])
    w_full = np.concatenate([[0.0], np.asarray(weights, dtype=float).ravel()])
    poly = selection_polyhedron(V_full, lambda_, w_full, active_set + 1, signs)
    V_M = V_full[:, poly.model]
    G_inv = _gram_inverse(V_M)
    contrasts = V_M @ G_inv
    pos = {col: k for k, col in enumerate(poly.model)}

    intervals = []
    for j in active_set:
        eta = contrasts[:, pos[j + 1]]
        estimate = float(eta @ y)
        sigma_star2 = float(sigma2 * (eta @ eta))
        nu_lo, nu_hi = truncation_interval(poly, y, eta, sigma2)
        ci_lo, ci_hi = selective_ci(estimate, sigma_star2, nu_lo, nu_hi, alpha)
        p_value = selective_pvalue(estimate, sigma_star2, nu_lo, nu_hi)
        intervals.append(SelectiveInterval(
            names[j], int(j), estimate, sigma_star2, nu_lo, nu_hi, ci_lo, ci_hi, p_value, alpha, eta,
        ))
    return intervals
