"""
Weighted (penalty-factor) LASSO by coordinate descent.

Linear family objective, reported in the raw sum-of-squares convention:

    Σᵢ (yᵢ − β₀ − xᵢᵀβ)² + λ Σⱼ wⱼ |βⱼ|

Logistic family objective, per-observation convention:

    −(1/n) Σᵢ loglik(yᵢ; β₀ + xᵢᵀβ) + λ Σⱼ wⱼ |βⱼ|

The intercept is never penalized. ``wⱼ = 0`` leaves a column unpenalized and
``wⱼ = +inf`` removes it (its coefficient is exactly 0 at every λ).
"""
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from joblib import Parallel, delayed
from scipy.special import expit
from sklearn.model_selection import KFold

from .errors import ConvergenceError, ValidationError
from .linmod import PROB_CLAMP, fit_logistic, fit_ols

logger = logging.getLogger(__name__)

CD_TOL = 1e-9
MAX_SWEEPS = 10_000
MAX_OUTER = 100
KKT_TOL = 1e-6
DEFAULT_FOLDS = 10
DEFAULT_N_LAMBDAS = 100
DEFAULT_RATIO = 1e-4
# relative margin so that the solution at λ_max is exactly null despite rounding
LAMBDA_MAX_MARGIN = 1e-10


@dataclass
class LassoProblem:
    X: np.ndarray
    y: np.ndarray
    penalty_factors: Optional[np.ndarray] = None
    family: str = "linear"
    standardize: bool = False

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(self.y, dtype=float).ravel()
        if X.ndim != 2 or X.shape[0] != len(y):
            raise ValidationError(f"Design shape {X.shape} does not match response length {len(y)}")
        if self.family not in ("linear", "logistic"):
            raise ValidationError(f"Unknown family '{self.family}'")
        if self.family == "logistic" and not np.all((y == 0.0) | (y == 1.0)):
            raise ValidationError("Logistic response must be 0/1")
        if self.penalty_factors is None:
            w = np.ones(X.shape[1])
        else:
            w = np.asarray(self.penalty_factors, dtype=float).ravel()
        if len(w) != X.shape[1]:
            raise ValidationError(f"{len(w)} penalty factors for {X.shape[1]} columns")
        if np.any(np.isnan(w)) or np.any(w < 0):
            raise ValidationError("Penalty factors must be nonnegative (or +inf)")
        self.X, self.y, self.penalty_factors = X, y, w

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def p(self):
        return self.X.shape[1]

    @property
    def finite(self):
        return np.isfinite(self.penalty_factors)

    def subset(self, rows):
        return LassoProblem(self.X[rows], self.y[rows], self.penalty_factors, self.family, self.standardize)


@dataclass
class LassoSolution:
    lambda_: float
    intercept: float
    coefficients: np.ndarray
    converged: bool = True
    sweeps: int = 0
    kkt_violation: float = 0.0
    active_set: np.ndarray = field(init=False)
    signs: np.ndarray = field(init=False)

    def __post_init__(self):
        self.coefficients = np.asarray(self.coefficients, dtype=float)
        self.active_set = np.flatnonzero(self.coefficients != 0.0)
        self.signs = np.sign(self.coefficients[self.active_set])

    def predict(self, X):
        return self.intercept + np.asarray(X, dtype=float) @ self.coefficients


@dataclass
class CvResult:
    lambda_grid: np.ndarray
    cv_mse: np.ndarray
    cv_se: np.ndarray
    chosen_lambda: float
    chosen_index: int
    seed: int = 0


def soft_threshold(z, t):
    """sign(z)·max(|z| − t, 0)."""
    if t < 0:
        raise ValidationError(f"Threshold must be nonnegative, got {t}")
    return float(np.sign(z) * max(abs(z) - t, 0.0))


def kkt_scale(X, y):
    """Magnitude against which gradient tolerances are measured."""
    if X.size == 0:
        return 1.0
    col = float(np.sqrt(np.max(np.einsum("ij,ij->j", X, X))))
    return max(1.0, col * float(np.linalg.norm(y - np.mean(y))))


def _weighted_cd(X, z, v, tau, beta0, beta, tol, max_sweeps, slack, trace=None):
    """
    Minimize Σ vᵢ (zᵢ − β₀ − xᵢᵀβ)² + Σⱼ τⱼ|βⱼ| in place over finite τ.

    Cycles over the active set until coefficient changes drop below ``tol``,
    then checks every inactive coordinate with one matrix product and admits
    KKT violators.
    """
    Xv = X if np.all(v == 1.0) else X * v[:, None]
    col_sq = np.einsum("ij,ij->j", Xv, X)
    v_sum = float(np.sum(v))
    half_tau = tau / 2.0
    r = z - beta0 - X @ beta
    live = col_sq > 0.0
    beta[~live] = 0.0
    active = np.zeros(X.shape[1], dtype=bool)
    active[(beta != 0.0) | (tau == 0.0)] = True
    active &= live
    sweeps = 0
    while True:
        order = np.flatnonzero(active)
        while True:
            sweeps += 1
            if sweeps > max_sweeps:
                grad = 2.0 * Xv.T @ r
                raise ConvergenceError(
                    f"Coordinate descent did not converge in {max_sweeps} sweeps",
                    _kkt_violation(grad, beta, tau),
                )
            shift = float(v @ r) / v_sum
            beta0 += shift
            r -= shift
            max_change = abs(shift)
            for j in order:
                xj = X[:, j]
                old = beta[j]
                rho = float(Xv[:, j] @ r) + col_sq[j] * old
                new = np.sign(rho) * max(abs(rho) - half_tau[j], 0.0) / col_sq[j]
                if new != old:
                    r -= xj * (new - old)
                    beta[j] = new
                    change = abs(new - old)
                    if change > max_change:
                        max_change = change
            if trace is not None:
                trace.append(float(v @ (r * r)) + float(tau @ np.abs(beta)))
            if max_change < tol:
                break
        grad = 2.0 * Xv.T @ r
        violators = (~active) & live & (np.abs(grad) > tau + slack)
        if not violators.any():
            return beta0, beta, sweeps, r
        active |= violators


def _kkt_violation(grad, beta, tau):
    """Largest KKT residual given gradient 2·Xᵀ(v∘r) and thresholds τ."""
    if grad.size == 0:
        return 0.0
    act = beta != 0.0
    viol = np.where(act, np.abs(grad - tau * np.sign(beta)), np.maximum(np.abs(grad) - tau, 0.0))
    return float(np.max(viol))


def _standardized(problem):
    if not problem.standardize:
        return problem.X, np.ones(problem.p)
    sd = problem.X.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    return problem.X / sd, sd


def solve_weighted_lasso(problem, lambda_, tol=CD_TOL, max_sweeps=MAX_SWEEPS, warm_start=None, trace=None):
    """
    Linear-family weighted LASSO at one λ (raw sum-of-squares convention).

    When ``trace`` is a list, the objective after every sweep is appended to it.
    """
    if problem.family != "linear":
        raise ValidationError("solve_weighted_lasso expects a linear-family problem")
    if lambda_ < 0:
        raise ValidationError(f"lambda must be nonnegative, got {lambda_}")
    X_all, sd = _standardized(problem)
    fin = problem.finite
    X = X_all[:, fin]
    tau = lambda_ * problem.penalty_factors[fin]
    beta = np.zeros(X.shape[1])
    beta0 = float(np.mean(problem.y))
    if warm_start is not None:
        beta0 = warm_start.intercept
        beta = (warm_start.coefficients * sd)[fin].copy()
    v = np.ones(problem.n)
    scale = kkt_scale(X, problem.y)
    beta0, beta, sweeps, r = _weighted_cd(
        X, problem.y, v, tau, beta0, beta, tol, max_sweeps, 1e-12 * scale, trace
    )
    grad = 2.0 * X.T @ r
    violation = max(_kkt_violation(grad, beta, tau), abs(2.0 * float(np.sum(r))))
    coef = np.zeros(problem.p)
    coef[fin] = beta
    coef /= sd
    converged = violation <= KKT_TOL * scale
    if not converged:
        logger.debug(f"KKT check failed at lambda={lambda_:.4g}: violation {violation:.3e}")
    return LassoSolution(float(lambda_), float(beta0), coef, converged, sweeps, violation)


def _logistic_objective(X, y, beta0, beta, lam_w):
    eta = beta0 + X @ beta
    nll = float(np.mean(np.logaddexp(0.0, eta) - y * eta))
    return nll + float(np.sum(lam_w * np.abs(beta)))


def solve_logistic_lasso(problem, lambda_, tol=CD_TOL, max_sweeps=MAX_SWEEPS,
                         max_outer=MAX_OUTER, outer_tol=1e-8, warm_start=None):
    """
    Proximal Newton: IRLS quadratic approximation outside, weighted
    coordinate descent inside, with step halving on the penalized objective.
    """
    if problem.family != "logistic":
        raise ValidationError("solve_logistic_lasso expects a logistic-family problem")
    if lambda_ < 0:
        raise ValidationError(f"lambda must be nonnegative, got {lambda_}")
    X_all, sd = _standardized(problem)
    fin = problem.finite
    X = X_all[:, fin]
    y = problem.y
    n = problem.n
    lam_w = lambda_ * problem.penalty_factors[fin]
    tau = 2.0 * n * lam_w
    ybar = float(np.clip(np.mean(y), PROB_CLAMP, 1 - PROB_CLAMP))
    beta0 = float(np.log(ybar / (1 - ybar)))
    beta = np.zeros(X.shape[1])
    if warm_start is not None:
        beta0 = warm_start.intercept
        beta = (warm_start.coefficients * sd)[fin].copy()
    scale = max(1.0, kkt_scale(X, y) / n)
    sweeps = 0
    f_old = _logistic_objective(X, y, beta0, beta, lam_w)
    converged = False
    for outer in range(1, max_outer + 1):
        eta = beta0 + X @ beta
        p = expit(eta)
        v = np.clip(p * (1.0 - p), PROB_CLAMP, None)
        z = eta + (y - p) / v
        new0, new_beta, s, _ = _weighted_cd(X, z, v, tau, beta0, beta.copy(), tol, max_sweeps, 1e-12 * n * scale)
        sweeps += s
        f_new = _logistic_objective(X, y, new0, new_beta, lam_w)
        halvings = 0
        while f_new > f_old + 1e-12 * max(1.0, abs(f_old)) and halvings < 30:
            new0 = 0.5 * (new0 + beta0)
            new_beta = 0.5 * (new_beta + beta)
            f_new = _logistic_objective(X, y, new0, new_beta, lam_w)
            halvings += 1
        change = max(abs(new0 - beta0), float(np.max(np.abs(new_beta - beta))) if beta.size else 0.0)
        beta0, beta, f_old = new0, new_beta, f_new
        if change < outer_tol:
            converged = True
            break
    p = expit(beta0 + X @ beta)
    grad = X.T @ (y - p) / n
    violation = max(_kkt_violation(2.0 * grad, beta, 2.0 * lam_w) / 2.0, abs(float(np.mean(y - p))))
    if not converged:
        raise ConvergenceError(f"Proximal Newton did not converge in {max_outer} iterations", violation)
    coef = np.zeros(problem.p)
    coef[fin] = beta
    coef /= sd
    ok = violation <= KKT_TOL * scale * 10
    return LassoSolution(float(lambda_), float(beta0), coef, ok, sweeps, violation)


def solve(problem, lambda_, **kwargs):
    if problem.family == "logistic":
        return solve_logistic_lasso(problem, lambda_, **kwargs)
    return solve_weighted_lasso(problem, lambda_, **kwargs)


def _null_residual(problem, X):
    """Residual (linear) or y − p̂ (logistic) of the intercept + unpenalized-column fit."""
    unpen = problem.penalty_factors == 0.0
    if not unpen.any():
        return problem.y - np.mean(problem.y)
    Z = np.column_stack([np.ones(problem.n), X[:, unpen]])
    if problem.family == "linear":
        fit = fit_ols(Z, problem.y)
        return problem.y - Z @ fit.coefficients
    fit = fit_logistic(Z, problem.y)
    return problem.y - expit(Z @ fit.coefficients)


def lambda_max(problem):
    """Smallest λ at which every finite, positively weighted coefficient is 0."""
    X, _ = _standardized(problem)
    w = problem.penalty_factors
    pen = np.isfinite(w) & (w > 0)
    if not pen.any():
        raise ValidationError("lambda grid needs at least one column with a finite positive penalty factor")
    r0 = _null_residual(problem, X)
    score = np.abs(X[:, pen].T @ r0) / w[pen]
    top = float(np.max(score)) * (1.0 + LAMBDA_MAX_MARGIN)
    if problem.family == "linear":
        return 2.0 * top
    return top / problem.n


def lambda_grid(problem, n_lambdas=DEFAULT_N_LAMBDAS, ratio=DEFAULT_RATIO):
    """Log-spaced descending grid from λ_max down to λ_max·ratio."""
    if n_lambdas < 1:
        raise ValidationError("n_lambdas must be at least 1")
    if not 0 < ratio < 1:
        raise ValidationError(f"ratio must lie in (0, 1), got {ratio}")
    top = lambda_max(problem)
    if top <= 0.0:
        top = np.finfo(float).eps
    if n_lambdas == 1:
        return np.array([top])
    return np.geomspace(top, top * ratio, n_lambdas)


def lasso_path(problem, grid, tol=CD_TOL, max_sweeps=MAX_SWEEPS):
    """Warm-started solutions along a descending grid."""
    solutions = []
    previous = None
    for lam in grid:
        previous = solve(problem, float(lam), tol=tol, max_sweeps=max_sweeps, warm_start=previous)
        solutions.append(previous)
    return solutions


def objective(problem, solution, lambda_=None):
    lam = solution.lambda_ if lambda_ is None else lambda_
    w = problem.penalty_factors
    beta = solution.coefficients
    fin = np.isfinite(w)
    penalty = float(np.sum(w[fin] * np.abs(beta[fin])))
    eta = solution.intercept + problem.X @ beta
    if problem.family == "linear":
        return float(np.sum((problem.y - eta) ** 2)) + lam * penalty
    return float(np.mean(np.logaddexp(0.0, eta) - problem.y * eta)) + lam * penalty


def _held_out_loss(problem, solution, rows):
    eta = solution.intercept + problem.X[rows] @ solution.coefficients
    y = problem.y[rows]
    if problem.family == "linear":
        return float(np.mean((y - eta) ** 2))
    return float(np.mean(2.0 * (np.logaddexp(0.0, eta) - y * eta)))


def _fold_losses(problem, train, test, grid, tol, max_sweeps):
    sub = problem.subset(train)
    # raw-sum λ is held fixed per observation across folds
    factor = len(train) / problem.n if problem.family == "linear" else 1.0
    path = lasso_path(sub, np.asarray(grid) * factor, tol=tol, max_sweeps=max_sweeps)
    return [_held_out_loss(problem, sol, test) for sol in path]


def cv_select_lambda(problem, K=DEFAULT_FOLDS, grid=None, rng_seed=0, n_lambdas=DEFAULT_N_LAMBDAS,
                     ratio=DEFAULT_RATIO, tol=CD_TOL, max_sweeps=MAX_SWEEPS, n_jobs=1):
    """
    K-fold cross-validation over a descending λ grid.

    Folds come from a seeded permutation; the chosen λ minimizes mean held-out
    squared error (linear) or deviance (logistic), ties resolved toward the
    larger λ.
    """
    n = problem.n
    if K < 2:
        raise ValidationError(f"K must be at least 2, got {K}")
    if n < K or n // K < 2:
        raise ValidationError(f"{n} rows cannot form {K} folds of at least 2 rows")
    if grid is None:
        grid = lambda_grid(problem, n_lambdas, ratio)
    grid = np.asarray(grid, dtype=float)
    if len(grid) > 1 and np.any(np.diff(grid) >= 0):
        raise ValidationError("lambda grid must be strictly decreasing")

    folds = list(KFold(n_splits=K, shuffle=True, random_state=rng_seed).split(np.arange(n)))
    if n_jobs == 1:
        losses = [_fold_losses(problem, tr, te, grid, tol, max_sweeps) for tr, te in folds]
    else:
        losses = Parallel(n_jobs=n_jobs)(
            delayed(_fold_losses)(problem, tr, te, grid, tol, max_sweeps) for tr, te in folds
        )
    losses = np.asarray(losses)
    cv_mse = losses.mean(axis=0)
    cv_se = losses.std(axis=0, ddof=1) / np.sqrt(K)
    idx = int(np.argmin(cv_mse))
    logger.debug(f"CV chose lambda={grid[idx]:.4g} (index {idx} of {len(grid)})")
    return CvResult(grid, cv_mse, cv_se, float(grid[idx]), idx, rng_seed)
