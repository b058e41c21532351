"""
Ordinary least squares and logistic regression by IRLS.

Used for GLM nuisance models, the pilot regression of the effect-modifier
selection, and the linear-model comparators.
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy import linalg
from scipy.special import expit

from .errors import RankDeficientError, SeparationError, ValidationError

logger = logging.getLogger(__name__)

RANK_TOL = 1e-10
IRLS_MAX_ITER = 100
IRLS_TOL = 1e-8
PROB_CLAMP = 1e-10
DIVERGENCE_BOUND = 30.0


@dataclass
class LinearFit:
    coefficients: np.ndarray
    residual_variance: float
    gram_inverse: np.ndarray
    term_names: List[str] = field(default_factory=list)
    n_obs: int = 0

    @property
    def df_resid(self):
        return self.n_obs - len(self.coefficients)

    def standard_errors(self):
        return np.sqrt(self.residual_variance * np.diag(self.gram_inverse))


@dataclass
class LogisticFit:
    coefficients: np.ndarray
    converged: bool
    iterations: int
    term_names: List[str] = field(default_factory=list)


def _as_design(X, y=None):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise ValidationError(f"Design matrix must be 2-dimensional, got shape {X.shape}")
    if y is None:
        return X
    y = np.asarray(y, dtype=float).ravel()
    if X.shape[0] != len(y):
        raise ValidationError(f"Design has {X.shape[0]} rows but response has {len(y)}")
    if X.shape[0] < X.shape[1]:
        raise ValidationError(f"Need at least as many rows as columns ({X.shape[0]} < {X.shape[1]})")
    return X, y


def checked_cholesky(gram, names=None, tol=RANK_TOL):
    """
    Lower Cholesky factor of a Gram matrix, built column by column so that a
    dependent column is reported by index instead of silently pseudo-inverted.
    """
    k = gram.shape[0]
    scale = float(np.max(np.diag(gram))) if k else 0.0
    if scale <= 0.0:
        raise RankDeficientError(0, names[0] if names else None)
    L = np.zeros_like(gram)
    for j in range(k):
        if j:
            l = linalg.solve_triangular(L[:j, :j], gram[:j, j], lower=True)
            L[j, :j] = l
            d = gram[j, j] - l @ l
        else:
            d = gram[0, 0]
        if d <= tol * scale:
            raise RankDeficientError(j, names[j] if names else None)
        L[j, j] = np.sqrt(d)
    return L


def fit_ols(X, y, term_names: Optional[List[str]] = None):
    """
    Least squares by a rank-checked Cholesky of XᵀX.

    residual_variance uses the unbiased denominator n - k; with n == k the
    fit interpolates and the variance is reported as 0.
    """
    X, y = _as_design(X, y)
    n, k = X.shape
    gram = X.T @ X
    L = checked_cholesky(gram, term_names)
    coef = linalg.cho_solve((L, True), X.T @ y)
    gram_inverse = linalg.cho_solve((L, True), np.eye(k))
    gram_inverse = 0.5 * (gram_inverse + gram_inverse.T)
    resid = y - X @ coef
    rss = float(resid @ resid)
    residual_variance = rss / (n - k) if n > k else 0.0
    return LinearFit(coef, residual_variance, gram_inverse, list(term_names or []), n)


def fit_logistic(X, y, max_iter=IRLS_MAX_ITER, tol=IRLS_TOL, term_names=None,
                 divergence_bound=DIVERGENCE_BOUND):
    """
    Bernoulli GLM with logit link by iteratively reweighted least squares.

    converged is True iff the largest coefficient change falls below ``tol``
    within ``max_iter`` iterations.
    """
    X, y = _as_design(X, y)
    if not np.all((y == 0.0) | (y == 1.0)):
        raise ValidationError("Logistic response must be 0/1")
    n, k = X.shape
    beta = np.zeros(k)
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        eta = X @ beta
        p = expit(eta)
        w = np.clip(p * (1.0 - p), PROB_CLAMP, None)
        z = eta + (y - p) / w
        Xw = X * w[:, None]
        L = checked_cholesky(X.T @ Xw, term_names)
        new_beta = linalg.cho_solve((L, True), Xw.T @ z)
        change = float(np.max(np.abs(new_beta - beta)))
        beta = new_beta
        if np.max(np.abs(beta)) > divergence_bound:
            raise SeparationError(
                f"Logistic coefficients exceed {divergence_bound} after {iterations} iterations; "
                "the classes appear separated"
            )
        if change < tol:
            converged = True
            break
    if not converged:
        logger.warning(f"IRLS did not converge in {max_iter} iterations")
    logger.debug(f"IRLS finished after {iterations} iterations (converged={converged})")
    return LogisticFit(beta, converged, iterations, list(term_names or []))


def _check_columns(fit, X):
    X = _as_design(X)
    if X.shape[1] != len(fit.coefficients):
        raise ValidationError(f"Design has {X.shape[1]} columns, fit expects {len(fit.coefficients)}")
    return X


def predict_linear(fit, X):
    X = _check_columns(fit, X)
    return X @ fit.coefficients


def predict_probability(fit, X):
    X = _check_columns(fit, X)
    return expit(X @ fit.coefficients)
