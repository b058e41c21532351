"""
Highly Adaptive LASSO: indicator-basis expansion over the observed support,
followed by cross-validated L1 regression on the basis.

A basis column is tagged by a coordinate subset s and a knot u:

    φ(v) = Π_{k∈s} I(v_k ≥ u_k)
"""
import logging
from dataclasses import dataclass, field
from itertools import combinations
from typing import List, Optional, Tuple

import numpy as np
from scipy.special import expit

from .errors import ValidationError
from .lassocd import LassoProblem, cv_select_lambda, lambda_grid, solve
from .linmod import PROB_CLAMP

logger = logging.getLogger(__name__)

DEFAULT_MAX_ORDER = 3


@dataclass(frozen=True)
class HalSpec:
    """HAL estimator settings; stands in for a ModelSpec in the pipeline."""

    max_order: int = DEFAULT_MAX_ORDER
    n_folds: int = 10
    n_lambdas: int = 100
    ratio: float = 1e-3
    tol: float = 1e-7

    @property
    def label(self):
        return f"hal(max_order={self.max_order})"


@dataclass
class HalBasis:
    columns: np.ndarray
    tags: List[Tuple[Tuple[int, ...], np.ndarray]]
    dedup_map: np.ndarray
    n_candidates: int = 0

    @property
    def n_columns(self):
        return self.columns.shape[1]


@dataclass
class HalFit:
    tags: List[Tuple[Tuple[int, ...], np.ndarray]]
    coefficients: np.ndarray
    intercept: float
    lambda_: float
    family: str
    n_covariates: int
    cv_mse: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def n_active(self):
        return int(np.count_nonzero(self.coefficients))


def _subsets(d, max_order):
    for size in range(1, max_order + 1):
        for s in combinations(range(d), size):
            yield s


def _indicator(W, subset, knot):
    col = np.ones(W.shape[0], dtype=bool)
    for k, u in zip(subset, knot):
        col &= W[:, k] >= u
    return col


def build_hal_basis(W, max_order=DEFAULT_MAX_ORDER):
    """
    Enumerate Π_{k∈s} I(v_k ≥ V_{i,k}) for every subset |s| ≤ max_order and
    every observation i; drop constant and duplicate columns.

    Order is deterministic: subsets by size then lexicographically, knots by
    the first row realizing them. Each retained column stores the smallest
    support point that realizes it, so prediction is well defined.
    """
    W = np.asarray(W, dtype=float)
    if W.ndim == 1:
        W = W[:, None]
    n, d = W.shape
    if n == 0 or d == 0:
        raise ValidationError("HAL basis needs a nonempty covariate matrix")
    if not 1 <= max_order <= d:
        raise ValidationError(f"max_order must lie in [1, {d}], got {max_order}")

    candidates = []
    cols = []
    for subset in _subsets(d, max_order):
        sub = W[:, subset]
        _, first = np.unique(sub, axis=0, return_index=True)
        for i in np.sort(first):
            candidates.append(subset)
            cols.append(_indicator(W, subset, sub[i]))
    n_candidates = len(cols)
    B = np.column_stack(cols)
    ones = B.sum(axis=0)
    keep = np.flatnonzero((ones > 0) & (ones < n))
    dedup = np.full(n_candidates, -1, dtype=int)
    retained = keep
    if keep.size:
        _, first, inverse = np.unique(B[:, keep], axis=1, return_index=True, return_inverse=True)
        # unique columns in order of first appearance
        order = np.argsort(first)
        rank = np.empty_like(order)
        rank[order] = np.arange(order.size)
        dedup[keep] = rank[np.ravel(inverse)]
        retained = keep[first[order]]
    tags = []
    for j in retained:
        subset = candidates[j]
        tags.append((subset, W[B[:, j]][:, list(subset)].min(axis=0)))
    matrix = B[:, retained].astype(float)
    logger.debug(f"HAL basis: {n_candidates} candidate columns, {len(retained)} retained")
    return HalBasis(matrix, tags, dedup, n_candidates)


def evaluate_basis(tags, W):
    W = np.asarray(W, dtype=float)
    if W.ndim == 1:
        W = W[:, None]
    if not tags:
        return np.zeros((W.shape[0], 0))
    return np.column_stack([_indicator(W, s, u) for s, u in tags]).astype(float)


def fit_hal(W, y, family="linear", max_order=DEFAULT_MAX_ORDER, K=10, seed=0,
            lambda_=None, n_lambdas=100, ratio=1e-3, tol=1e-7):
    """
    Build the basis, choose λ by K-fold CV with unit penalty factors and
    refit on the full data. An explicit ``lambda_`` skips CV.
    """
    W = np.asarray(W, dtype=float)
    if W.ndim == 1:
        W = W[:, None]
    y = np.asarray(y, dtype=float).ravel()
    basis = build_hal_basis(W, max_order)
    d = W.shape[1]
    if basis.n_columns == 0:
        # constant covariates: intercept-only model
        mean = float(np.mean(y))
        if family == "logistic":
            mean = float(np.clip(mean, PROB_CLAMP, 1 - PROB_CLAMP))
        intercept = mean if family == "linear" else float(np.log(mean / (1 - mean)))
        return HalFit([], np.zeros(0), intercept, 0.0, family, d)

    problem = LassoProblem(basis.columns, y, family=family)
    cv_mse = None
    if lambda_ is None:
        grid = lambda_grid(problem, n_lambdas, ratio)
        cv = cv_select_lambda(problem, K=K, grid=grid, rng_seed=seed, tol=tol)
        lambda_, cv_mse = cv.chosen_lambda, cv.cv_mse
        path_end = grid[: cv.chosen_index + 1]
    else:
        path_end = [lambda_]
    solution = None
    for lam in path_end:
        solution = solve(problem, float(lam), tol=tol, warm_start=solution)
    active = solution.coefficients != 0.0
    tags = [tag for tag, keep in zip(basis.tags, active) if keep]
    logger.info(f"HAL ({family}) kept {int(active.sum())} of {basis.n_columns} basis columns at lambda={lambda_:.4g}")
    return HalFit(tags, solution.coefficients[active], solution.intercept, float(lambda_), family, d, cv_mse)


def hal_predict(fit, W_new):
    W_new = np.asarray(W_new, dtype=float)
    if W_new.ndim == 1:
        W_new = W_new[:, None] if fit.n_covariates == 1 else W_new[None, :]
    if W_new.shape[1] != fit.n_covariates:
        raise ValidationError(f"HAL fit expects {fit.n_covariates} covariates, got {W_new.shape[1]}")
    eta = fit.intercept + evaluate_basis(fit.tags, W_new) @ fit.coefficients
    if fit.family == "logistic":
        return expit(eta)
    return eta
