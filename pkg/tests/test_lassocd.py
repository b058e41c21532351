import numpy as np
import pytest
from sklearn.linear_model import Lasso

from emlasso.errors import ConvergenceError, ValidationError
from emlasso.lassocd import (
    LassoProblem,
    cv_select_lambda,
    lambda_grid,
    lambda_max,
    lasso_path,
    objective,
    soft_threshold,
    solve,
    solve_logistic_lasso,
    solve_weighted_lasso,
)
from emlasso.linmod import fit_logistic, fit_ols


def _linear_problem(rng, n=100, p=4, weights=None, beta=(1.0, -0.5, 0.0, 0.0)):
    X = rng.standard_normal((n, p))
    y = 0.3 + X @ np.asarray(beta[:p]) + rng.standard_normal(n)
    return LassoProblem(X, y, weights)


def _kkt_violation(problem, solution):
    """Largest gradient condition violation for the raw sum-of-squares objective."""
    r = problem.y - solution.predict(problem.X)
    grad = 2.0 * problem.X.T @ r
    worst = abs(2.0 * r.sum())
    for j, w in enumerate(problem.penalty_factors):
        b = solution.coefficients[j]
        if not np.isfinite(w):
            assert b == 0.0
            continue
        tau = solution.lambda_ * w
        if b != 0.0:
            worst = max(worst, abs(grad[j] - tau * np.sign(b)))
        else:
            worst = max(worst, abs(grad[j]) - tau)
    return worst


@pytest.mark.parametrize(
    "z, t, expected",
    [(3.0, 1.0, 2.0), (-3.0, 1.0, -2.0), (0.5, 1.0, 0.0), (1.0, 1.0, 0.0), (2.0, 0.0, 2.0)],
)
def test_soft_threshold(z, t, expected):
    assert soft_threshold(z, t) == expected


def test_soft_threshold_rejects_negative_threshold():
    with pytest.raises(ValidationError):
        soft_threshold(1.0, -0.1)


def test_zero_at_lambda_max(rng):
    problem = _linear_problem(rng)
    top = lambda_max(problem)
    solution = solve_weighted_lasso(problem, top)
    np.testing.assert_array_equal(solution.coefficients, 0.0)
    assert solution.intercept == pytest.approx(np.mean(problem.y))
    assert solve_weighted_lasso(problem, 0.99 * top).active_set.size > 0


def test_lambda_zero_is_ols(rng):
    problem = _linear_problem(rng)
    solution = solve_weighted_lasso(problem, 0.0, tol=1e-12)
    fit = fit_ols(np.column_stack([np.ones(problem.n), problem.X]), problem.y)
    assert solution.intercept == pytest.approx(fit.coefficients[0], abs=1e-8)
    np.testing.assert_allclose(solution.coefficients, fit.coefficients[1:], atol=1e-8)


def test_unit_weights_match_sklearn(rng):
    problem = _linear_problem(rng, n=150)
    lam = 0.2 * lambda_max(problem)
    solution = solve_weighted_lasso(problem, lam, tol=1e-12)
    reference = Lasso(alpha=lam / (2 * problem.n), tol=1e-12, max_iter=100_000).fit(problem.X, problem.y)
    np.testing.assert_allclose(solution.coefficients, reference.coef_, atol=1e-6)
    assert solution.intercept == pytest.approx(reference.intercept_, abs=1e-6)


def test_two_dimensional_grid_search_oracle(rng):
    n = 50
    X = rng.standard_normal((n, 2))
    y = X @ np.array([1.0, -0.5]) + 0.5 * rng.standard_normal(n)
    problem = LassoProblem(X, y, [1.0, 2.0])
    lam = 10.0
    solution = solve_weighted_lasso(problem, lam, tol=1e-12)
    b1, b2 = np.meshgrid(np.linspace(-3, 3, 301), np.linspace(-3, 3, 301))
    fitted = X[:, 0][:, None] * b1.ravel() + X[:, 1][:, None] * b2.ravel()
    resid = y[:, None] - fitted
    resid -= resid.mean(axis=0)
    grid_obj = (resid ** 2).sum(axis=0) + lam * (np.abs(b1.ravel()) + 2.0 * np.abs(b2.ravel()))
    assert objective(problem, solution) <= grid_obj.min() + 1e-6


def test_weighted_kkt_conditions(rng):
    for seed in range(5):
        local = np.random.default_rng(seed)
        weights = np.array([0.0, 0.5, 1.0, 3.0, np.inf, 1.0])
        X = local.standard_normal((80, 6))
        y = X @ np.array([0.5, 1.0, -1.0, 0.2, 2.0, 0.0]) + local.standard_normal(80)
        problem = LassoProblem(X, y, weights)
        lam = 0.1 * lambda_max(problem)
        solution = solve_weighted_lasso(problem, lam, tol=1e-12)
        assert solution.coefficients[4] == 0.0
        assert _kkt_violation(problem, solution) <= 1e-6 * max(1.0, np.abs(X).max() * np.abs(y).sum())


def test_unpenalized_column_stays_active(rng):
    problem = _linear_problem(rng, weights=[0.0, 1.0, 1.0, 1.0])
    solution = solve_weighted_lasso(problem, 1e6)
    assert solution.coefficients[0] != 0.0
    np.testing.assert_array_equal(solution.coefficients[1:], 0.0)


def test_column_order_invariance(rng):
    problem = _linear_problem(rng, weights=[1.0, 0.5, 2.0, 1.0])
    perm = np.array([2, 0, 3, 1])
    permuted = LassoProblem(problem.X[:, perm], problem.y, problem.penalty_factors[perm])
    lam = 0.3 * lambda_max(problem)
    a = solve_weighted_lasso(problem, lam, tol=1e-12)
    b = solve_weighted_lasso(permuted, lam, tol=1e-12)
    np.testing.assert_allclose(a.coefficients[perm], b.coefficients, atol=1e-8)


def test_penalty_scale_equivariance(rng):
    problem = _linear_problem(rng, weights=[1.0, 0.5, 2.0, 1.0])
    doubled = LassoProblem(problem.X, problem.y, 2.0 * problem.penalty_factors)
    lam = 0.3 * lambda_max(problem)
    a = solve_weighted_lasso(problem, lam, tol=1e-12)
    b = solve_weighted_lasso(doubled, lam / 2.0, tol=1e-12)
    np.testing.assert_allclose(a.coefficients, b.coefficients, atol=1e-8)


def test_standardize_option_changes_penalty_scale(rng):
    X = rng.standard_normal((100, 2)) * np.array([1.0, 10.0])
    y = X @ np.array([1.0, 0.1]) + rng.standard_normal(100)
    scaled = LassoProblem(X, y, standardize=True)
    lam = 0.5 * lambda_max(scaled)
    reference = solve_weighted_lasso(LassoProblem(X / X.std(axis=0), y), lam, tol=1e-12)
    solution = solve_weighted_lasso(scaled, lam, tol=1e-12)
    np.testing.assert_allclose(solution.coefficients * X.std(axis=0), reference.coefficients, atol=1e-8)


def test_convergence_error_reports_violation(rng):
    problem = _linear_problem(rng)
    with pytest.raises(ConvergenceError) as err:
        solve_weighted_lasso(problem, 1e-3 * lambda_max(problem), max_sweeps=1)
    assert err.value.kkt_violation > 0


def test_problem_validation():
    with pytest.raises(ValidationError):
        LassoProblem(np.ones((3, 2)), np.ones(4))
    with pytest.raises(ValidationError):
        LassoProblem(np.ones((3, 2)), np.ones(3), [1.0, -1.0])
    with pytest.raises(ValidationError):
        LassoProblem(np.ones((3, 2)), np.ones(3), [1.0])
    with pytest.raises(ValidationError):
        LassoProblem(np.ones((3, 2)), [0.0, 1.0, 2.0], family="logistic")


def test_lambda_grid_shape(rng):
    problem = _linear_problem(rng)
    grid = lambda_grid(problem, 50, 1e-3)
    assert len(grid) == 50
    assert grid[0] == pytest.approx(lambda_max(problem))
    assert grid[-1] == pytest.approx(1e-3 * grid[0])
    assert np.all(np.diff(grid) < 0)
    np.testing.assert_array_equal(lambda_grid(problem, 1), [lambda_max(problem)])


def test_lambda_grid_needs_a_penalized_column(rng):
    problem = _linear_problem(rng, weights=[np.inf, 0.0, np.inf, np.inf])
    with pytest.raises(ValidationError):
        lambda_grid(problem)


def test_path_warm_start_matches_cold(rng):
    problem = _linear_problem(rng)
    grid = lambda_grid(problem, 20, 1e-2)
    path = lasso_path(problem, grid, tol=1e-12)
    cold = solve_weighted_lasso(problem, grid[-1], tol=1e-12)
    np.testing.assert_allclose(path[-1].coefficients, cold.coefficients, atol=1e-8)


def _logistic_problem(rng, n=300, beta=(1.5, -1.0, 0.0, 0.8, 0.0)):
    X = rng.standard_normal((n, len(beta)))
    p = 1 / (1 + np.exp(-(0.2 + X @ np.asarray(beta))))
    return LassoProblem(X, rng.binomial(1, p).astype(float), family="logistic")


def test_logistic_null_model(rng):
    problem = _logistic_problem(rng)
    solution = solve_logistic_lasso(problem, 10.0 * lambda_max(problem))
    np.testing.assert_array_equal(solution.coefficients, 0.0)
    ybar = problem.y.mean()
    assert solution.intercept == pytest.approx(np.log(ybar / (1 - ybar)), abs=1e-6)


def test_logistic_lambda_zero_is_unpenalized_fit(rng):
    problem = _logistic_problem(rng)
    solution = solve_logistic_lasso(problem, 0.0, tol=1e-12)
    fit = fit_logistic(np.column_stack([np.ones(problem.n), problem.X]), problem.y, tol=1e-12)
    assert solution.intercept == pytest.approx(fit.coefficients[0], abs=1e-5)
    np.testing.assert_allclose(solution.coefficients, fit.coefficients[1:], atol=1e-5)


def test_logistic_active_set_shrinks_with_lambda():
    for seed in range(3):
        problem = _logistic_problem(np.random.default_rng(seed))
        grid = lambda_grid(problem, 30, 1e-2)
        sizes = [s.active_set.size for s in lasso_path(problem, grid)]
        assert sizes[0] == 0
        assert all(a <= b for a, b in zip(sizes, sizes[1:]))


def test_solve_dispatches_on_family(rng):
    problem = _logistic_problem(rng)
    lam = 0.5 * lambda_max(problem)
    a = solve(problem, lam)
    b = solve_logistic_lasso(problem, lam)
    np.testing.assert_array_equal(a.coefficients, b.coefficients)


def test_objective_never_increases_across_sweeps(rng):
    n, p = 80, 6
    base = rng.standard_normal((n, 1))
    X = base + 0.3 * rng.standard_normal((n, p))
    y = X @ np.array([1.5, -1.0, 0.0, 0.5, 0.0, 0.0]) + rng.standard_normal(n)
    problem = LassoProblem(X, y, [1.0, 2.0, 1.0, 0.5, 1.0, 0.0])
    lam = 0.05 * lambda_max(problem)
    trace = []
    solution = solve_weighted_lasso(problem, lam, tol=1e-12, trace=trace)
    assert len(trace) == solution.sweeps > 3
    steps = np.diff(trace)
    assert np.all(steps <= 1e-12 * trace[0])
    assert trace[-1] == pytest.approx(objective(problem, solution, lam), rel=1e-10)


def test_cv_is_deterministic(rng):
    problem = _linear_problem(rng)
    a = cv_select_lambda(problem, K=5, rng_seed=11, n_lambdas=30)
    b = cv_select_lambda(problem, K=5, rng_seed=11, n_lambdas=30)
    assert a.chosen_lambda == b.chosen_lambda
    np.testing.assert_array_equal(a.cv_mse, b.cv_mse)
    assert a.chosen_index == int(np.argmin(a.cv_mse))


def test_cv_keeps_strong_signal(rng):
    n = 200
    X = rng.standard_normal((n, 3))
    y = 2.0 * X[:, 0] + rng.standard_normal(n)
    problem = LassoProblem(X, y)
    cv = cv_select_lambda(problem, K=10, rng_seed=3)
    solution = solve_weighted_lasso(problem, cv.chosen_lambda)
    assert 0 in solution.active_set


def test_cv_on_pure_noise_is_mostly_sparse():
    sparse = 0
    for seed in range(50):
        local = np.random.default_rng(seed)
        problem = LassoProblem(local.standard_normal((200, 3)), local.standard_normal(200))
        cv = cv_select_lambda(problem, K=10, rng_seed=seed, n_lambdas=50)
        sparse += solve_weighted_lasso(problem, cv.chosen_lambda).active_set.size <= 1
    assert sparse >= 40


def test_cv_argument_checks(rng):
    problem = _linear_problem(rng, n=10)
    with pytest.raises(ValidationError):
        cv_select_lambda(problem, K=1)
    with pytest.raises(ValidationError):
        cv_select_lambda(problem, K=6)
    with pytest.raises(ValidationError):
        cv_select_lambda(problem, K=2, grid=[1.0, 2.0])


def test_cv_parallel_matches_serial(rng):
    problem = _linear_problem(rng)
    serial = cv_select_lambda(problem, K=4, rng_seed=5, n_lambdas=20)
    parallel = cv_select_lambda(problem, K=4, rng_seed=5, n_lambdas=20, n_jobs=2)
    np.testing.assert_allclose(serial.cv_mse, parallel.cv_mse, rtol=1e-10)
    assert serial.chosen_index == parallel.chosen_index
