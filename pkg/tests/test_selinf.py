import numpy as np
import pytest
from scipy import integrate, stats

from emlasso.errors import DegenerateTruncationError, InfeasibleSelectionError, ValidationError
from emlasso.lassocd import LassoProblem, lambda_max, solve_weighted_lasso
from emlasso.selinf import (
    Polyhedron,
    selection_polyhedron,
    selective_ci,
    selective_intervals,
    selective_pvalue,
    truncation_interval,
    truncnorm_cdf,
)


def _quad_cdf(x, mu, sigma2, lo, hi):
    sd = np.sqrt(sigma2)
    pdf = lambda t: stats.norm.pdf(t, mu, sd)
    num, _ = integrate.quad(pdf, lo, x, epsabs=0, epsrel=1e-13, limit=200)
    den, _ = integrate.quad(pdf, lo, hi, epsabs=0, epsrel=1e-13, limit=200)
    return num / den


@pytest.mark.parametrize(
    "x, mu, sigma2, lo, hi",
    [
        (9.0, 0.0, 1.0, 8.5, 10.0),
        (-9.0, 0.0, 1.0, -10.0, -8.5),
        (0.3, 0.0, 1.0, -1.0, 2.0),
        (1.2, 0.5, 4.0, 1.0, 6.0),
        (-20.5, 0.0, 1.0, -21.0, -20.0),
    ],
)
def test_truncnorm_cdf_matches_quadrature(x, mu, sigma2, lo, hi):
    assert truncnorm_cdf(x, mu, sigma2, lo, hi) == pytest.approx(_quad_cdf(x, mu, sigma2, lo, hi), rel=1e-8)


def test_truncnorm_cdf_untruncated_is_normal_cdf():
    assert truncnorm_cdf(1.0, 0.0, 1.0, -np.inf, np.inf) == pytest.approx(stats.norm.cdf(1.0), abs=1e-14)


def test_truncnorm_cdf_clamps_outside_points():
    value, flag = truncnorm_cdf(-3.0, 0.0, 1.0, -1.0, 1.0, return_flag=True)
    assert value == 0.0 and flag
    value, flag = truncnorm_cdf(3.0, 0.0, 1.0, -1.0, 1.0, return_flag=True)
    assert value == 1.0 and flag
    value, flag = truncnorm_cdf(0.0, 0.0, 1.0, -1.0, 1.0, return_flag=True)
    assert value == pytest.approx(0.5) and not flag


def test_truncnorm_cdf_is_vectorized():
    mus = np.array([-1.0, 0.0, 1.0])
    values = truncnorm_cdf(0.5, mus, 1.0, 0.0, 3.0)
    assert values.shape == (3,)
    assert np.all(np.diff(values) < 0)


def test_truncnorm_cdf_argument_checks():
    with pytest.raises(ValidationError):
        truncnorm_cdf(0.0, 0.0, 0.0, -1.0, 1.0)
    with pytest.raises(ValidationError):
        truncnorm_cdf(0.0, 0.0, 1.0, 1.0, 1.0)


def test_untruncated_interval_is_wald():
    lo, hi = selective_ci(1.3, 4.0, -np.inf, np.inf, alpha=0.05)
    z = stats.norm.ppf(0.975)
    assert lo == pytest.approx(1.3 - 2.0 * z, abs=1e-6)
    assert hi == pytest.approx(1.3 + 2.0 * z, abs=1e-6)


@pytest.mark.parametrize("alpha", [0.0, 1.0, 1.5])
def test_alpha_outside_unit_interval_is_rejected(alpha):
    with pytest.raises(ValidationError):
        selective_ci(0.7, 1.0, -np.inf, np.inf, alpha=alpha)


def test_alpha_near_one_collapses_to_the_estimate():
    lo, hi = selective_ci(0.7, 1.0, -np.inf, np.inf, alpha=1.0 - 1e-6)
    assert lo <= 0.7 <= hi
    assert hi - lo < 1e-5


def test_heavily_truncated_interval_matches_grid_inversion():
    est, sigma2, lo, hi = 1.5, 1.0, 1.0, 5.0
    mus = np.linspace(est - 20.0, est + 20.0, 1_000_001)
    F = truncnorm_cdf(est, mus, sigma2, lo, hi)
    lower_grid = mus[np.flatnonzero(F >= 0.975)].max()
    upper_grid = mus[np.flatnonzero(F <= 0.025)].min()
    ci_lo, ci_hi = selective_ci(est, sigma2, lo, hi, alpha=0.05)
    assert ci_lo == pytest.approx(lower_grid, abs=1e-4)
    assert ci_hi == pytest.approx(upper_grid, abs=1e-4)


def test_interval_widens_as_alpha_shrinks():
    wide = selective_ci(1.5, 1.0, 1.0, 5.0, alpha=0.01)
    narrow = selective_ci(1.5, 1.0, 1.0, 5.0, alpha=0.1)
    assert wide[0] < narrow[0] and narrow[1] < wide[1]


def test_ci_argument_checks():
    with pytest.raises(ValidationError):
        selective_ci(0.0, 1.0, -1.0, 1.0, alpha=0.0)
    with pytest.raises(ValidationError):
        selective_ci(2.0, 1.0, -1.0, 1.0)
    with pytest.raises(ValidationError):
        selective_ci(0.0, -1.0, -1.0, 1.0)


def test_pvalues():
    assert selective_pvalue(0.0, 1.0, -2.0, 2.0) == pytest.approx(1.0)
    assert selective_pvalue(1.959963984540054, 1.0, -np.inf, np.inf) == pytest.approx(0.05, abs=1e-6)
    expected = 2.0 * (1.0 - _quad_cdf(9.0, 0.0, 1.0, 8.5, 10.0))
    assert selective_pvalue(9.0, 1.0, 8.5, 10.0) == pytest.approx(expected, rel=1e-6)


def test_truncation_interval_single_constraint():
    poly = Polyhedron(np.array([[1.0, 0.0, 0.0]]), np.array([2.0]))
    lo, hi = truncation_interval(poly, [1.0, 0.0, 0.0], [1.0, 0.0, 0.0])
    assert lo == -np.inf
    assert hi == pytest.approx(2.0)


def test_truncation_interval_without_constraints():
    poly = Polyhedron(np.zeros((0, 3)), np.zeros(0))
    assert truncation_interval(poly, [1.0, 2.0, 3.0], [1.0, 0.0, 0.0]) == (-np.inf, np.inf)


def test_truncation_interval_rejects_infeasible_response():
    poly = Polyhedron(np.array([[1.0, 0.0]]), np.array([0.0]))
    with pytest.raises(InfeasibleSelectionError):
        truncation_interval(poly, [1.0, 0.0], [1.0, 1.0])


def test_truncation_interval_degenerate():
    poly = Polyhedron(np.array([[1.0], [-1.0]]), np.array([1.0, -1.0]))
    with pytest.raises(DegenerateTruncationError):
        truncation_interval(poly, [1.0], [1.0])


def test_truncation_interval_contains_observed_contrast(rng):
    for _ in range(20):
        A = rng.standard_normal((6, 4))
        y = rng.standard_normal(4)
        b = A @ y + rng.uniform(0.1, 1.0, 6)
        eta = rng.standard_normal(4)
        lo, hi = truncation_interval(Polyhedron(A, b), y, eta)
        assert lo < eta @ y < hi


def test_single_orthonormal_column_polyhedron():
    n = 20
    x = np.arange(n, dtype=float)
    x -= x.mean()
    x /= np.linalg.norm(x)
    V = np.column_stack([np.ones(n), x])
    lam = 0.4
    poly = selection_polyhedron(V, lam, [0.0, 1.0], [1], [1.0])
    assert poly.n_constraints == 1
    np.testing.assert_allclose(poly.a_mat[0], -x, atol=1e-12)
    assert poly.b[0] == pytest.approx(-lam / 2.0)

    empty = selection_polyhedron(V, lam, [0.0, 1.0], [], [])
    y = 0.1 * x + 3.0
    assert empty.contains(y)
    assert not empty.contains(y + x)


def test_polyhedron_describes_the_selection_event():
    checked = 0
    for seed in range(20):
        local = np.random.default_rng(seed)
        n, p = 30, 4
        V = local.standard_normal((n, p))
        weights = local.uniform(0.5, 2.0, p)
        y = V @ np.array([1.0, 0.0, -0.7, 0.0]) + local.standard_normal(n)
        problem = LassoProblem(V, y, weights)
        lam = 0.3 * lambda_max(problem)
        V_full = np.column_stack([np.ones(n), V])
        w_full = np.concatenate([[0.0], weights])
        original = solve_weighted_lasso(problem, lam, tol=1e-12)
        reference = selection_polyhedron(V_full, lam, w_full, original.active_set + 1, original.signs)
        for _ in range(100):
            y_new = y + 0.3 * local.standard_normal(n)
            solution = solve_weighted_lasso(LassoProblem(V, y_new, weights), lam, tol=1e-12)
            model = selection_polyhedron(V_full, lam, w_full, solution.active_set + 1, solution.signs)
            assert model.contains(y_new, tol=1e-7)
            slack = reference.slack(y_new)
            if np.min(np.abs(slack)) < 1e-7:
                continue
            same = np.array_equal(solution.active_set, original.active_set) and np.array_equal(
                solution.signs, original.signs
            )
            assert same == bool(np.all(slack > 0))
            checked += 1
    assert checked > 1500


def test_infinite_weight_columns_are_ignored():
    rng = np.random.default_rng(4)
    V = np.column_stack([np.ones(25), rng.standard_normal((25, 3))])
    poly = selection_polyhedron(V, 1.0, [0.0, 1.0, np.inf, 1.0], [], [])
    assert poly.n_constraints == 4


def test_selective_intervals_shape_and_pivot_consistency(rng):
    n = 200
    V = rng.binomial(1, 0.5, size=(n, 3)).astype(float)
    y = 1.0 + 2.0 * V[:, 0] + rng.standard_normal(n)
    weights = np.ones(3)
    lam = 0.2 * lambda_max(LassoProblem(V, y, weights))
    solution = solve_weighted_lasso(LassoProblem(V, y, weights), lam, tol=1e-12)
    intervals = selective_intervals(V, y, lam, weights, solution.active_set, solution.signs, 1.0,
                                    names=["a", "b", "c"])
    assert [iv.name for iv in intervals] == [["a", "b", "c"][j] for j in solution.active_set]
    first = intervals[0]
    assert first.name == "a"
    assert first.nu_lo < first.estimate < first.nu_hi
    assert first.ci_lo < first.estimate < first.ci_hi
    assert truncnorm_cdf(first.estimate, first.ci_lo, first.sigma_star2, first.nu_lo, first.nu_hi) == pytest.approx(0.975, abs=1e-6)
    assert selective_intervals(V, y, lam, weights, [], [], 1.0) == []
    with pytest.raises(ValidationError):
        selective_intervals(V, y, lam, weights, solution.active_set, solution.signs, 0.0)


def test_pivot_is_uniform_under_repeated_sampling():
    rng = np.random.default_rng(123)
    n, p = 40, 3
    V = rng.standard_normal((n, p))
    beta = np.array([1.0, 0.0, 0.0])
    mean = 0.5 + V @ beta
    weights = np.ones(p)
    lam = 20.0
    pivots = []
    for _ in range(2000):
        y = mean + rng.standard_normal(n)
        solution = solve_weighted_lasso(LassoProblem(V, y, weights), lam, tol=1e-12)
        if solution.active_set.size == 0:
            continue
        interval = selective_intervals(V, y, lam, weights, solution.active_set, solution.signs, 1.0)[0]
        target = float(interval.eta @ mean)
        pivots.append(truncnorm_cdf(interval.estimate, target, interval.sigma_star2, interval.nu_lo, interval.nu_hi))
    assert len(pivots) > 500
    assert stats.kstest(pivots, "uniform").pvalue > 0.01
