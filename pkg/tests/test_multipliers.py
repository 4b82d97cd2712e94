import numpy as np
import pytest
from hypothesis import given, strategies as st

from align_extract import (LINEAR, LOG, ConfigurationError, InfeasibleError, MultiplierTable, Regularizer,
                           multiplier_residuals, solve_beta_log, solve_multiplier_table, solve_multipliers,
                           solve_multipliers_gradient)
from align_extract.multipliers import CLAMPED, CONVERGED, INFEASIBLE, UNVISITED, alpha_from_beta_log, tilted_mean

BETA_STAR = -np.log(7 / 3)
UNIFORM2 = np.array([0.5, 0.5])
Q01 = np.array([0.0, 1.0])


def feasible_instance(seed, n=None):
    rng = np.random.default_rng(seed)
    n = n or int(rng.integers(2, 9))
    mu = 0.8 * rng.dirichlet(np.ones(n)) + 0.2 / n
    q = rng.normal(size=n)
    v = q.min() + rng.uniform(0.15, 0.85) * (q.max() - q.min())
    return q, mu, float(v)


@pytest.mark.parametrize("reg", [LOG, LINEAR])
def test_g_inverts_h_prime(reg):
    x = np.array([0.1, 0.5, 1.0, 2.0, 10.0])
    np.testing.assert_allclose(reg.g(reg.h_prime(x)), x, atol=1e-12)
    assert reg.f(1.0) == 0.0
    assert reg.h_prime(1.0) == 1.0


def test_linear_truncation_threshold():
    assert LINEAR.h_prime(0.0) == -1.0
    assert LINEAR.g(-1.0) == 0.0


def test_regularizer_kind_validated():
    with pytest.raises(ConfigurationError):
        Regularizer("entropy")


def test_alpha_examples():
    assert alpha_from_beta_log(0.0, Q01, UNIFORM2) == pytest.approx(-1.0)
    assert alpha_from_beta_log(0.6, [2.5], [1.0]) == pytest.approx(-0.6 * 2.5 - 1.0)
    alpha = alpha_from_beta_log(BETA_STAR, Q01, UNIFORM2)
    # substitution: E_mu[exp(-alpha - beta Q - 1)] = 1
    assert UNIFORM2 @ np.exp(-alpha - BETA_STAR * Q01 - 1.0) == pytest.approx(1.0, abs=1e-12)


def test_beta_examples():
    assert solve_beta_log([2.0, 2.0], UNIFORM2, 2.0) == 0.0
    assert solve_beta_log(Q01, UNIFORM2, 0.5) == pytest.approx(0.0, abs=1e-10)
    beta = solve_beta_log(Q01, UNIFORM2, 0.7)
    assert beta == pytest.approx(BETA_STAR, abs=1e-10)
    alpha = alpha_from_beta_log(beta, Q01, UNIFORM2)
    np.testing.assert_allclose(UNIFORM2 * np.exp(-alpha - beta * Q01 - 1.0), [0.3, 0.7], atol=1e-10)


@pytest.mark.parametrize("v", [-0.1, 0.0, 1.0, 1.5])
def test_beta_outside_hull_infeasible(v):
    with pytest.raises(InfeasibleError):
        solve_beta_log(Q01, UNIFORM2, v)


def test_single_action_mismatch_infeasible():
    with pytest.raises(InfeasibleError):
        solve_beta_log([1.0], [1.0], 0.5)


def test_beta_unique_from_random_brackets():
    q, mu, v = feasible_instance(3)
    rng = np.random.default_rng(0)
    ref = solve_beta_log(q, mu, v)
    for _ in range(100):
        bracket = rng.uniform(-50, 50, size=2)
        assert solve_beta_log(q, mu, v, bracket=bracket) == pytest.approx(ref, abs=1e-8)


@given(st.integers(0, 10_000), st.floats(-3, 3), st.floats(0.01, 5))
def test_tilted_mean_strictly_decreasing(seed, b1, gap):
    q, mu, _ = feasible_instance(seed)
    assert tilted_mean(b1, q, mu) > tilted_mean(b1 + gap, q, mu)


@given(st.integers(0, 10_000), st.floats(-300, 300), st.floats(0, 50))
def test_tilted_mean_never_increases(seed, b1, gap):
    # far out the tilt saturates at min/max Q, so only weak monotonicity survives rounding
    q, mu, _ = feasible_instance(seed)
    assert tilted_mean(b1, q, mu) >= tilted_mean(b1 + gap, q, mu)


def test_extreme_tilt_stays_finite():
    q = np.array([0.0, 1.0, 2.0])
    mu = np.array([0.2, 0.3, 0.5])
    for beta in (-350.0, 350.0):
        assert np.isfinite(tilted_mean(beta, q, mu))
        assert np.isfinite(alpha_from_beta_log(beta, q, mu))
    # the worked instance at a large scale needs |beta Q| ~ 850 during bracketing
    fit = solve_multipliers(1000 * Q01, UNIFORM2, 700.0)
    assert fit.status == CONVERGED
    assert fit.beta == pytest.approx(BETA_STAR / 1000, rel=1e-9)
    fit = solve_multipliers(q, mu, 2.0 - 1e-9)
    assert fit.status == CONVERGED and np.isfinite(fit.alpha) and fit.beta < -10


def test_residual_examples():
    beta = solve_beta_log(Q01, UNIFORM2, 0.7)
    alpha = alpha_from_beta_log(beta, Q01, UNIFORM2)
    nr, ar = multiplier_residuals(alpha, beta, Q01, UNIFORM2, 0.7)
    assert abs(nr) < 1e-10 and abs(ar) < 1e-10
    nr, _ = multiplier_residuals(alpha + 1.0, beta, Q01, UNIFORM2, 0.7)
    assert nr == pytest.approx(np.exp(-1.0) - 1.0)
    q = np.array([0.3, -1.2, 4.0])
    mu = np.full(3, 1 / 3)
    nr, ar = multiplier_residuals(-1.0, 0.0, q, mu, 0.25)
    assert nr == pytest.approx(0.0, abs=1e-15) and ar == pytest.approx(mu @ q - 0.25)


def test_gradient_worked_instance():
    fit = solve_multipliers_gradient(Q01, UNIFORM2, 0.7, LOG)
    assert fit.status == CONVERGED
    assert fit.beta == pytest.approx(BETA_STAR, abs=1e-8)
    assert fit.alpha == pytest.approx(alpha_from_beta_log(BETA_STAR, Q01, UNIFORM2), abs=1e-8)


def test_gradient_behavior_mean_needs_no_tilt():
    q, mu, _ = feasible_instance(5)
    fit = solve_multipliers_gradient(q, mu, float(mu @ q), LOG)
    assert abs(fit.beta) < 1e-4 and fit.alpha == pytest.approx(-1.0, abs=1e-4)


@pytest.mark.parametrize("seed", range(15))
def test_gradient_agrees_with_bisection(seed):
    q, mu, v = feasible_instance(seed)
    fit = solve_multipliers_gradient(q, mu, v, LOG)
    assert fit.status == CONVERGED
    assert fit.beta == pytest.approx(solve_beta_log(q, mu, v), abs=1e-4)


@pytest.mark.parametrize("seed", range(10))
def test_linear_residuals_small(seed):
    q, mu, v = feasible_instance(seed)
    fit = solve_multipliers(q, mu, v, LINEAR)
    assert fit.status == CONVERGED
    assert abs(fit.norm_residual) < 1e-9 and abs(fit.align_residual) < 1e-9


def test_linear_truncation_gives_exact_zeros():
    q = np.array([0.0, 1.0, 2.0, 3.0])
    mu = np.full(4, 0.25)
    fit = solve_multipliers(q, mu, 2.7, LINEAR)
    w = np.maximum(LINEAR.g(-fit.alpha - fit.beta * q), 0.0)
    assert fit.status == CONVERGED
    assert np.any(w == 0.0) and np.all(w[-1:] > 0)


def test_gradient_reports_clamped_and_infeasible():
    q, mu, v = feasible_instance(7)
    fit = solve_multipliers_gradient(q, mu, v, LOG, max_iters=2)
    assert fit.status == CLAMPED and fit.iterations == 2
    assert solve_multipliers_gradient(q, mu, q.max() + 1.0).status == INFEASIBLE
    assert solve_multipliers(q, mu, q.max() + 1.0).status == INFEASIBLE
    with pytest.raises(ConfigurationError):
        solve_multipliers_gradient(q, mu, v, lr=0.0)


def test_degenerate_state_is_aligned():
    fit = solve_multipliers([1.5, 1.5, 1.5], np.full(3, 1 / 3), 1.5, LINEAR)
    assert fit.status == CONVERGED and (fit.alpha, fit.beta) == (-1.0, 0.0)


def test_zero_mu_entries_dropped():
    a = solve_multipliers([0.0, 1.0, 9.0], [0.5, 0.5, 0.0], 0.7)
    assert a.beta == pytest.approx(BETA_STAR, abs=1e-10)


def test_fit_unpacks_as_pair():
    alpha, beta = solve_multipliers(Q01, UNIFORM2, 0.7)
    assert beta == pytest.approx(BETA_STAR, abs=1e-10)


def test_table_over_critic(trained):
    behavior, values = trained
    table = solve_multiplier_table(values, behavior, LOG)
    assert isinstance(table, MultiplierTable)
    assert table.status[24] == UNVISITED
    done = [s for s, st_ in enumerate(table.status) if st_ == CONVERGED]
    assert len(done) >= 20
    assert np.all(np.abs(table.residual_align[done]) < 1e-8)
    hist = table.beta_sign_histogram()
    assert sum(hist.values()) == len(done)
    doc = table.to_dict()
    assert doc["regularizer"] == "log" and len(doc["status"]) == 25
