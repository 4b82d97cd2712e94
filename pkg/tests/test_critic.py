import numpy as np
import pytest
from hypothesis import given, strategies as st

from align_extract import (ConfigurationError, CriticConfig, TransitionDataset, ValueTables, estimate_behavior,
                           exact_policy_evaluation, expectile_loss, solve_state_expectile, train_critic)


def test_expectile_loss_examples():
    assert expectile_loss(0.0, 0.3) == 0.0
    assert expectile_loss(1.0, 0.7) == pytest.approx(0.7)
    assert expectile_loss(-2.0, 0.7) == pytest.approx(1.2)
    np.testing.assert_allclose(expectile_loss(np.array([1.0, -2.0]), 0.7), [0.7, 1.2])


def test_two_point_expectiles():
    assert solve_state_expectile([0, 1], [0.5, 0.5], 0.5) == pytest.approx(0.5, abs=1e-12)
    assert solve_state_expectile([0, 1], [0.5, 0.5], 0.7) == pytest.approx(0.7, abs=1e-12)


def test_three_point_matches_grid_scan():
    x = np.array([0.0, 1.0, 5.0])
    w = np.full(3, 1 / 3)
    grid = np.arange(0.0, 5.0 + 5e-7, 1e-6)
    loss = sum(wi * expectile_loss(xi - grid, 0.9) for xi, wi in zip(x, w))
    scan = grid[np.argmin(loss)]
    assert solve_state_expectile(x, w, 0.9) == pytest.approx(scan, abs=1e-6)


def test_expectile_validation():
    with pytest.raises(ConfigurationError):
        solve_state_expectile([0, 1], [0.5, 0.5], 1.0)
    with pytest.raises(ConfigurationError):
        solve_state_expectile([0, 1], [0.7, 0.7], 0.5)
    with pytest.raises(ConfigurationError):
        solve_state_expectile([], [], 0.5)


@given(st.lists(st.floats(-50, 50), min_size=1, max_size=8), st.floats(0.01, 0.99), st.integers(0, 999))
def test_expectile_stationary_and_in_range(values, tau, seed):
    x = np.array(values)
    w = np.random.default_rng(seed).dirichlet(np.ones(x.size))
    v = solve_state_expectile(x, w, tau)
    assert x.min() - 1e-9 <= v <= x.max() + 1e-9
    m = np.abs(tau - (x < v))
    assert abs(np.sum(w * m * (v - x))) < 10 * 1e-12 * max(1.0, np.abs(x).max())


@given(st.lists(st.floats(-10, 10), min_size=2, max_size=6), st.integers(0, 999))
def test_expectile_monotone_in_tau(values, seed):
    x = np.array(values)
    w = np.random.default_rng(seed).dirichlet(np.ones(x.size))
    vs = [solve_state_expectile(x, w, t) for t in (0.1, 0.5, 0.7, 0.9, 0.99)]
    assert all(b >= a - 1e-10 for a, b in zip(vs, vs[1:]))


def test_single_terminal_transition():
    ds = TransitionDataset(s=[0], a=[1], r=[1.0], s_next=[1], done=[True])
    b = estimate_behavior(ds, 2, 2)
    vt = train_critic(ds, b, CriticConfig(tau=0.7))
    assert vt.q[0, 1] == pytest.approx(1.0)
    assert vt.v[0] == pytest.approx(1.0)
    assert np.isnan(vt.q[0, 0]) and not vt.support_mask[0, 0]
    assert vt.v[1] == 0.0 and not vt.visited[1]


def test_tau_half_recovers_behavior_values(grid5_det, full_cover):
    ds, b = full_cover
    vt = train_critic(ds, b, CriticConfig(tau=0.5))
    np.testing.assert_allclose(vt.v, exact_policy_evaluation(grid5_det, b.probs), atol=1e-4)


def test_tau_near_one_approaches_support_max(full_cover):
    ds, b = full_cover
    vt = train_critic(ds, b, CriticConfig(tau=0.99))
    gap = np.where(vt.support_mask, vt.q, -np.inf).max(axis=1)[vt.visited] - vt.v[vt.visited]
    assert np.all(gap >= -1e-12) and np.all(gap <= 1e-2)


def test_values_monotone_across_tau(full_cover):
    ds, b = full_cover
    vs = [train_critic(ds, b, CriticConfig(tau=t)).v for t in (0.5, 0.7, 0.9, 0.99)]
    for lo, hi in zip(vs, vs[1:]):
        assert np.all(hi >= lo - 1e-9)


def test_converged_tables_consistent(mixed_data, trained):
    b, vt = trained
    assert vt.residual < 1e-9
    lo = np.where(vt.support_mask, vt.q, np.inf).min(axis=1)
    hi = np.where(vt.support_mask, vt.q, -np.inf).max(axis=1)
    vis = vt.visited
    assert np.all(vt.v[vis] >= lo[vis] - 1e-9) and np.all(vt.v[vis] <= hi[vis] + 1e-9)
    # one more Bellman regression sweep barely moves Q
    cont = ~mixed_data.done
    target = mixed_data.r + vt.gamma * cont * vt.v[mixed_data.s_next]
    for s, a in zip(*np.nonzero(vt.support_mask)):
        sel = (mixed_data.s == s) & (mixed_data.a == a)
        assert abs(target[sel].mean() - vt.q[s, a]) < 1e-8


def test_q_bounded_by_reward_range(mixed_data, trained):
    _, vt = trained
    r = mixed_data.r
    bound_lo, bound_hi = min(r.min(), 0) / (1 - vt.gamma), max(r.max(), 0) / (1 - vt.gamma)
    q = vt.q[vt.support_mask]
    assert np.all(q >= bound_lo - 1e-9) and np.all(q <= bound_hi + 1e-9)


def test_polyak_reaches_same_fixed_point(mixed_data, trained):
    b, exact = trained
    slow = train_critic(mixed_data, b, CriticConfig(tau=0.7, polyak=0.5))
    np.testing.assert_allclose(slow.v, exact.v, atol=1e-6)
    assert slow.sweeps > exact.sweeps


def test_sweep_cap_raises(mixed_data, trained):
    from align_extract import NumericError
    b, _ = trained
    with pytest.raises(NumericError, match="residual"):
        train_critic(mixed_data, b, CriticConfig(max_sweeps=3))


def test_critic_config_validation():
    for kwargs in (dict(tau=0.0), dict(gamma=1.0), dict(tol=0.0), dict(max_sweeps=0), dict(polyak=2.0)):
        with pytest.raises(ConfigurationError):
            CriticConfig(**kwargs)


def test_empty_dataset_rejected():
    ds = TransitionDataset(s=[], a=[], r=[], s_next=[], done=[])
    with pytest.raises(ConfigurationError):
        train_critic(ds, estimate_behavior(ds, 2, 2), CriticConfig())


def test_json_round_trip(trained):
    _, vt = trained
    back = ValueTables.from_json(vt.to_json())
    np.testing.assert_array_equal(back.support_mask, vt.support_mask)
    np.testing.assert_array_equal(np.isnan(back.q), np.isnan(vt.q))
    np.testing.assert_allclose(back.q[vt.support_mask], vt.q[vt.support_mask], rtol=0, atol=0)
    assert back.tau == vt.tau and back.gamma == vt.gamma
    with pytest.raises(ConfigurationError):
        ValueTables.from_dict({"q": []})
