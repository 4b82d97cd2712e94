import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from align_extract import (ConfigurationError, CorruptionConfig, DatasetFormatError, TransitionDataset, corrupt,
                           enumerate_transitions, epsilon_mixture, estimate_behavior, generate_dataset,
                           uniform_policy)
from align_extract.dataset import CORRUPTION_KINDS


def test_single_transition_starts_from_d0(grid5):
    ds = generate_dataset(grid5, uniform_policy(25, 4), 1, 50, seed=0)
    assert len(ds) == 1
    assert grid5.initial_dist[ds.s[0]] > 0


def test_same_seed_identical_bytes(grid5):
    pi = epsilon_mixture(grid5, 0.3)
    a = generate_dataset(grid5, pi, 300, 20, seed=11).to_jsonl()
    b = generate_dataset(grid5, pi, 300, 20, seed=11).to_jsonl()
    assert a == b


def test_different_seeds_differ(grid5):
    pi = uniform_policy(25, 4)
    a = generate_dataset(grid5, pi, 100, 20, seed=1)
    b = generate_dataset(grid5, pi, 100, 20, seed=2)
    assert np.any(a.s != b.s) or np.any(a.a != b.a)


def test_rejects_empty_request(grid5):
    with pytest.raises(ConfigurationError, match="n_transitions must be ≥ 1"):
        generate_dataset(grid5, uniform_policy(25, 4), 0, 10, seed=0)


def test_episode_structure(grid5, mixed_data):
    ds = mixed_data
    np.testing.assert_array_equal(ds.done, grid5.terminal[ds.s_next])
    np.testing.assert_array_equal(ds.r, grid5.reward[ds.s, ds.a])
    # consecutive records chain unless an episode ended
    cont = ~ds.done[:-1] & (ds.s[1:] == ds.s_next[:-1])
    assert cont.mean() > 0.8
    assert not ds.done[~grid5.terminal[ds.s_next]].any()


def test_action_frequencies_binomial(grid5):
    pi = epsilon_mixture(grid5, 0.5)
    ds = generate_dataset(grid5, pi, 20_000, 50, seed=5)
    counts = np.bincount(ds.s, minlength=25)
    s = int(np.argmax(counts))
    n = counts[s]
    freq = np.bincount(ds.a[ds.s == s], minlength=4) / n
    se = np.sqrt(pi[s] * (1 - pi[s]) / n)
    assert np.all(np.abs(freq - pi[s]) <= 3 * se + 1e-12)


def _dataset_from_counts(counts):
    s, a = [], []
    for action, c in enumerate(counts):
        s += [0] * c
        a += [action] * c
    return TransitionDataset(s=s, a=a, r=np.zeros(len(s)), s_next=[1] * len(s), done=[False] * len(s))


def test_estimate_behavior_examples():
    ds = _dataset_from_counts([3, 1, 0, 0])
    b = estimate_behavior(ds, 2, 4)
    np.testing.assert_allclose(b.probs[0], [0.75, 0.25, 0, 0])
    np.testing.assert_allclose(b.probs[1], [0.25] * 4)
    np.testing.assert_array_equal(b.visited, [True, False])
    b1 = estimate_behavior(ds, 2, 4, smoothing=1.0)
    np.testing.assert_allclose(b1.probs[0], [4 / 8, 2 / 8, 1 / 8, 1 / 8])
    with pytest.raises(ConfigurationError):
        estimate_behavior(ds, 2, 4, smoothing=-1)


@given(st.lists(st.integers(0, 6), min_size=4, max_size=4).filter(lambda c: sum(c) > 0), st.floats(0.01, 5))
def test_smoothed_rows_strictly_positive(counts, k):
    b = estimate_behavior(_dataset_from_counts(counts), 2, 4, smoothing=k)
    np.testing.assert_allclose(b.probs.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(b.probs > 0)


def test_empirical_support_positive(mixed_data):
    b = estimate_behavior(mixed_data, 25, 4)
    assert np.all(b.probs[mixed_data.s, mixed_data.a] > 0)
    np.testing.assert_allclose(b.probs.sum(axis=1), 1.0, atol=1e-9)


def test_enumerate_transitions_is_balanced(grid5_det):
    ds = enumerate_transitions(grid5_det, repeats=2)
    assert len(ds) == 2 * 24 * 4
    b = estimate_behavior(ds, 25, 4)
    np.testing.assert_allclose(b.probs[:24], 0.25)
    assert ds.coverage() == pytest.approx(24 / 25)


def test_jsonl_round_trip(mixed_data):
    text = mixed_data.to_jsonl()
    lines = text.splitlines()
    assert len(lines) == len(mixed_data) + 1 and '"meta"' in lines[0]
    back = TransitionDataset.from_jsonl(text)
    for col in ("s", "a", "r", "s_next", "done"):
        np.testing.assert_array_equal(getattr(back, col), getattr(mixed_data, col))
    assert back.source_mdp_hash == mixed_data.source_mdp_hash
    assert TransitionDataset.from_jsonl("\n".join(lines[1:])).n_states is None


@pytest.mark.parametrize("bad,line", [('{"s": 0, "a": 1, "r": 0.5, "s_next": 2', 3),
                                      ('{"s": 0, "a": 1, "r": 0.5, "done": false}', 3),
                                      ('{"s": 0.5, "a": 1, "r": 0.5, "s_next": 2, "done": false}', 3),
                                      ('[1, 2]', 3)])
def test_jsonl_errors_carry_line_numbers(mixed_data, bad, line):
    lines = mixed_data.to_jsonl().splitlines()[:4]
    lines[line - 1] = bad
    with pytest.raises(DatasetFormatError, match=f"line {line}:") as info:
        TransitionDataset.from_jsonl("\n".join(lines))
    assert info.value.lineno == line


def test_columns_validated():
    with pytest.raises(ConfigurationError):
        TransitionDataset(s=[0, 1], a=[0], r=[0.0], s_next=[0], done=[False])
    with pytest.raises(ConfigurationError):
        TransitionDataset(s=[5], a=[0], r=[0.0], s_next=[0], done=[False], n_states=3)


# corruption


@pytest.fixture(scope="module")
def small(grid5):
    return generate_dataset(grid5, epsilon_mixture(grid5, 0.5), 100, 50, seed=9)


@pytest.mark.parametrize("kind", CORRUPTION_KINDS)
def test_zero_rate_is_identity(grid5, small, kind):
    out = corrupt(small, grid5, CorruptionConfig(kind, rate=0.0, scale=0.5, seed=1))
    assert out.to_jsonl() == small.to_jsonl()


@pytest.mark.parametrize("kind", CORRUPTION_KINDS)
def test_count_contract(grid5, small, kind):
    out = corrupt(small, grid5, CorruptionConfig(kind, rate=0.5, scale=0.5, seed=1))
    assert len(out) == len(small)
    kinds = ("observation", "action", "reward", "dynamics") if kind == "mixed" else (kind,)
    for k in kinds:
        assert len(out.corrupted[k]) == 50 and len(set(out.corrupted[k].tolist())) == 50
    changed = ((out.s != small.s) | (out.a != small.a) | (out.r != small.r) | (out.s_next != small.s_next))
    touched = np.zeros(len(small), dtype=bool)
    for idx in out.corrupted.values():
        touched[idx] = True
    assert not changed[~touched].any()
    if kind in ("action", "reward"):
        assert changed.sum() == 50
    # done flags and ordering never move
    np.testing.assert_array_equal(out.done, small.done)


def test_reward_attack_range(grid5, small):
    out = corrupt(small, grid5, CorruptionConfig("reward", 0.5, 0.5, seed=4))
    r = out.r[out.corrupted["reward"]]
    assert np.all((r >= -15) & (r <= 15))
    assert r.min() < -5 and r.max() > 5


def test_action_attack_always_changes_action(grid5, small):
    out = corrupt(small, grid5, CorruptionConfig("action", 1.0, seed=2))
    assert np.all(out.a != small.a)
    assert np.all((out.a >= 0) & (out.a < 4))


def test_coordinate_attacks_stay_on_grid_and_near(grid5, small):
    for kind, col in (("observation", "s"), ("dynamics", "s_next")):
        out = corrupt(small, grid5, CorruptionConfig(kind, 1.0, 0.5, seed=3))
        new, old = getattr(out, col), getattr(small, col)
        assert np.all((new >= 0) & (new < 25))
        std = grid5.state_coords[old].std(axis=0)
        jump = np.abs(grid5.state_coords[new] - grid5.state_coords[old])
        # snapping moves at most half a cell beyond the noise bound
        assert np.all(jump <= 0.5 * std + 0.5 + 1e-9)


def test_coordinate_attack_needs_coords(grid5, small):
    from align_extract import Mdp
    bare = Mdp(grid5.transition, grid5.reward, grid5.gamma, grid5.initial_dist)
    with pytest.raises(ConfigurationError):
        corrupt(small, bare, CorruptionConfig("observation", 0.5))


def test_corruption_deterministic_and_seeded(grid5, small):
    cfg = CorruptionConfig("mixed", 0.3, 0.5, seed=8)
    assert corrupt(small, grid5, cfg).to_jsonl() == corrupt(small, grid5, cfg).to_jsonl()
    other = corrupt(small, grid5, CorruptionConfig("mixed", 0.3, 0.5, seed=9))
    assert other.to_jsonl() != corrupt(small, grid5, cfg).to_jsonl()


@given(st.floats(0, 1), st.integers(1, 2000))
def test_n_corrupted_is_ceiling(rate, n):
    k = CorruptionConfig("reward", rate).n_corrupted(n)
    assert k == min(n, math.ceil(round(rate * n, 9)))
    assert 0 <= k <= n


def test_n_corrupted_no_float_roundup():
    assert CorruptionConfig("reward", 0.3).n_corrupted(10) == 3
    assert CorruptionConfig("reward", 0.5).n_corrupted(101) == 51


def test_corruption_config_validation():
    with pytest.raises(ConfigurationError):
        CorruptionConfig("laser")
    with pytest.raises(ConfigurationError):
        CorruptionConfig("reward", rate=1.5)
    with pytest.raises(ConfigurationError):
        CorruptionConfig("reward", scale=-1)


def test_corruption_indices_survive_jsonl(grid5, small):
    out = corrupt(small, grid5, CorruptionConfig("mixed", 0.2, 0.5, seed=5))
    back = TransitionDataset.from_jsonl(out.to_jsonl())
    assert set(back.corrupted) == set(out.corrupted)
    for k in out.corrupted:
        np.testing.assert_array_equal(back.corrupted[k], out.corrupted[k])
