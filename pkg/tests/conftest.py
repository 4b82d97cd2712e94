import numpy as np
import pytest
from hypothesis import settings

from align_extract import (CriticConfig, build_gridworld, enumerate_transitions, epsilon_mixture,
                           estimate_behavior, generate_dataset, train_critic)

settings.register_profile("ci", max_examples=60, deadline=None)
settings.load_profile("ci")


@pytest.fixture(scope="session")
def grid5():
    return build_gridworld(5, 5, [24], slip_prob=0.1)


@pytest.fixture(scope="session")
def grid5_det():
    return build_gridworld(5, 5, [24], slip_prob=0.0)


@pytest.fixture(scope="session")
def mixed_data(grid5):
    behavior = epsilon_mixture(grid5, 0.5)
    return generate_dataset(grid5, behavior, 5000, 50, seed=3)


@pytest.fixture(scope="session")
def trained(grid5, mixed_data):
    behavior = estimate_behavior(mixed_data, grid5.n_states, grid5.n_actions)
    values = train_critic(mixed_data, behavior, CriticConfig(tau=0.7))
    return behavior, values


@pytest.fixture(scope="session")
def full_cover(grid5_det):
    ds = enumerate_transitions(grid5_det)
    return ds, estimate_behavior(ds, grid5_det.n_states, grid5_det.n_actions)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
