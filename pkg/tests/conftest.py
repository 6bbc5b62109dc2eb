import numpy as np
import pytest

from services.env_service import ExpertMixture, PlaneEnvironment
from utils.config import parse_config

TINY_OVERRIDES = {
    'seed': 7,
    'env.n_per_mode': 2,
    'env.horizon': 10,
    'model.policy_hidden': [8],
    'model.critic_hidden': [8],
    'model.posterior_hidden': [8],
    'model.baseline_hidden': [8],
    'optim.baseline_steps': 2,
    'training.iters': 2,
    'training.bc_epochs': 2,
    'training.rollouts_per_iter': 4,
    'training.batch_size': 16,
    'training.critic_steps': 2,
    'training.checkpoint_every': 1,
}

TINY_TOML = """\
seed = 7

[env]
n_per_mode = 2
horizon = 10

[model]
policy_hidden = [8]
critic_hidden = [8]
posterior_hidden = [8]
baseline_hidden = [8]

[optim]
baseline_steps = 2

[training]
iters = 2
bc_epochs = 2
rollouts_per_iter = 4
batch_size = 16
critic_steps = 2
checkpoint_every = 1
"""


@pytest.fixture
def tiny_config():
    return parse_config(overrides=TINY_OVERRIDES)


@pytest.fixture
def tiny_config_file(tmp_path):
    path = tmp_path / 'tiny.toml'
    path.write_text(TINY_TOML, encoding='utf-8')
    return path


@pytest.fixture
def env():
    return PlaneEnvironment(ExpertMixture.concentric(), 0.05)


@pytest.fixture
def demos(env):
    return env.generate_demos(n_per_mode=2, horizon=10, seed=11)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def one_hot_rows(indices, num_codes=3):
    codes = np.zeros((len(indices), num_codes))
    codes[np.arange(len(indices)), indices] = 1.0
    return codes
