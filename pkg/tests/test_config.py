import pytest

from utils.config import TrainConfig, parse_config
from utils.errors import ConfigError


def test_empty_config_gives_defaults(tmp_path):
    path = tmp_path / 'empty.toml'
    path.write_text('', encoding='utf-8')
    config = parse_config(path)
    assert config == TrainConfig()
    assert config.training.lambda1 == 0.1
    assert config.training.gamma == 0.99
    assert config.training.objective == 'wgan'
    assert config.env.radii == [0.5, 1.0, 1.5]
    assert config.mode_prior == [1 / 3, 1 / 3, 1 / 3]
    assert config.model.critic_activation == 'relu'
    assert config.training.posterior_steps == 10
    assert config.optim.posterior_lr == 1e-3


def test_no_file_gives_defaults():
    assert parse_config() == TrainConfig()


def test_out_of_range_gamma_names_key(tmp_path):
    path = tmp_path / 'bad.toml'
    path.write_text('[training]\ngamma = 1.5\n', encoding='utf-8')
    with pytest.raises(ConfigError, match='training.gamma') as excinfo:
        parse_config(path)
    assert excinfo.value.key == 'training.gamma'


def test_unknown_key_is_an_error(tmp_path):
    path = tmp_path / 'typo.toml'
    path.write_text('[training]\nlamda1 = 0.2\n', encoding='utf-8')
    with pytest.raises(ConfigError, match='training.lamda1'):
        parse_config(path)


def test_unknown_section_is_an_error(tmp_path):
    path = tmp_path / 'typo.toml'
    path.write_text('[trainer]\niters = 3\n', encoding='utf-8')
    with pytest.raises(ConfigError, match='trainer'):
        parse_config(path)


def test_syntax_error_reports_line(tmp_path):
    path = tmp_path / 'broken.toml'
    path.write_text('seed = 1\n[training\niters = 2\n', encoding='utf-8')
    with pytest.raises(ConfigError) as excinfo:
        parse_config(path)
    assert excinfo.value.line == 2


def test_wrong_type_is_an_error(tmp_path):
    path = tmp_path / 'types.toml'
    path.write_text('[training]\niters = "many"\n', encoding='utf-8')
    with pytest.raises(ConfigError, match='training.iters'):
        parse_config(path)


def test_precedence_flags_over_file_over_defaults(tmp_path):
    path = tmp_path / 'run.toml'
    path.write_text('seed = 4\n[training]\nlambda1 = 0.3\niters = 12\n', encoding='utf-8')
    config = parse_config(path, {'training.lambda1': 0.5, 'training.iters': None})
    assert config.training.lambda1 == 0.5
    assert config.training.iters == 12
    assert config.seed == 4
    assert config.training.gamma == 0.99


def test_integer_promoted_to_float(tmp_path):
    path = tmp_path / 'run.toml'
    path.write_text('[training]\nlambda0 = 1\n', encoding='utf-8')
    assert parse_config(path).training.lambda0 == 1.0


def test_round_trip_through_dict():
    config = parse_config(overrides={'seed': 9, 'training.objective': 'gan'})
    assert TrainConfig.from_dict(config.to_dict()) == config


@pytest.mark.parametrize('override', [
    {'training.lambda1': -0.1},
    {'training.objective': 'lsgan'},
    {'env.radii': [1.0, 1.0]},
    {'model.num_codes': 1},
    {'optim.kl_radius': 0.0},
    {'training.posterior_steps': 0},
    {'optim.posterior_lr': 0.0},
    {'model.critic_activation': 'sigmoid'},
])
def test_domain_violations(override):
    with pytest.raises(ConfigError):
        parse_config(overrides=override)
