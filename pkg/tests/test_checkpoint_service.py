import json

import numpy as np
import pytest

from conftest import one_hot_rows
from services.checkpoint_service import MANIFEST_NAME, CheckpointService, RunManifest
from services.model_service import ModelFactory
from utils.errors import CheckpointError


def _models(config):
    policy, critic, posterior, baseline = ModelFactory.build(config)
    return {'policy': policy, 'critic': critic, 'posterior': posterior, 'baseline': baseline}


def test_round_trip_is_bit_identical(tiny_config, tmp_path):
    models = _models(tiny_config)
    CheckpointService.checkpoint_save(models, tmp_path, 'infogail', tiny_config)
    manifest, loaded = CheckpointService.checkpoint_load(tmp_path)

    rng = np.random.default_rng(0)
    obs, actions, codes = rng.normal(size=(4, 10)), rng.normal(size=(4, 2)), one_hot_rows([0, 1, 2, 0])
    assert np.array_equal(models['policy'].mean(obs, codes), loaded['policy'].mean(obs, codes))
    assert np.array_equal(models['critic'].score(obs, actions), loaded['critic'].score(obs, actions))
    assert np.array_equal(models['posterior'].log_probs(obs, actions), loaded['posterior'].log_probs(obs, actions))
    assert np.array_equal(models['baseline'].value(obs, codes), loaded['baseline'].value(obs, codes))
    assert manifest.algo == 'infogail'
    assert manifest.seed == tiny_config.seed
    assert manifest.train_config() == tiny_config


def test_prefix_layout(tiny_config, tmp_path):
    CheckpointService.checkpoint_save(_models(tiny_config), tmp_path, 'gail', tiny_config, prefix='checkpoints/final')
    manifest = RunManifest.read(tmp_path)
    assert manifest.checkpoints['policy'] == 'checkpoints/final/policy.json'
    assert (tmp_path / 'checkpoints' / 'final' / 'critic.json').exists()


def test_tampered_manifest_version(tiny_config, tmp_path):
    CheckpointService.checkpoint_save(_models(tiny_config), tmp_path, 'infogail', tiny_config)
    path = tmp_path / MANIFEST_NAME
    document = json.loads(path.read_text(encoding='utf-8'))
    document['format_version'] = 99
    path.write_text(json.dumps(document), encoding='utf-8')
    with pytest.raises(CheckpointError):
        CheckpointService.checkpoint_load(tmp_path)


def test_tampered_model_version(tiny_config, tmp_path):
    CheckpointService.checkpoint_save(_models(tiny_config), tmp_path, 'infogail', tiny_config)
    path = tmp_path / 'critic.json'
    document = json.loads(path.read_text(encoding='utf-8'))
    document['format_version'] = 0
    path.write_text(json.dumps(document), encoding='utf-8')
    with pytest.raises(CheckpointError) as excinfo:
        CheckpointService.checkpoint_load(tmp_path)
    assert excinfo.value.role == 'critic'


def test_partial_set_names_missing_role(tiny_config, tmp_path):
    CheckpointService.checkpoint_save(_models(tiny_config), tmp_path, 'infogail', tiny_config)
    (tmp_path / 'posterior.json').unlink()
    with pytest.raises(CheckpointError, match='posterior') as excinfo:
        CheckpointService.checkpoint_load(tmp_path)
    assert excinfo.value.role == 'posterior'


def test_missing_manifest(tmp_path):
    with pytest.raises(CheckpointError):
        CheckpointService.checkpoint_load(tmp_path)


def test_manifest_refuses_dangling_paths(tmp_path):
    manifest = RunManifest(algo='bc', seed=0, config={}, checkpoints={'policy': 'policy.json'})
    with pytest.raises(CheckpointError):
        manifest.write(tmp_path)


def test_policy_only_set(tiny_config, tmp_path):
    policy = _models(tiny_config)['policy']
    CheckpointService.checkpoint_save({'policy': policy}, tmp_path, 'bc', tiny_config)
    manifest, loaded = CheckpointService.checkpoint_load(tmp_path)
    assert list(manifest.checkpoints) == ['policy']
    assert list(loaded) == ['policy']
    assert not (tmp_path / 'critic.json').exists()
