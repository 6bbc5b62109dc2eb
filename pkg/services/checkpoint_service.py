"""Service for saving and loading model checkpoints and run manifests."""
import json
import logging
import subprocess
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np

from services.model_service import Baseline, Critic, GaussianPolicy, Posterior
from utils.config import TrainConfig
from utils.core_math import Mlp, ParamVector
from utils.errors import CheckpointError, ConfigError

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
MANIFEST_NAME = 'run_manifest.json'
ROLES = ('policy', 'critic', 'posterior', 'baseline')


@dataclass
class RunManifest:
    algo: str
    seed: int
    config: Dict[str, Any]
    checkpoints: Dict[str, str] = field(default_factory=dict)
    metrics_log: Optional[str] = None
    source_revision: Optional[str] = None
    format_version: int = FORMAT_VERSION

    def write(self, directory: Path) -> Path:
        for role, relative in self.checkpoints.items():
            if not (directory / relative).exists():
                raise CheckpointError(f"Checkpoint file for role '{role}' does not exist: {relative}", role=role)
        if self.metrics_log is not None and not (directory / self.metrics_log).exists():
            raise CheckpointError(f"Metrics log does not exist: {self.metrics_log}")
        path = directory / MANIFEST_NAME
        with open(path, 'w', encoding='utf-8') as handle:
            json.dump(asdict(self), handle, indent=2, sort_keys=True)
            handle.write('\n')
        return path

    @classmethod
    def read(cls, directory: Path) -> 'RunManifest':
        path = directory / MANIFEST_NAME
        if not path.exists():
            raise CheckpointError(f"No {MANIFEST_NAME} in {directory}")
        try:
            with open(path, 'r', encoding='utf-8') as handle:
                data = json.load(handle)
        except json.JSONDecodeError as e:
            raise CheckpointError(f"Manifest {path} is not valid JSON: {e.msg}") from e
        if data.get('format_version') != FORMAT_VERSION:
            raise CheckpointError(
                f"Manifest {path} has format version {data.get('format_version')!r}, expected {FORMAT_VERSION}")
        try:
            return cls(**data)
        except TypeError as e:
            raise CheckpointError(f"Manifest {path} is malformed: {e}") from e

    def train_config(self) -> TrainConfig:
        try:
            return TrainConfig.from_dict(self.config)
        except ConfigError as e:
            raise CheckpointError(f"Manifest config snapshot is invalid: {e}") from e


def source_revision() -> Optional[str]:
    try:
        completed = subprocess.run(['git', 'rev-parse', 'HEAD'], capture_output=True, text=True,
                                   timeout=5, check=False)
    except (OSError, subprocess.SubprocessError):
        return None
    revision = completed.stdout.strip()
    return revision if completed.returncode == 0 and revision else None


class CheckpointService:
    @staticmethod
    def model_document(role: str, model) -> Dict[str, Any]:
        document = {
            'format_version': FORMAT_VERSION,
            'role': role,
            'layer_sizes': list(model.net.layer_sizes),
            'activation': model.net.activation,
            'params': model.net.params.values.tolist(),
        }
        if role == 'policy':
            document['sigma'] = model.sigma.tolist()
        if role == 'critic':
            document['objective'] = model.objective
        if role in ('policy', 'posterior', 'baseline'):
            document['num_codes'] = model.num_codes
        return document

    @staticmethod
    def model_from_document(document: Dict[str, Any], expected_role: str):
        if document.get('format_version') != FORMAT_VERSION:
            raise CheckpointError(
                f"Checkpoint for role '{expected_role}' has format version "
                f"{document.get('format_version')!r}, expected {FORMAT_VERSION}", role=expected_role)
        if document.get('role') != expected_role:
            raise CheckpointError(
                f"Checkpoint role mismatch: expected '{expected_role}', found {document.get('role')!r}",
                role=expected_role)
        sizes = document['layer_sizes']
        params = ParamVector(np.asarray(document['params'], dtype=np.float64), Mlp.manifest_for(sizes))
        net = Mlp(sizes, document['activation'], params)
        if expected_role == 'policy':
            return GaussianPolicy(net, document['sigma'], document['num_codes'])
        if expected_role == 'critic':
            return Critic(net, document['objective'])
        if expected_role == 'posterior':
            return Posterior(net, document['num_codes'])
        return Baseline(net, document['num_codes'])

    @staticmethod
    def checkpoint_save(models: Dict[str, Any], directory: Union[str, Path], algo: str,
                        config: TrainConfig, metrics_log: Optional[Union[str, Path]] = None,
                        prefix: str = '') -> Path:
        """Write one JSON file per model into ``directory/prefix`` plus a run manifest in ``directory``."""
        directory = Path(directory)
        target = directory / prefix
        target.mkdir(parents=True, exist_ok=True)
        checkpoints = {}
        for role in ROLES:
            if role not in models:
                continue
            relative = str(Path(prefix) / f"{role}.json") if prefix else f"{role}.json"
            with open(directory / relative, 'w', encoding='utf-8') as handle:
                json.dump(CheckpointService.model_document(role, models[role]), handle)
                handle.write('\n')
            checkpoints[role] = relative
        manifest = RunManifest(
            algo=algo,
            seed=config.seed,
            config=config.to_dict(),
            checkpoints=checkpoints,
            metrics_log=None if metrics_log is None else str(metrics_log),
            source_revision=source_revision(),
        )
        path = manifest.write(directory)
        logger.info("=" * 60)
        logger.info("CHECKPOINT WRITTEN")
        logger.info(f"Directory: {directory}")
        logger.info(f"Roles: {', '.join(checkpoints)}")
        logger.info("=" * 60)
        return path

    @staticmethod
    def checkpoint_load(directory: Union[str, Path]):
        """Returns ``(manifest, {role: model})`` for every role the manifest lists."""
        directory = Path(directory)
        manifest = RunManifest.read(directory)
        if 'policy' not in manifest.checkpoints:
            raise CheckpointError("Checkpoint set has no policy", role='policy')
        models = {}
        for role, relative in manifest.checkpoints.items():
            if role not in ROLES:
                raise CheckpointError(f"Unknown model role '{role}' in manifest", role=role)
            path = directory / relative
            if not path.exists():
                logger.error(f"Missing checkpoint file for role '{role}': {path}")
                raise CheckpointError(f"Missing checkpoint file for role '{role}': {path}", role=role)
            try:
                with open(path, 'r', encoding='utf-8') as handle:
                    document = json.load(handle)
            except json.JSONDecodeError as e:
                raise CheckpointError(f"Checkpoint for role '{role}' is not valid JSON: {e.msg}", role=role) from e
            try:
                models[role] = CheckpointService.model_from_document(document, role)
            except (KeyError, ValueError) as e:
                raise CheckpointError(f"Checkpoint for role '{role}' is malformed: {e}", role=role) from e
        logger.info(f"Loaded checkpoint roles {sorted(models)} from {directory}")
        return manifest, models
