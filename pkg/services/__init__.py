"""Service layer initialization."""
from datetime import datetime

from .env_service import ExpertMixture, PlaneEnvironment, Trajectory, PairBatch
from .model_service import GaussianPolicy, Critic, Posterior, Baseline, ModelFactory
from .optim_service import AdamState, RmspropState, TrpoConfig
from .training_service import TrainingService, InfoGailTrainer, ReplayBuffer, RewardAugmentation
from .eval_service import EvalReport
from .charts_service import ChartsService
from .checkpoint_service import CheckpointService, RunManifest

__all__ = [
    'ExpertMixture',
    'PlaneEnvironment',
    'Trajectory',
    'PairBatch',
    'GaussianPolicy',
    'Critic',
    'Posterior',
    'Baseline',
    'ModelFactory',
    'AdamState',
    'RmspropState',
    'TrpoConfig',
    'TrainingService',
    'InfoGailTrainer',
    'ReplayBuffer',
    'RewardAugmentation',
    'EvalReport',
    'ChartsService',
    'CheckpointService',
    'RunManifest',
]

VERSION = "1.0.0"
TIMESTAMP = datetime.now().isoformat()
