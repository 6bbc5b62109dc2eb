"""Layered run configuration: dataclass defaults < TOML file < command-line overrides."""
import logging
import re
import tomllib
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Union

from utils.errors import ConfigError

logger = logging.getLogger(__name__)

OBJECTIVES = ('gan', 'wgan')
REWARD_AUGMENTATIONS = ('none', 'stay_in_annulus')


@dataclass
class EnvSettings:
    speed_dt: float = 0.05
    horizon: int = 50
    n_per_mode: int = 20
    radii: List[float] = field(default_factory=lambda: [0.5, 1.0, 1.5])
    orientation: int = 1
    noise_sigma: float = 0.1
    steer_gain: float = 1.0


@dataclass
class ModelSettings:
    num_codes: int = 3
    sigma: float = 0.1
    activation: str = 'tanh'
    critic_activation: str = 'relu'
    policy_hidden: List[int] = field(default_factory=lambda: [64, 64])
    critic_hidden: List[int] = field(default_factory=lambda: [64, 64])
    posterior_hidden: List[int] = field(default_factory=lambda: [64, 64])
    baseline_hidden: List[int] = field(default_factory=lambda: [64])


@dataclass
class OptimSettings:
    kl_radius: float = 0.01
    cg_iters: int = 10
    cg_tol: float = 1e-10
    damping: float = 0.1
    backtrack_ratio: float = 0.5
    max_backtracks: int = 10
    adam_lr: float = 3e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    rmsprop_lr: float = 5e-5
    rmsprop_rho: float = 0.99
    rmsprop_eps: float = 1e-8
    bc_lr: float = 1e-3
    bc_batch_size: int = 256
    posterior_lr: float = 1e-3
    baseline_lr: float = 1e-3
    baseline_steps: int = 25


@dataclass
class TrainingSettings:
    objective: str = 'wgan'
    gamma: float = 0.99
    lambda0: float = 0.0
    lambda1: float = 0.1
    lambda2: float = 0.0
    clip_bound: float = 0.01
    use_replay: bool = False
    buffer_capacity: int = 300
    rollouts_per_iter: int = 60
    batch_size: int = 512
    iters: int = 300
    bc_epochs: int = 50
    critic_steps: int = 5
    posterior_steps: int = 10
    reward_augmentation: str = 'none'
    annulus_inner: float = 0.25
    annulus_outer: float = 2.0
    checkpoint_every: int = 50
    log_every: int = 10
    workers: int = 1
    record_wall_time: bool = False


@dataclass
class TrainConfig:
    seed: int = 0
    env: EnvSettings = field(default_factory=EnvSettings)
    model: ModelSettings = field(default_factory=ModelSettings)
    optim: OptimSettings = field(default_factory=OptimSettings)
    training: TrainingSettings = field(default_factory=TrainingSettings)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> 'TrainConfig':
        merged = _merge(asdict(cls()), data, prefix='')
        config = cls(
            seed=merged['seed'],
            env=EnvSettings(**merged['env']),
            model=ModelSettings(**merged['model']),
            optim=OptimSettings(**merged['optim']),
            training=TrainingSettings(**merged['training']),
        )
        validate_config(config)
        return config

    @property
    def mode_prior(self) -> List[float]:
        return [1.0 / self.model.num_codes] * self.model.num_codes


_SECTIONS = {f.name for f in fields(TrainConfig) if f.name != 'seed'}


def _coerce(key: str, value: Any, default: Any) -> Any:
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"Expected a boolean, got {value!r}", key=key)
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"Expected an integer, got {value!r}", key=key)
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"Expected a number, got {value!r}", key=key)
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"Expected a string, got {value!r}", key=key)
        return value
    if isinstance(default, list):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"Expected a list, got {value!r}", key=key)
        item_default = default[0] if default else 0.0
        return [_coerce(key, item, item_default) for item in value]
    return value


def _merge(base: Dict[str, Any], update: Mapping[str, Any], prefix: str) -> Dict[str, Any]:
    result = dict(base)
    for key, value in update.items():
        dotted = f"{prefix}{key}"
        if key not in base:
            raise ConfigError("Unknown configuration key", key=dotted)
        if isinstance(base[key], dict):
            if not isinstance(value, Mapping):
                raise ConfigError("Expected a section table", key=dotted)
            result[key] = _merge(base[key], value, prefix=f"{dotted}.")
        else:
            result[key] = _coerce(dotted, value, base[key])
    return result


def _nest(overrides: Mapping[str, Any]) -> Dict[str, Any]:
    """Turn ``{'training.lambda1': 0.0}`` into ``{'training': {'lambda1': 0.0}}``."""
    nested: Dict[str, Any] = {}
    for dotted, value in overrides.items():
        if value is None:
            continue
        parts = dotted.split('.')
        if len(parts) == 2 and parts[0] not in _SECTIONS:
            raise ConfigError("Unknown configuration section", key=dotted)
        target = nested
        for part in parts[:-1]:
            target = target.setdefault(part, {})
        target[parts[-1]] = value
    return nested


def validate_config(config: TrainConfig) -> None:
    t, e, m, o = config.training, config.env, config.model, config.optim

    def check(condition: bool, key: str, message: str):
        if not condition:
            logger.error(f"Invalid configuration value for {key}: {message}")
            raise ConfigError(message, key=key)

    check(0.0 < t.gamma < 1.0, 'training.gamma', f"gamma must lie in (0, 1), got {t.gamma}")
    check(t.lambda0 >= 0.0, 'training.lambda0', "lambda0 must be >= 0")
    check(t.lambda1 >= 0.0, 'training.lambda1', "lambda1 must be >= 0")
    check(t.lambda2 >= 0.0, 'training.lambda2', "lambda2 must be >= 0")
    check(t.objective in OBJECTIVES, 'training.objective', f"objective must be one of {OBJECTIVES}")
    check(t.reward_augmentation in REWARD_AUGMENTATIONS, 'training.reward_augmentation',
          f"reward_augmentation must be one of {REWARD_AUGMENTATIONS}")
    check(t.clip_bound > 0.0, 'training.clip_bound', "clip_bound must be positive")
    check(t.annulus_outer > t.annulus_inner >= 0.0, 'training.annulus_outer',
          "annulus bounds must satisfy 0 <= inner < outer")
    for key in ('buffer_capacity', 'rollouts_per_iter', 'batch_size', 'critic_steps', 'posterior_steps',
                'checkpoint_every', 'log_every', 'workers'):
        check(getattr(t, key) >= 1, f'training.{key}', f"{key} must be >= 1")
    for key in ('iters', 'bc_epochs'):
        check(getattr(t, key) >= 0, f'training.{key}', f"{key} must be >= 0")
    check(e.speed_dt > 0.0, 'env.speed_dt', "speed_dt must be positive")
    check(e.horizon >= 5, 'env.horizon', "horizon must be >= 5")
    check(e.n_per_mode >= 1, 'env.n_per_mode', "n_per_mode must be >= 1")
    check(len(e.radii) >= 2 and all(r > 0 for r in e.radii), 'env.radii',
          "radii must hold at least two positive values")
    check(len(set(e.radii)) == len(e.radii), 'env.radii', "radii must be pairwise distinct")
    check(e.orientation in (-1, 1), 'env.orientation', "orientation must be +1 or -1")
    check(e.noise_sigma >= 0.0, 'env.noise_sigma', "noise_sigma must be >= 0")
    check(e.steer_gain >= 0.0, 'env.steer_gain', "steer_gain must be >= 0")
    check(m.num_codes >= 2, 'model.num_codes', "num_codes must be >= 2")
    check(m.sigma > 0.0, 'model.sigma', "sigma must be positive")
    for key in ('activation', 'critic_activation'):
        check(getattr(m, key) in ('tanh', 'relu', 'linear'), f'model.{key}', "unknown activation")
    check(o.kl_radius > 0.0, 'optim.kl_radius', "kl_radius must be positive")
    check(o.cg_iters >= 1, 'optim.cg_iters', "cg_iters must be >= 1")
    check(o.damping >= 0.0, 'optim.damping', "damping must be >= 0")
    check(0.0 < o.backtrack_ratio < 1.0, 'optim.backtrack_ratio', "backtrack_ratio must lie in (0, 1)")
    check(o.max_backtracks >= 0, 'optim.max_backtracks', "max_backtracks must be >= 0")
    for key in ('adam_lr', 'rmsprop_lr', 'bc_lr', 'posterior_lr', 'baseline_lr'):
        check(getattr(o, key) > 0.0, f'optim.{key}', f"{key} must be positive")
    check(0.0 < o.rmsprop_rho < 1.0, 'optim.rmsprop_rho', "rmsprop_rho must lie in (0, 1)")


def parse_config(path: Optional[Union[str, Path]] = None,
                 overrides: Optional[Mapping[str, Any]] = None) -> TrainConfig:
    """Build a validated ``TrainConfig``; precedence is overrides > file > defaults."""
    data: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        logger.info(f"Reading configuration from {path}")
        try:
            with open(path, 'rb') as handle:
                data = tomllib.load(handle)
        except tomllib.TOMLDecodeError as e:
            line = getattr(e, 'lineno', None)
            if line is None:
                match = re.search(r'line (\d+)', str(e))
                line = int(match.group(1)) if match else None
            raise ConfigError(f"Cannot parse {path}: {e}", line=line) from e
    merged = _merge(asdict(TrainConfig()), data, prefix='')
    if overrides:
        merged = _merge(merged, _nest(overrides), prefix='')
    return TrainConfig.from_dict(merged)
