"""Synthetic 2D plane environment, circular expert mixture and demonstration datasets."""
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np

from utils.errors import DatasetError, EnvError

logger = logging.getLogger(__name__)

HISTORY_LENGTH = 5
OBS_DIM = 2 * HISTORY_LENGTH
ACTION_DIM = 2
DEMO_FORMAT_VERSION = 1
ZERO_ACTION_NORM = 1e-8


@dataclass(frozen=True)
class EnvState:
    position: np.ndarray
    heading: np.ndarray
    history: np.ndarray
    t: int = 0


@dataclass(frozen=True)
class CircleExpert:
    center: tuple = (0.0, 0.0)
    radius: float = 1.0
    orientation: int = 1
    steer_gain: float = 1.0
    noise_sigma: float = 0.1

    def to_dict(self) -> Dict[str, Any]:
        return {
            'center': [float(self.center[0]), float(self.center[1])],
            'radius': float(self.radius),
            'orientation': int(self.orientation),
            'steer_gain': float(self.steer_gain),
            'noise_sigma': float(self.noise_sigma),
        }


@dataclass
class ExpertMixture:
    modes: List[CircleExpert]
    mode_prior: np.ndarray = None

    def __post_init__(self):
        if not self.modes:
            raise EnvError("Expert mixture needs at least one mode")
        if self.mode_prior is None:
            self.mode_prior = np.full(len(self.modes), 1.0 / len(self.modes))
        self.mode_prior = np.asarray(self.mode_prior, dtype=np.float64)
        radii = [m.radius for m in self.modes]
        if any(r <= 0 for r in radii):
            raise EnvError(f"Expert radii must be positive, got {radii}")
        if len(set(radii)) != len(radii):
            raise EnvError(f"Expert radii must be pairwise distinct, got {radii}")
        if self.mode_prior.shape != (len(self.modes),) or np.any(self.mode_prior < 0) \
                or abs(self.mode_prior.sum() - 1.0) > 1e-9:
            raise EnvError(f"mode_prior must be a probability vector over {len(self.modes)} modes")

    @classmethod
    def concentric(cls, radii: Sequence[float] = (0.5, 1.0, 1.5), orientation: int = 1,
                   steer_gain: float = 1.0, noise_sigma: float = 0.1) -> 'ExpertMixture':
        modes = [CircleExpert((0.0, 0.0), float(r), orientation, steer_gain, noise_sigma) for r in radii]
        return cls(modes)

    @property
    def num_modes(self) -> int:
        return len(self.modes)

    def check_mode(self, mode: int) -> CircleExpert:
        if not isinstance(mode, (int, np.integer)) or not 0 <= mode < self.num_modes:
            raise EnvError(f"Invalid mode index {mode!r}; mixture has {self.num_modes} modes")
        return self.modes[int(mode)]

    def expert_action(self, mode: int, state: EnvState, rng: np.random.Generator,
                      speed_dt: float = 0.05) -> np.ndarray:
        """Tangent direction plus radial steering back to the circle, then Gaussian noise.

        The steering term closes the radial gap in one step of length ``speed_dt`` when
        ``steer_gain`` is 1.
        """
        expert = self.check_mode(mode)
        offset = state.position - np.asarray(expert.center, dtype=np.float64)
        distance = float(np.linalg.norm(offset))
        radial = offset / distance if distance > 0.0 else np.array([1.0, 0.0])
        tangent = expert.orientation * np.array([-radial[1], radial[0]])
        correction = expert.steer_gain * (expert.radius - distance) / speed_dt * radial
        direction = tangent + correction
        direction = direction / np.linalg.norm(direction)
        noise = rng.normal(0.0, 1.0, size=ACTION_DIM)
        return direction + expert.noise_sigma * noise

    def distance_to_nearest(self, position: np.ndarray) -> float:
        position = np.asarray(position, dtype=np.float64)
        return min(abs(float(np.linalg.norm(position - np.asarray(m.center))) - m.radius)
                   for m in self.modes)

    def to_dict(self) -> Dict[str, Any]:
        return {'mode_prior': [float(p) for p in self.mode_prior],
                'modes': [m.to_dict() for m in self.modes]}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ExpertMixture':
        modes = [CircleExpert(tuple(m['center']), m['radius'], m['orientation'],
                              m['steer_gain'], m['noise_sigma']) for m in data['modes']]
        return cls(modes, np.asarray(data['mode_prior'], dtype=np.float64))


def _as_rows(name: str, values, width: int) -> np.ndarray:
    array = np.asarray(values, dtype=np.float64)
    if array.size == 0:
        return array.reshape(0, width)
    if array.ndim != 2 or array.shape[1] != width:
        raise EnvError(f"Trajectory {name} must have shape (T, {width}), got {array.shape}")
    return array


@dataclass
class Trajectory:
    observations: np.ndarray
    actions: np.ndarray
    code: Optional[np.ndarray] = None
    mode_label: Optional[int] = None
    final_position: Optional[np.ndarray] = None

    def __post_init__(self):
        self.observations = _as_rows('observations', self.observations, OBS_DIM)
        self.actions = _as_rows('actions', self.actions, ACTION_DIM)
        if len(self.observations) != len(self.actions):
            raise EnvError(
                f"Trajectory has {len(self.observations)} observations but {len(self.actions)} actions")
        if self.code is not None:
            self.code = np.asarray(self.code, dtype=np.float64)

    def __len__(self) -> int:
        return len(self.actions)

    @property
    def code_index(self) -> int:
        return -1 if self.code is None else int(np.argmax(self.code))

    @property
    def positions(self) -> np.ndarray:
        """Current position at every step (the newest entry of each observation)."""
        return self.observations[:, OBS_DIM - 2:]


@dataclass
class PairBatch:
    """Flat state-action pairs with optional codes and mode labels."""
    observations: np.ndarray
    actions: np.ndarray
    codes: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = None
    traj_index: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.actions)

    @classmethod
    def from_trajectories(cls, trajs: Sequence[Trajectory]) -> 'PairBatch':
        if not trajs:
            raise DatasetError("Cannot build a pair batch from zero trajectories")
        observations = np.concatenate([t.observations for t in trajs])
        actions = np.concatenate([t.actions for t in trajs])
        codes = None
        if all(t.code is not None for t in trajs):
            codes = np.concatenate([np.tile(t.code, (len(t), 1)) for t in trajs])
        labels = None
        if all(t.mode_label is not None for t in trajs):
            labels = np.concatenate([np.full(len(t), t.mode_label, dtype=np.int64) for t in trajs])
        traj_index = np.concatenate([np.full(len(t), i, dtype=np.int64) for i, t in enumerate(trajs)])
        return cls(observations, actions, codes, labels, traj_index)

    def subset(self, index: np.ndarray) -> 'PairBatch':
        return PairBatch(
            self.observations[index],
            self.actions[index],
            None if self.codes is None else self.codes[index],
            None if self.labels is None else self.labels[index],
            None if self.traj_index is None else self.traj_index[index],
        )

    def sample(self, n: int, rng: np.random.Generator) -> 'PairBatch':
        """Uniform draw of ``n`` pairs; without replacement whenever enough pairs exist."""
        if len(self) == 0:
            raise DatasetError("Cannot sample from an empty pair batch")
        index = rng.choice(len(self), size=n, replace=n > len(self))
        return self.subset(index)


class PlaneEnvironment:
    """Point agent moving at constant speed in the direction it selects."""

    def __init__(self, mixture: ExpertMixture, speed_dt: float = 0.05):
        if not speed_dt > 0:
            raise EnvError(f"speed_dt must be positive, got {speed_dt}")
        self.mixture = mixture
        self.speed_dt = float(speed_dt)

    def reset(self, rng: np.random.Generator, mode: Optional[int] = None) -> EnvState:
        """Uniform start on the given mode's circle, or on a mode drawn from the prior."""
        if mode is None:
            mode = int(rng.choice(self.mixture.num_modes, p=self.mixture.mode_prior))
        expert = self.mixture.check_mode(mode)
        angle = rng.uniform(0.0, 2.0 * np.pi)
        radial = np.array([np.cos(angle), np.sin(angle)])
        position = np.asarray(expert.center, dtype=np.float64) + expert.radius * radial
        heading = expert.orientation * np.array([-radial[1], radial[0]])
        history = np.tile(position, (HISTORY_LENGTH, 1))
        return EnvState(position, heading, history, 0)

    def step(self, state: EnvState, action: np.ndarray) -> EnvState:
        action = np.asarray(action, dtype=np.float64).reshape(-1)
        if action.shape != (ACTION_DIM,):
            raise EnvError(f"Action must have dimension {ACTION_DIM}, got {action.shape}")
        if not np.all(np.isfinite(action)):
            raise EnvError(f"Non-finite action {action.tolist()}")
        norm = float(np.linalg.norm(action))
        heading = state.heading if norm < ZERO_ACTION_NORM else action / norm
        position = state.position + self.speed_dt * heading
        history = np.vstack([state.history[1:], position])
        return EnvState(position, heading, history, state.t + 1)

    @staticmethod
    def observe(state: EnvState) -> np.ndarray:
        """Positions t-4 .. t flattened oldest first into a 10-vector."""
        return state.history.reshape(-1).copy()

    def expert_action(self, mode: int, state: EnvState, rng: np.random.Generator) -> np.ndarray:
        return self.mixture.expert_action(mode, state, rng, self.speed_dt)

    def expert_rollout(self, mode: int, horizon: int, rng: np.random.Generator) -> Trajectory:
        state = self.reset(rng, mode)
        observations, actions = [], []
        for _ in range(horizon):
            observations.append(self.observe(state))
            action = self.expert_action(mode, state, rng)
            actions.append(action)
            state = self.step(state, action)
        return Trajectory(np.array(observations), np.array(actions), None, int(mode), state.position.copy())

    def generate_demos(self, n_per_mode: int, horizon: int, seed: int) -> List[Trajectory]:
        """``num_modes * n_per_mode`` labeled expert trajectories, mode-major order."""
        if n_per_mode < 1:
            raise EnvError(f"n_per_mode must be >= 1, got {n_per_mode}")
        if horizon < HISTORY_LENGTH:
            raise EnvError(f"horizon must be >= {HISTORY_LENGTH}, got {horizon}")
        rng = np.random.default_rng(seed)
        demos = [self.expert_rollout(mode, horizon, rng)
                 for mode in range(self.mixture.num_modes)
                 for _ in range(n_per_mode)]
        logger.info(f"Generated {len(demos)} expert demonstrations "
                    f"({self.mixture.num_modes} modes x {n_per_mode}, horizon {horizon})")
        return demos


def save_demos(path: Union[str, Path], env: PlaneEnvironment, demos: Sequence[Trajectory]) -> Path:
    path = Path(path)
    document = {
        'format_version': DEMO_FORMAT_VERSION,
        'kind': 'demo_dataset',
        'speed_dt': env.speed_dt,
        'mixture': env.mixture.to_dict(),
        'trajectories': [{
            'observations': traj.observations.tolist(),
            'actions': traj.actions.tolist(),
            'mode_label': traj.mode_label,
            'final_position': None if traj.final_position is None else traj.final_position.tolist(),
        } for traj in demos],
    }
    with open(path, 'w', encoding='utf-8') as handle:
        json.dump(document, handle, separators=(',', ':'))
        handle.write('\n')
    logger.info(f"Wrote {len(demos)} demonstrations to {path}")
    return path


def load_demos(path: Union[str, Path]):
    """Read a demo dataset; returns ``(environment, trajectories)``."""
    path = Path(path)
    try:
        with open(path, 'r', encoding='utf-8') as handle:
            document = json.load(handle)
    except json.JSONDecodeError as e:
        logger.error(f"Failed to parse demo dataset {path}: {str(e)}")
        raise DatasetError(f"Demo dataset {path} is not valid JSON: {e.msg} at line {e.lineno}") from e
    except ValueError as e:
        logger.error(f"Failed to decode demo dataset {path}: {str(e)}")
        raise DatasetError(f"Demo dataset {path} is not UTF-8 JSON text") from e
    if not isinstance(document, dict):
        raise DatasetError(f"{path} is not a demo dataset")
    if document.get('kind') != 'demo_dataset':
        raise DatasetError(f"{path} is not a demo dataset")
    if document.get('format_version') != DEMO_FORMAT_VERSION:
        raise DatasetError(
            f"Unsupported demo format version {document.get('format_version')!r} in {path}")
    try:
        env = PlaneEnvironment(ExpertMixture.from_dict(document['mixture']), document['speed_dt'])
        demos = [Trajectory(
            np.asarray(item['observations'], dtype=np.float64),
            np.asarray(item['actions'], dtype=np.float64),
            None,
            item.get('mode_label'),
            None if item.get('final_position') is None else np.asarray(item['final_position']),
        ) for item in document['trajectories']]
    except (KeyError, TypeError) as e:
        raise DatasetError(f"Demo dataset {path} is missing field {e}") from e
    except ValueError as e:
        logger.error(f"Malformed demo dataset {path}: {str(e)}")
        raise DatasetError(f"Demo dataset {path} is malformed: {e}") from e
    if not demos:
        raise DatasetError(f"Demo dataset {path} contains no trajectories")
    logger.info(f"Loaded {len(demos)} demonstrations from {path}")
    return env, demos
