"""The four learned functions: conditional Gaussian policy, critic, code posterior and baseline.

All methods take batches (rows are samples) and also accept single vectors where noted.
"""
import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from services.env_service import ACTION_DIM, OBS_DIM
from utils.config import TrainConfig
from utils.core_math import Gradient, Mlp
from utils.errors import DimensionError, SizeError

logger = logging.getLogger(__name__)

LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class LatentCode:
    one_hot: np.ndarray

    def __post_init__(self):
        self.one_hot = np.asarray(self.one_hot, dtype=np.float64).reshape(-1)
        if self.one_hot.size < 2:
            raise SizeError("A latent code needs K >= 2 states")
        if np.count_nonzero(self.one_hot) != 1 or self.one_hot.max() != 1.0:
            raise ValueError(f"Latent code must be one-hot, got {self.one_hot.tolist()}")

    @classmethod
    def from_index(cls, index: int, num_codes: int) -> 'LatentCode':
        one_hot = np.zeros(num_codes)
        one_hot[index] = 1.0
        return cls(one_hot)

    @property
    def index(self) -> int:
        return int(np.argmax(self.one_hot))

    @property
    def num_codes(self) -> int:
        return int(self.one_hot.size)


def check_prior(prior: Sequence[float]) -> np.ndarray:
    prior = np.asarray(prior, dtype=np.float64).reshape(-1)
    if prior.size < 2 or np.any(prior < 0) or not np.all(np.isfinite(prior)) \
            or abs(prior.sum() - 1.0) > 1e-9:
        raise ValueError(f"Invalid code prior {prior.tolist()}: must be a probability vector")
    return prior


def sample_code(prior: Sequence[float], rng: np.random.Generator) -> LatentCode:
    prior = check_prior(prior)
    return LatentCode.from_index(int(rng.choice(prior.size, p=prior)), prior.size)


def _join(left: np.ndarray, right: np.ndarray, left_dim: int, right_dim: int) -> Tuple[np.ndarray, bool]:
    left = np.asarray(left, dtype=np.float64)
    right = np.asarray(right, dtype=np.float64)
    single = left.ndim == 1
    left, right = np.atleast_2d(left), np.atleast_2d(right)
    if left.shape[1] != left_dim or right.shape[1] != right_dim:
        raise DimensionError(
            f"Expected inputs of dimension ({left_dim}, {right_dim}), got {left.shape} and {right.shape}")
    if right.shape[0] == 1 and left.shape[0] > 1:
        right = np.repeat(right, left.shape[0], axis=0)
    if left.shape[0] != right.shape[0]:
        raise DimensionError(f"Batch sizes differ: {left.shape[0]} vs {right.shape[0]}")
    return np.hstack([left, right]), single


class GaussianPolicy:
    """pi(a | s, c) = N(net(s ++ c), diag(sigma^2)) with sigma held fixed."""

    role = 'policy'

    def __init__(self, net: Mlp, sigma: Sequence[float], num_codes: int):
        if net.input_dim != OBS_DIM + num_codes or net.output_dim != ACTION_DIM:
            raise DimensionError(
                f"Policy net must map {OBS_DIM + num_codes} -> {ACTION_DIM}, got "
                f"{net.input_dim} -> {net.output_dim}")
        self.net = net
        self.num_codes = int(num_codes)
        self.sigma = np.broadcast_to(np.asarray(sigma, dtype=np.float64), (ACTION_DIM,)).copy()
        if np.any(self.sigma <= 0):
            raise ValueError("Policy sigma must be positive")

    def inputs(self, obs: np.ndarray, codes: np.ndarray) -> Tuple[np.ndarray, bool]:
        return _join(obs, codes, OBS_DIM, self.num_codes)

    def mean(self, obs: np.ndarray, codes: np.ndarray) -> np.ndarray:
        x, single = self.inputs(obs, codes)
        out = self.net.forward(x)
        return out[0] if single else out

    def act(self, obs: np.ndarray, code: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        mean = self.mean(obs, code)
        return mean + self.sigma * rng.normal(0.0, 1.0, size=np.shape(mean))

    def logprob(self, obs: np.ndarray, codes: np.ndarray, actions: np.ndarray,
                values: Optional[np.ndarray] = None) -> np.ndarray:
        """Diagonal-Gaussian log density; ``values`` evaluates at other parameters."""
        x, single = self.inputs(obs, codes)
        net = self.net if values is None else self._with_values(values)
        mean = net.forward(x)
        actions = np.atleast_2d(np.asarray(actions, dtype=np.float64))
        z = (actions - mean) / self.sigma
        out = -0.5 * np.sum(z * z, axis=1) - np.sum(np.log(self.sigma)) - 0.5 * ACTION_DIM * LOG_2PI
        return out[0] if single else out

    def logprob_grad(self, obs: np.ndarray, codes: np.ndarray, actions: np.ndarray,
                     weights: np.ndarray) -> Gradient:
        """Gradient w.r.t. parameters of ``sum(weights * logprob)``."""
        x, _ = self.inputs(obs, codes)
        mean = self.net.forward(x)
        actions = np.atleast_2d(np.asarray(actions, dtype=np.float64))
        weights = np.asarray(weights, dtype=np.float64).reshape(-1, 1)
        gradient, _ = self.net.backward(x, weights * (actions - mean) / self.sigma ** 2)
        return gradient

    def entropy(self) -> float:
        return float(np.sum(0.5 * np.log(2.0 * np.pi * np.e * self.sigma ** 2)))

    def mean_kl(self, obs: np.ndarray, codes: np.ndarray, old_mean: np.ndarray,
                values: Optional[np.ndarray] = None) -> float:
        """Batch-mean KL(pi_old || pi_values) for equal fixed sigma."""
        x, _ = self.inputs(obs, codes)
        net = self.net if values is None else self._with_values(values)
        diff = (net.forward(x) - old_mean) / self.sigma
        return float(np.mean(0.5 * np.sum(diff * diff, axis=1)))

    def _with_values(self, values: np.ndarray) -> Mlp:
        net = self.net.copy()
        net.set_values(values)
        return net

    def copy(self) -> 'GaussianPolicy':
        return GaussianPolicy(self.net.copy(), self.sigma.copy(), self.num_codes)


class Critic:
    """D(s, a); linear head under the Wasserstein objective, sigmoid head under the GAN objective."""

    role = 'critic'

    def __init__(self, net: Mlp, objective: str = 'wgan'):
        if net.input_dim != OBS_DIM + ACTION_DIM or net.output_dim != 1:
            raise DimensionError(f"Critic net must map {OBS_DIM + ACTION_DIM} -> 1")
        if objective not in ('gan', 'wgan'):
            raise ValueError(f"Unknown critic objective '{objective}'")
        self.net = net
        self.objective = objective

    def raw(self, obs: np.ndarray, actions: np.ndarray) -> np.ndarray:
        x, single = _join(obs, actions, OBS_DIM, ACTION_DIM)
        out = self.net.forward(x)[:, 0]
        return out[0] if single else out

    def score(self, obs: np.ndarray, actions: np.ndarray) -> np.ndarray:
        raw = self.raw(obs, actions)
        if self.objective == 'wgan':
            return raw
        return np.exp(-np.logaddexp(0.0, -raw))

    def log_score(self, obs: np.ndarray, actions: np.ndarray) -> np.ndarray:
        """log D(s, a) for the sigmoid head, computed stably."""
        raw = self.raw(obs, actions)
        return -np.logaddexp(0.0, -raw)

    def log_one_minus_score(self, obs: np.ndarray, actions: np.ndarray) -> np.ndarray:
        """log(1 - D(s, a)) for the sigmoid head; finite even when D saturates."""
        raw = self.raw(obs, actions)
        return -np.logaddexp(0.0, raw)

    def raw_grad(self, obs: np.ndarray, actions: np.ndarray, weights: np.ndarray) -> Gradient:
        """Gradient of ``sum(weights * raw)`` w.r.t. parameters."""
        x, _ = _join(obs, actions, OBS_DIM, ACTION_DIM)
        gradient, _ = self.net.backward(x, np.asarray(weights, dtype=np.float64).reshape(-1, 1))
        return gradient

    def copy(self) -> 'Critic':
        return Critic(self.net.copy(), self.objective)


class Posterior:
    """Q(c | s, a) as a softmax over K logits."""

    role = 'posterior'

    def __init__(self, net: Mlp, num_codes: int):
        if net.input_dim != OBS_DIM + ACTION_DIM or net.output_dim != num_codes:
            raise DimensionError(f"Posterior net must map {OBS_DIM + ACTION_DIM} -> {num_codes}")
        self.net = net
        self.num_codes = int(num_codes)

    def logits(self, obs: np.ndarray, actions: np.ndarray) -> np.ndarray:
        x, single = _join(obs, actions, OBS_DIM, ACTION_DIM)
        out = self.net.forward(x)
        return out[0] if single else out

    def log_probs(self, obs: np.ndarray, actions: np.ndarray) -> np.ndarray:
        logits = self.logits(obs, actions)
        shifted = logits - np.max(logits, axis=-1, keepdims=True)
        return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))

    def probs(self, obs: np.ndarray, actions: np.ndarray) -> np.ndarray:
        return np.exp(self.log_probs(obs, actions))

    def code_log_likelihood(self, obs: np.ndarray, actions: np.ndarray, codes: np.ndarray) -> np.ndarray:
        """log Q(c | s, a) for the given one-hot codes, one value per row."""
        log_probs = np.atleast_2d(self.log_probs(obs, actions))
        return np.sum(log_probs * np.atleast_2d(codes), axis=1)

    def code_log_likelihood_grad(self, obs: np.ndarray, actions: np.ndarray, codes: np.ndarray,
                                 weights: np.ndarray) -> Gradient:
        """Gradient of ``sum(weights * log Q(c | s, a))``."""
        x, _ = _join(obs, actions, OBS_DIM, ACTION_DIM)
        log_probs = np.atleast_2d(self.log_probs(obs, actions))
        codes = np.atleast_2d(codes)
        weights = np.asarray(weights, dtype=np.float64).reshape(-1, 1)
        gradient, _ = self.net.backward(x, weights * (codes - np.exp(log_probs)))
        return gradient

    def copy(self) -> 'Posterior':
        return Posterior(self.net.copy(), self.num_codes)


class Baseline:
    """V(s, c): expected discounted return, same input contract as the policy."""

    role = 'baseline'

    def __init__(self, net: Mlp, num_codes: int):
        if net.input_dim != OBS_DIM + num_codes or net.output_dim != 1:
            raise DimensionError(f"Baseline net must map {OBS_DIM + num_codes} -> 1")
        self.net = net
        self.num_codes = int(num_codes)

    def value(self, obs: np.ndarray, codes: np.ndarray) -> np.ndarray:
        x, single = _join(obs, codes, OBS_DIM, self.num_codes)
        out = self.net.forward(x)[:, 0]
        return out[0] if single else out

    def squared_error_grad(self, obs: np.ndarray, codes: np.ndarray, targets: np.ndarray) -> Tuple[float, Gradient]:
        """Mean squared error ``0.5 * mean((V - R)^2)`` and its parameter gradient."""
        x, _ = _join(obs, codes, OBS_DIM, self.num_codes)
        residual = self.net.forward(x)[:, 0] - np.asarray(targets, dtype=np.float64)
        gradient, _ = self.net.backward(x, residual[:, None] / len(residual))
        return float(0.5 * np.mean(residual ** 2)), gradient

    def copy(self) -> 'Baseline':
        return Baseline(self.net.copy(), self.num_codes)


class ModelFactory:
    """Builds the four models from a ``TrainConfig`` with independent init seeds."""

    @staticmethod
    def build(config: TrainConfig):
        m = config.model
        k = m.num_codes
        seeds = np.random.SeedSequence(config.seed).generate_state(4)
        policy = GaussianPolicy(
            Mlp.init([OBS_DIM + k, *m.policy_hidden, ACTION_DIM], m.activation, int(seeds[0])), m.sigma, k)
        critic = Critic(
            Mlp.init([OBS_DIM + ACTION_DIM, *m.critic_hidden, 1], m.critic_activation, int(seeds[1])),
            config.training.objective)
        posterior = Posterior(
            Mlp.init([OBS_DIM + ACTION_DIM, *m.posterior_hidden, k], m.activation, int(seeds[2])), k)
        baseline = Baseline(
            Mlp.init([OBS_DIM + k, *m.baseline_hidden, 1], m.activation, int(seeds[3])), k)
        logger.info(f"Built models: policy {policy.net.layer_sizes}, critic {critic.net.layer_sizes}, "
                    f"posterior {posterior.net.layer_sizes}, baseline {baseline.net.layer_sizes}")
        return policy, critic, posterior, baseline
