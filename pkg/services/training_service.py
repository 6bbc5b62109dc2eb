"""Behavior cloning, adversarial imitation and the InfoGAIL outer loop."""
import logging
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from services.env_service import PairBatch, PlaneEnvironment, Trajectory
from services.eval_service import latent_entropy, posterior_accuracy
from services.model_service import (Baseline, Critic, GaussianPolicy, LatentCode, ModelFactory,
                                    Posterior, check_prior, sample_code)
from services.optim_service import (AdamState, RmspropState, TrpoConfig, TrpoResult, clip_params,
                                    fisher_vector_product, trpo_step)
from utils.config import OptimSettings, TrainConfig, TrainingSettings
from utils.core_math import Gradient
from utils.errors import DatasetError, DimensionError, SizeError, TrainingDivergedError

logger = logging.getLogger(__name__)

METRIC_COLUMNS = ['iter', 'critic_obj', 'e_log_q', 'l_i', 'h_c', 'mean_kl', 'surrogate_gain',
                  'accepted', 'posterior_acc', 'mean_return', 'wall_ms']


class ReplayBuffer:
    """Bounded FIFO store of generated trajectories."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise SizeError(f"Replay buffer capacity must be positive, got {capacity}")
        self.capacity = capacity
        self.buffer = deque(maxlen=capacity)

    def push(self, trajs: Sequence[Trajectory]) -> None:
        for traj in trajs:
            self.buffer.append(traj)

    def sample(self, n: int, rng: np.random.Generator) -> PairBatch:
        """``n`` state-action pairs drawn uniformly over all buffered pairs."""
        if not self.buffer:
            raise DatasetError("Cannot sample from an empty replay buffer")
        return PairBatch.from_trajectories(list(self.buffer)).sample(n, rng)

    def __len__(self) -> int:
        return len(self.buffer)


class RewardAugmentation:
    """State-only surrogate reward r(s), evaluated on the current position of each observation."""

    def __init__(self, rule: Optional[Callable[[np.ndarray], np.ndarray]] = None, name: str = 'none'):
        self.rule = rule
        self.name = name

    @classmethod
    def stay_in_annulus(cls, inner: float, outer: float) -> 'RewardAugmentation':
        def rule(positions: np.ndarray) -> np.ndarray:
            radius = np.linalg.norm(positions, axis=1)
            return -np.maximum(0.0, radius - outer) - np.maximum(0.0, inner - radius)
        return cls(rule, 'stay_in_annulus')

    @classmethod
    def from_settings(cls, training: TrainingSettings) -> 'RewardAugmentation':
        if training.reward_augmentation == 'stay_in_annulus':
            return cls.stay_in_annulus(training.annulus_inner, training.annulus_outer)
        return cls()

    def __call__(self, observations: np.ndarray) -> np.ndarray:
        observations = np.atleast_2d(observations)
        if self.rule is None:
            return np.zeros(len(observations))
        return np.asarray(self.rule(observations[:, -2:]), dtype=np.float64)


@dataclass
class TrainingRun:
    policy: GaussianPolicy
    critic: Optional[Critic] = None
    posterior: Optional[Posterior] = None
    baseline: Optional[Baseline] = None
    metrics: pd.DataFrame = field(default_factory=lambda: pd.DataFrame(columns=METRIC_COLUMNS))
    bc_losses: List[float] = field(default_factory=list)
    trpo_results: List[TrpoResult] = field(default_factory=list)

    def models(self) -> Dict[str, object]:
        models = {'policy': self.policy, 'critic': self.critic,
                  'posterior': self.posterior, 'baseline': self.baseline}
        return {role: model for role, model in models.items() if model is not None}


def _check_finite(name: str, value) -> None:
    if not np.all(np.isfinite(value)):
        logger.error(f"Non-finite {name}: {value}")
        raise TrainingDivergedError(f"Training diverged: {name} is non-finite")


class TrainingService:
    @staticmethod
    def apply_gradient(net, optimizer: Union[AdamState, RmspropState], gradient: Gradient,
                       ascend: bool = False) -> None:
        """One optimizer step on ``net`` after checking the gradient matches its parameters."""
        gradient.check_compatible(net.params)
        if isinstance(optimizer, RmspropState):
            values = optimizer.step(net.params.values, gradient, maximize=ascend)
        else:
            values = optimizer.step(net.params.values, gradient, minimize=not ascend)
        net.set_values(values)

    @staticmethod
    def bc_pretrain(policy: GaussianPolicy, demos: Sequence[Trajectory], epochs: int,
                    prior: Sequence[float], rng: np.random.Generator,
                    lr: float = 1e-3, batch_size: int = 256) -> List[float]:
        """Maximum-likelihood fit of expert actions; returns mean NLL per epoch.

        Demonstrations carry no codes, so each one gets a code drawn from the prior and held
        fixed for all epochs.
        """
        if not demos:
            raise DatasetError("Behavior cloning needs at least one demonstration")
        prior = check_prior(prior)
        coded = [Trajectory(t.observations, t.actions, sample_code(prior, rng).one_hot, t.mode_label)
                 for t in demos]
        batch = PairBatch.from_trajectories(coded)
        adam = AdamState(len(policy.net.params), lr=lr)
        losses = []
        for epoch in range(epochs):
            order = rng.permutation(len(batch))
            epoch_loss = 0.0
            for start in range(0, len(order), batch_size):
                chunk = batch.subset(order[start:start + batch_size])
                nll = -policy.logprob(chunk.observations, chunk.codes, chunk.actions)
                gradient = policy.logprob_grad(chunk.observations, chunk.codes, chunk.actions,
                                               np.full(len(chunk), -1.0 / len(chunk)))
                TrainingService.apply_gradient(policy.net, adam, gradient)
                epoch_loss += float(np.sum(nll))
            losses.append(epoch_loss / len(batch))
            _check_finite('behavior cloning loss', losses[-1])
            logger.debug(f"BC epoch {epoch + 1}/{epochs}: mean NLL {losses[-1]:.6f}")
        if losses:
            logger.info(f"Behavior cloning finished: NLL {losses[0]:.4f} -> {losses[-1]:.4f}")
        return losses

    @staticmethod
    def collect_rollouts(policy: GaussianPolicy, env: PlaneEnvironment, prior: Sequence[float],
                         n: int, horizon: int, rng: np.random.Generator, workers: int = 1,
                         code_indices: Optional[Sequence[int]] = None) -> List[Trajectory]:
        """``n`` rollouts, each with one code held fixed for all ``horizon`` steps.

        Every rollout draws from its own child stream seeded in index order, so the
        result does not depend on ``workers``.
        """
        if n < 1:
            raise SizeError(f"Number of rollouts must be >= 1, got {n}")
        prior = check_prior(prior)
        child_seeds = rng.integers(0, 2 ** 63 - 1, size=n)

        def rollout(index: int) -> Trajectory:
            stream = np.random.default_rng(int(child_seeds[index]))
            if code_indices is None:
                code = sample_code(prior, stream)
            else:
                code = LatentCode.from_index(int(code_indices[index]), prior.size)
            state = env.reset(stream)
            observations = np.zeros((horizon, 2 * state.history.shape[0]))
            actions = np.zeros((horizon, 2))
            for t in range(horizon):
                observations[t] = env.observe(state)
                actions[t] = policy.act(observations[t], code.one_hot, stream)
                state = env.step(state, actions[t])
            return Trajectory(observations, actions, code.one_hot, None, state.position.copy())

        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                return list(pool.map(rollout, range(n)))
        return [rollout(i) for i in range(n)]

    @staticmethod
    def critic_objective(critic: Critic, gen: PairBatch, expert: PairBatch) -> float:
        if critic.objective == 'wgan':
            return float(np.mean(critic.score(gen.observations, gen.actions))
                         - np.mean(critic.score(expert.observations, expert.actions)))
        return float(np.mean(critic.log_score(gen.observations, gen.actions))
                     + np.mean(critic.log_one_minus_score(expert.observations, expert.actions)))

    @staticmethod
    def critic_gradient(critic: Critic, gen: PairBatch, expert: PairBatch) -> Gradient:
        n = len(gen)
        if critic.objective == 'wgan':
            g_gen = critic.raw_grad(gen.observations, gen.actions, np.full(n, 1.0 / n))
            g_exp = critic.raw_grad(expert.observations, expert.actions, np.full(n, 1.0 / n))
            return Gradient(g_gen.values - g_exp.values)
        d_gen = critic.score(gen.observations, gen.actions)
        d_exp = critic.score(expert.observations, expert.actions)
        g_gen = critic.raw_grad(gen.observations, gen.actions, (1.0 - d_gen) / n)
        g_exp = critic.raw_grad(expert.observations, expert.actions, -d_exp / n)
        return Gradient(g_gen.values + g_exp.values)

    @staticmethod
    def update_critic(critic: Critic, gen: PairBatch, expert: PairBatch, training: TrainingSettings,
                      optimizer: Union[AdamState, RmspropState]) -> float:
        """One ascent step on the critic objective; returns the objective before the step.

        Wasserstein: E_gen[D] - E_exp[D] with RMSprop and weight clipping.
        GAN: E_gen[log D] + E_exp[log(1 - D)] with a sigmoid head.
        """
        if len(gen) == 0 or len(expert) == 0:
            raise DatasetError("Critic update needs non-empty generated and expert batches")
        if len(gen) != len(expert):
            raise DimensionError(f"Generated and expert batches differ in size: {len(gen)} vs {len(expert)}")
        objective = TrainingService.critic_objective(critic, gen, expert)
        _check_finite('critic objective', objective)
        gradient = TrainingService.critic_gradient(critic, gen, expert)
        TrainingService.apply_gradient(critic.net, optimizer, gradient, ascend=True)
        if critic.objective == 'wgan':
            critic.net.set_values(clip_params(critic.net.params.values, training.clip_bound))
        return objective

    @staticmethod
    def posterior_loss(posterior: Posterior, gen: PairBatch, lambda1: float):
        """``-lambda1 * E[log Q(c|s,a)]`` and its gradient."""
        if gen.codes is None:
            raise DatasetError("Posterior update needs the generation-time code of every pair")
        n = len(gen)
        log_q = posterior.code_log_likelihood(gen.observations, gen.actions, gen.codes)
        gradient = posterior.code_log_likelihood_grad(gen.observations, gen.actions, gen.codes,
                                                      np.full(n, -lambda1 / n))
        return float(-lambda1 * np.mean(log_q)), gradient

    @staticmethod
    def update_posterior(posterior: Posterior, gen: PairBatch, lambda1: float, optimizer: AdamState) -> float:
        """One Adam step increasing code log-likelihood; returns E[log Q] before the step."""
        if gen.codes is None:
            raise DatasetError("Posterior update needs the generation-time code of every pair")
        e_log_q = float(np.mean(posterior.code_log_likelihood(gen.observations, gen.actions, gen.codes)))
        _check_finite('posterior log-likelihood', e_log_q)
        if lambda1 == 0.0:
            return e_log_q
        _, gradient = TrainingService.posterior_loss(posterior, gen, lambda1)
        TrainingService.apply_gradient(posterior.net, optimizer, gradient)
        return e_log_q

    @staticmethod
    def assemble_step_rewards(traj: Trajectory, critic: Critic, posterior: Optional[Posterior],
                              aug: RewardAugmentation, training: TrainingSettings) -> np.ndarray:
        """r_t = -D (or -log D) + lambda1 log Q(c|s_t,a_t) + lambda0 r_aug(s_t).

        Constant terms (H(c), the fixed policy entropy) are left out.
        """
        if traj.code is None:
            raise DatasetError("Reward assembly needs the trajectory's latent code")
        if critic.objective == 'wgan':
            rewards = -critic.score(traj.observations, traj.actions)
        else:
            rewards = -critic.log_score(traj.observations, traj.actions)
        rewards = np.atleast_1d(np.asarray(rewards, dtype=np.float64))
        if training.lambda1 != 0.0:
            codes = np.tile(traj.code, (len(traj), 1))
            rewards = rewards + training.lambda1 * posterior.code_log_likelihood(
                traj.observations, traj.actions, codes)
        if training.lambda0 != 0.0:
            rewards = rewards + training.lambda0 * aug(traj.observations)
        return rewards

    @staticmethod
    def discounted_returns(rewards: np.ndarray, gamma: float) -> np.ndarray:
        returns = np.zeros(len(rewards))
        running = 0.0
        for t in range(len(rewards) - 1, -1, -1):
            running = rewards[t] + gamma * running
            returns[t] = running
        return returns

    @staticmethod
    def compute_advantages(rewards: np.ndarray, baseline: Baseline, traj: Trajectory, gamma: float):
        """Return-to-go and ``R_t - V(s_t, c)``; returns ``(returns, advantages)``."""
        rewards = np.asarray(rewards, dtype=np.float64).reshape(-1)
        if len(rewards) != len(traj):
            raise DimensionError(f"{len(rewards)} rewards for a trajectory of length {len(traj)}")
        returns = TrainingService.discounted_returns(rewards, gamma)
        codes = np.tile(traj.code, (len(traj), 1))
        values = np.atleast_1d(baseline.value(traj.observations, codes))
        return returns, returns - values

    @staticmethod
    def normalize_advantages(advantages: np.ndarray) -> np.ndarray:
        advantages = np.asarray(advantages, dtype=np.float64)
        std = advantages.std()
        centered = advantages - advantages.mean()
        return centered / std if std > 1e-12 else centered

    @staticmethod
    def fit_baseline(baseline: Baseline, obs: np.ndarray, codes: np.ndarray, returns: np.ndarray,
                     optimizer: AdamState, steps: int) -> float:
        loss = 0.0
        for _ in range(steps):
            loss, gradient = baseline.squared_error_grad(obs, codes, returns)
            TrainingService.apply_gradient(baseline.net, optimizer, gradient)
        return loss

    @staticmethod
    def policy_update(policy: GaussianPolicy, obs: np.ndarray, codes: np.ndarray, actions: np.ndarray,
                      advantages: np.ndarray, old_logprobs: np.ndarray, cfg: TrpoConfig) -> TrpoResult:
        """TRPO on ``E[pi/pi_old * A]`` under ``mean KL <= kl_radius``; rejected steps change nothing."""
        advantages = np.asarray(advantages, dtype=np.float64)
        if not np.all(np.isfinite(advantages)):
            raise ValueError("Advantages must be finite")
        n = len(advantages)
        old_values = policy.net.params.values.copy()
        old_mean = policy.mean(obs, codes)
        surrogate_grad = policy.logprob_grad(obs, codes, actions, advantages / n)
        surrogate_grad.check_compatible(policy.net.params)

        def surrogate(values: np.ndarray) -> float:
            ratio = np.exp(policy.logprob(obs, codes, actions, values=values) - old_logprobs)
            return float(np.mean(ratio * advantages))

        def kl(values: np.ndarray) -> float:
            return policy.mean_kl(obs, codes, old_mean, values=values)

        def fvp(v: np.ndarray) -> np.ndarray:
            return fisher_vector_product(policy, obs, codes, v, cfg.damping)

        result = trpo_step(old_values, surrogate_grad, kl, surrogate, fvp, cfg)
        if result.accepted:
            policy.net.set_values(result.values)
        return result


class InfoGailTrainer:
    """Runs behavior cloning followed by the adversarial loop with an optional code posterior."""

    def __init__(self, config: TrainConfig, env: PlaneEnvironment, demos: Sequence[Trajectory],
                 checkpoint_fn: Optional[Callable[[str, Dict[str, object]], None]] = None):
        if not demos:
            raise DatasetError("Training needs at least one demonstration")
        self.config = config
        self.env = env
        self.demos = list(demos)
        self.checkpoint_fn = checkpoint_fn
        self.prior = np.asarray(config.mode_prior)
        self.rng = np.random.default_rng(config.seed)
        self.policy, self.critic, self.posterior, self.baseline = ModelFactory.build(config)
        self.expert_pairs = PairBatch.from_trajectories(self.demos)

    def pretrain(self) -> List[float]:
        o = self.config.optim
        return TrainingService.bc_pretrain(self.policy, self.demos, self.config.training.bc_epochs,
                                           self.prior, self.rng, o.bc_lr, o.bc_batch_size)

    def _critic_optimizer(self, o: OptimSettings):
        size = len(self.critic.net.params)
        if self.config.training.objective == 'wgan':
            return RmspropState(size, lr=o.rmsprop_lr, rho=o.rmsprop_rho, eps=o.rmsprop_eps)
        return AdamState(size, lr=o.adam_lr, beta1=o.adam_beta1, beta2=o.adam_beta2, eps=o.adam_eps)

    def train(self) -> TrainingRun:
        cfg, t, o = self.config, self.config.training, self.config.optim
        logger.info("=" * 60)
        logger.info("INFOGAIL TRAINING")
        logger.info("=" * 60)
        logger.info(f"Objective: {t.objective}")
        logger.info(f"lambda0={t.lambda0} lambda1={t.lambda1} lambda2={t.lambda2} (entropy term inert)")
        logger.info(f"Iterations: {t.iters}, rollouts per iteration: {t.rollouts_per_iter}, "
                    f"batch size: {t.batch_size}, replay: {t.use_replay}")
        logger.info("=" * 60)

        run = TrainingRun(self.policy, self.critic, self.posterior, self.baseline)
        run.bc_losses = self.pretrain()

        if t.objective == 'wgan':
            self.critic.net.set_values(clip_params(self.critic.net.params.values, t.clip_bound))
        critic_opt = self._critic_optimizer(o)
        posterior_opt = AdamState(len(self.posterior.net.params), lr=o.posterior_lr, beta1=o.adam_beta1,
                                  beta2=o.adam_beta2, eps=o.adam_eps)
        baseline_opt = AdamState(len(self.baseline.net.params), lr=o.baseline_lr)
        trpo_cfg = TrpoConfig.from_settings(o)
        augmentation = RewardAugmentation.from_settings(t)
        buffer = ReplayBuffer(t.buffer_capacity) if t.use_replay else None
        h_c = latent_entropy(self.prior)
        # GAIL runs (lambda1 = 0) still fit Q for its accuracy metric; it never enters the rewards.
        posterior_weight = t.lambda1 if t.lambda1 > 0.0 else 1.0
        rows = []

        for iteration in range(1, t.iters + 1):
            started = time.perf_counter()
            rollouts = TrainingService.collect_rollouts(
                self.policy, self.env, self.prior, t.rollouts_per_iter, cfg.env.horizon, self.rng, t.workers)
            latest = PairBatch.from_trajectories(rollouts)
            if buffer is not None:
                buffer.push(rollouts)

            def gen_batch() -> PairBatch:
                return buffer.sample(t.batch_size, self.rng) if buffer is not None \
                    else latest.sample(t.batch_size, self.rng)

            critic_obj = 0.0
            for _ in range(t.critic_steps):
                gen = gen_batch()
                expert = self.expert_pairs.sample(t.batch_size, self.rng)
                critic_obj = TrainingService.update_critic(self.critic, gen, expert, t, critic_opt)
            for _ in range(t.posterior_steps):
                TrainingService.update_posterior(self.posterior, gen_batch(), posterior_weight, posterior_opt)

            rewards = [TrainingService.assemble_step_rewards(traj, self.critic, self.posterior, augmentation, t)
                       for traj in rollouts]
            _check_finite('step rewards', np.concatenate(rewards))
            returns, advantages = [], []
            for traj, traj_rewards in zip(rollouts, rewards):
                traj_returns, traj_advantages = TrainingService.compute_advantages(
                    traj_rewards, self.baseline, traj, t.gamma)
                returns.append(traj_returns)
                advantages.append(traj_advantages)
            advantages = TrainingService.normalize_advantages(np.concatenate(advantages))
            returns = np.concatenate(returns)
            TrainingService.fit_baseline(self.baseline, latest.observations, latest.codes, returns,
                                         baseline_opt, o.baseline_steps)

            old_logprobs = self.policy.logprob(latest.observations, latest.codes, latest.actions)
            result = TrainingService.policy_update(self.policy, latest.observations, latest.codes,
                                                   latest.actions, advantages, old_logprobs, trpo_cfg)
            run.trpo_results.append(result)

            e_log_q = float(np.mean(self.posterior.code_log_likelihood(
                latest.observations, latest.actions, latest.codes)))
            _check_finite('E[log Q]', e_log_q)
            posterior_acc = float('nan')
            if self.expert_pairs.labels is not None:
                posterior_acc = posterior_accuracy(self.posterior, self.expert_pairs).accuracy_best_perm
            elapsed_ms = (time.perf_counter() - started) * 1000.0 if t.record_wall_time else 0.0
            rows.append({
                'iter': iteration,
                'critic_obj': critic_obj,
                'e_log_q': e_log_q,
                'l_i': e_log_q + h_c,
                'h_c': h_c,
                'mean_kl': result.mean_kl,
                'surrogate_gain': result.surrogate_gain,
                'accepted': bool(result.accepted),
                'posterior_acc': posterior_acc,
                'mean_return': float(np.mean([r[0] for r in np.split(returns, len(rollouts))])),
                'wall_ms': elapsed_ms,
            })
            level = logging.INFO if iteration % t.log_every == 0 or iteration == t.iters else logging.DEBUG
            logger.log(level, f"iter {iteration}/{t.iters}: critic_obj={critic_obj:.5f} "
                              f"L_I={e_log_q + h_c:.4f} kl={result.mean_kl:.5f} "
                              f"accepted={result.accepted} posterior_acc={posterior_acc:.3f}")
            if self.checkpoint_fn is not None and iteration % t.checkpoint_every == 0:
                self.checkpoint_fn(f"iter_{iteration}", run.models())

        run.metrics = pd.DataFrame(rows, columns=METRIC_COLUMNS)
        accepted = sum(r.accepted for r in run.trpo_results)
        logger.info(f"Training finished: {accepted}/{len(run.trpo_results)} policy steps accepted")
        return run


def write_metrics_log(metrics: pd.DataFrame, path: Union[str, Path]) -> Path:
    path = Path(path)
    metrics.to_csv(path, index=False, float_format='%.17g', na_rep='', lineterminator='\n')
    logger.info(f"Wrote metrics log with {len(metrics)} rows to {path}")
    return path


def read_metrics_log(path: Union[str, Path]) -> pd.DataFrame:
    return pd.read_csv(path, float_precision='round_trip')
