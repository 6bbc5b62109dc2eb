"""Command-line entry point: demo generation, training, evaluation and plotting."""
import argparse
import copy
import json
import logging
import os
import sys
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd
import psutil
from dotenv import load_dotenv

from services import VERSION
from services.charts_service import ChartsService
from services.checkpoint_service import CheckpointService
from services.env_service import ExpertMixture, PairBatch, PlaneEnvironment, load_demos, save_demos
from services.eval_service import (export_trajectories, final_distance_to_experts, latent_entropy,
                                   mi_lower_bound, posterior_accuracy, read_trajectories,
                                   trajectory_accuracy)
from services.training_service import InfoGailTrainer, TrainingService, write_metrics_log
from utils.config import TrainConfig, parse_config
from utils.errors import InfoGailError

logger = logging.getLogger(__name__)

ALGOS = ('bc', 'gail', 'infogail')
DEFAULT_OUTPUT_ROOT = 'runs'


def configure_logging(level: str = 'INFO') -> None:
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        stream=sys.stderr)


def output_root() -> Path:
    return Path(os.getenv('INFOGAIL_OUTPUT_ROOT', DEFAULT_OUTPUT_ROOT))


def log_startup(command: str, seed: Optional[int]) -> None:
    memory_mb = psutil.Process().memory_info().rss / 1024 / 1024
    logger.info("=" * 60)
    logger.info("INFOGAIL 2D")
    logger.info("=" * 60)
    logger.info(f"Version: {VERSION}")
    logger.info("Timestamp: " + datetime.now().isoformat())
    logger.info(f"Command: {command}")
    if seed is not None:
        logger.info(f"Seed: {seed}")
    logger.info(f"Memory usage: {memory_mb:.1f} MB")
    logger.info("=" * 60)


def log_finish(command: str) -> None:
    memory_mb = psutil.Process().memory_info().rss / 1024 / 1024
    logger.info("=" * 60)
    logger.info(f"Command {command} completed")
    logger.info(f"Memory usage: {memory_mb:.1f} MB")
    logger.info("=" * 60)


def environment_from_config(config: TrainConfig) -> PlaneEnvironment:
    e = config.env
    mixture = ExpertMixture.concentric(e.radii, e.orientation, e.steer_gain, e.noise_sigma)
    return PlaneEnvironment(mixture, e.speed_dt)


def cmd_gen_demos(config: TrainConfig, out_path: Path) -> Path:
    env = environment_from_config(config)
    demos = env.generate_demos(config.env.n_per_mode, config.env.horizon, config.seed)
    out_path = Path(out_path)
    if out_path.parent and not out_path.parent.exists():
        out_path.parent.mkdir(parents=True, exist_ok=True)
    return save_demos(out_path, env, demos)


def cmd_train(config: TrainConfig, demos_path: Path, algo: str, out_dir: Path) -> Path:
    """Train one of bc / gail / infogail and write checkpoints, metrics and the run manifest."""
    if algo not in ALGOS:
        raise InfoGailError(f"Unknown algorithm '{algo}', expected one of {ALGOS}")
    config = copy.deepcopy(config)
    if algo == 'gail':
        config.training.lambda1 = 0.0
    env, demos = load_demos(demos_path)
    if env.speed_dt != config.env.speed_dt:
        logger.warning(f"Demo speed_dt {env.speed_dt} differs from config {config.env.speed_dt}; "
                       f"using the dataset value")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    metrics_name = 'metrics.csv'

    def snapshot(tag: str, models: Dict[str, Any]) -> None:
        CheckpointService.checkpoint_save(models, out_dir / 'checkpoints' / tag, algo, config)

    trainer = InfoGailTrainer(config, env, demos, checkpoint_fn=snapshot)
    if algo == 'bc':
        losses = trainer.pretrain()
        frame = pd.DataFrame({'epoch': np.arange(1, len(losses) + 1), 'nll': losses})
        write_metrics_log(frame, out_dir / metrics_name)
        models = {'policy': trainer.policy}
    else:
        run = trainer.train()
        write_metrics_log(run.metrics, out_dir / metrics_name)
        models = run.models()
    return CheckpointService.checkpoint_save(models, out_dir, algo, config, metrics_name,
                                             prefix='checkpoints/final')


def cmd_eval(checkpoint_dir: Path, demos_path: Path, n_rollouts: int, out_dir: Optional[Path] = None,
             seed: Optional[int] = None, workers: int = 1) -> Dict[str, Any]:
    """Posterior accuracy on expert pairs plus code-cycled policy rollouts."""
    checkpoint_dir = Path(checkpoint_dir)
    manifest, models = CheckpointService.checkpoint_load(checkpoint_dir)
    config = manifest.train_config()
    env, demos = load_demos(demos_path)
    policy = models['policy']
    prior = np.full(policy.num_codes, 1.0 / policy.num_codes)
    code_indices = [i % policy.num_codes for i in range(n_rollouts)]
    rng = np.random.default_rng(config.seed if seed is None else seed)
    rollouts = TrainingService.collect_rollouts(policy, env, prior, n_rollouts, config.env.horizon,
                                                rng, workers, code_indices)
    report: Dict[str, Any] = {
        'algo': manifest.algo,
        'n_rollouts': n_rollouts,
        'rollouts_per_code': {str(k): code_indices.count(k) for k in range(policy.num_codes)},
        'mean_final_distance': final_distance_to_experts(rollouts, env.mixture),
        'h_c': latent_entropy(prior),
    }
    posterior = models.get('posterior')
    if posterior is not None:
        accuracy = posterior_accuracy(posterior, PairBatch.from_trajectories(demos))
        accuracy.h_c = report['h_c']
        accuracy.l_i_estimate = mi_lower_bound(posterior, PairBatch.from_trajectories(rollouts), prior)
        report.update(accuracy.to_dict())
        report['trajectory_accuracy'] = trajectory_accuracy(posterior, demos)

    out_dir = Path(out_dir) if out_dir is not None else checkpoint_dir / 'eval'
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / 'eval_report.json', 'w', encoding='utf-8') as handle:
        json.dump(report, handle, indent=2, sort_keys=True)
        handle.write('\n')
    export_trajectories(rollouts, out_dir / 'trajectories.csv')
    logger.info("=" * 60)
    logger.info("EVALUATION REPORT")
    logger.info("=" * 60)
    for key in ('accuracy_best_perm', 'trajectory_accuracy', 'l_i_estimate', 'mean_final_distance'):
        if key in report:
            logger.info(f"{key}: {report[key]}")
    logger.info("=" * 60)
    return report


def cmd_plot(export_path: Path, out_svg: Path) -> Path:
    return ChartsService.render_svg(read_trajectories(export_path), out_svg)


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument('--config', type=Path, help='TOML configuration file')
    parser.add_argument('--seed', type=int)
    parser.add_argument('--objective', choices=['gan', 'wgan'])
    parser.add_argument('--use-replay', action=argparse.BooleanOptionalAction, default=None)
    parser.add_argument('--lambda0', type=float)
    parser.add_argument('--lambda1', type=float)
    parser.add_argument('--lambda2', type=float)
    parser.add_argument('--iters', type=int)
    parser.add_argument('--workers', type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='infogail', description='Behavior cloning, GAIL and InfoGAIL in 2D')
    parser.add_argument('--log-level', default=None, help='DEBUG, INFO, WARNING or ERROR')
    commands = parser.add_subparsers(dest='command', required=True)

    gen = commands.add_parser('gen-demos', help='generate the expert demonstration dataset')
    _add_config_flags(gen)
    gen.add_argument('--out', type=Path, help='demo dataset path')

    train = commands.add_parser('train', help='train bc, gail or infogail')
    _add_config_flags(train)
    train.add_argument('--demos', type=Path, required=True)
    train.add_argument('--algo', choices=ALGOS, default='infogail')
    train.add_argument('--out', type=Path, help='run directory')

    evaluate = commands.add_parser('eval', help='evaluate a trained run')
    evaluate.add_argument('--checkpoint-dir', type=Path, required=True)
    evaluate.add_argument('--demos', type=Path, required=True)
    evaluate.add_argument('--n-rollouts', type=int, default=30)
    evaluate.add_argument('--seed', type=int)
    evaluate.add_argument('--workers', type=int, default=1)
    evaluate.add_argument('--out', type=Path, help='report directory')

    plot = commands.add_parser('plot', help='render a trajectory export as SVG')
    plot.add_argument('--export', type=Path, required=True)
    plot.add_argument('--out', type=Path, required=True)
    return parser


def config_from_args(args: argparse.Namespace) -> TrainConfig:
    overrides = {
        'seed': args.seed,
        'training.objective': args.objective,
        'training.use_replay': args.use_replay,
        'training.lambda0': args.lambda0,
        'training.lambda1': args.lambda1,
        'training.lambda2': args.lambda2,
        'training.iters': args.iters,
        'training.workers': args.workers,
    }
    return parse_config(args.config, overrides)


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level or os.getenv('INFOGAIL_LOG_LEVEL', 'INFO'))
    try:
        if args.command == 'gen-demos':
            config = config_from_args(args)
            log_startup(args.command, config.seed)
            out = args.out or output_root() / 'demos.json'
            print(cmd_gen_demos(config, out))
        elif args.command == 'train':
            config = config_from_args(args)
            log_startup(args.command, config.seed)
            out = args.out or output_root() / f"{args.algo}_seed{config.seed}"
            print(cmd_train(config, args.demos, args.algo, out))
        elif args.command == 'eval':
            log_startup(args.command, args.seed)
            if args.n_rollouts < 1:
                raise InfoGailError(f"--n-rollouts must be >= 1, got {args.n_rollouts}")
            report = cmd_eval(args.checkpoint_dir, args.demos, args.n_rollouts, args.out, args.seed, args.workers)
            print(json.dumps(report, sort_keys=True))
        elif args.command == 'plot':
            log_startup(args.command, None)
            print(cmd_plot(args.export, args.out))
    except (InfoGailError, OSError) as e:
        message = ' '.join(str(e).split())
        logger.debug("Command failed", exc_info=True)
        print(f"error: {type(e).__name__}: {message}", file=sys.stderr)
        return 1
    log_finish(args.command)
    return 0


if __name__ == "__main__":
    sys.exit(main())
