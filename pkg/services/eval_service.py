"""Mode-recovery accuracy, mutual-information bound and trajectory export."""
import itertools
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from services.env_service import ExpertMixture, PairBatch, Trajectory
from utils.errors import DatasetError

logger = logging.getLogger(__name__)

EXPORT_COLUMNS = ['traj_id', 'step', 'x', 'y', 'code_index', 'mode_label']


@dataclass
class EvalReport:
    accuracy_best_perm: float
    permutation: Dict[int, int]
    per_mode_confusion: np.ndarray
    identity_accuracy: float = 0.0
    l_i_estimate: Optional[float] = None
    h_c: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            'accuracy_best_perm': self.accuracy_best_perm,
            'identity_accuracy': self.identity_accuracy,
            'permutation': {str(code): mode for code, mode in self.permutation.items()},
            'per_mode_confusion': self.per_mode_confusion.astype(int).tolist(),
            'l_i_estimate': self.l_i_estimate,
            'h_c': self.h_c,
        }


@dataclass
class TrackRecord:
    """One exported trajectory: positions per step plus its code and mode label (-1 when absent)."""
    traj_id: int
    points: np.ndarray
    code_index: int = -1
    mode_label: int = -1


def best_permutation_accuracy(predicted: np.ndarray, labels: np.ndarray, num_codes: int):
    """Accuracy after the code->mode relabeling that maximizes agreement.

    Exhaustive over all permutations; ties keep the first permutation in lexicographic order.
    Returns ``(accuracy, permutation, confusion, identity_accuracy)``.
    """
    predicted = np.asarray(predicted, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    size = max(num_codes, int(labels.max()) + 1 if labels.size else 0)
    confusion = np.zeros((size, size), dtype=np.int64)
    np.add.at(confusion, (labels, predicted), 1)
    total = max(int(labels.size), 1)
    best_correct, best_perm = -1, tuple(range(size))
    for perm in itertools.permutations(range(size)):
        correct = int(sum(confusion[perm[code], code] for code in range(size)))
        if correct > best_correct:
            best_correct, best_perm = correct, perm
    identity = float(np.trace(confusion)) / total
    permutation = {code: int(best_perm[code]) for code in range(size)}
    return best_correct / total, permutation, confusion, identity


def posterior_accuracy(posterior, labeled_pairs: PairBatch) -> EvalReport:
    """Per-pair argmax_c Q(c|s,a) scored against ground-truth modes under the best relabeling."""
    if labeled_pairs.labels is None:
        raise DatasetError("Posterior accuracy needs a ground-truth mode label on every pair")
    log_probs = np.atleast_2d(posterior.log_probs(labeled_pairs.observations, labeled_pairs.actions))
    predicted = np.argmax(log_probs, axis=1)
    accuracy, permutation, confusion, identity = best_permutation_accuracy(
        predicted, labeled_pairs.labels, posterior.num_codes)
    return EvalReport(accuracy, permutation, confusion, identity)


def trajectory_code_scores(posterior, traj: Trajectory) -> np.ndarray:
    """Summed per-pair log Q over a trajectory, one score per code."""
    return np.sum(np.atleast_2d(posterior.log_probs(traj.observations, traj.actions)), axis=0)


def trajectory_accuracy(posterior, trajs: Sequence[Trajectory]) -> float:
    if not trajs or any(t.mode_label is None for t in trajs):
        raise DatasetError("Trajectory accuracy needs labeled trajectories")
    predicted = [int(np.argmax(trajectory_code_scores(posterior, t))) for t in trajs]
    labels = [t.mode_label for t in trajs]
    accuracy, _, _, _ = best_permutation_accuracy(np.array(predicted), np.array(labels), posterior.num_codes)
    return accuracy


def latent_entropy(prior: Sequence[float]) -> float:
    prior = np.asarray(prior, dtype=np.float64).reshape(-1)
    if prior.size == 0 or np.any(prior < 0) or abs(prior.sum() - 1.0) > 1e-9:
        raise ValueError(f"Invalid distribution {prior.tolist()}")
    nonzero = prior[prior > 0]
    return float(-np.sum(nonzero * np.log(nonzero)))


def mi_lower_bound(posterior, gen_pairs: PairBatch, prior: Sequence[float]) -> float:
    """E[log Q(c|s,a)] + H(c) over pairs carrying their generation codes."""
    if gen_pairs.codes is None:
        raise DatasetError("Mutual-information bound needs the generation code of every pair")
    log_q = posterior.code_log_likelihood(gen_pairs.observations, gen_pairs.actions, gen_pairs.codes)
    return float(np.mean(log_q)) + latent_entropy(prior)


def final_distance_to_experts(trajs: Sequence[Trajectory], mixture: ExpertMixture) -> float:
    """Mean distance from each trajectory's final position to the nearest expert circle."""
    finals = [t.final_position if t.final_position is not None else t.positions[-1] for t in trajs]
    if not finals:
        raise DatasetError("No trajectories to measure")
    return float(np.mean([mixture.distance_to_nearest(p) for p in finals]))


def to_track_records(trajs: Sequence[Trajectory]) -> List[TrackRecord]:
    return [TrackRecord(i, t.positions.copy(), t.code_index,
                        -1 if t.mode_label is None else int(t.mode_label))
            for i, t in enumerate(trajs)]


def export_trajectories(trajs: Sequence[Trajectory], path: Union[str, Path]) -> Path:
    """Delimited text, one row per step, ordered by trajectory then step."""
    path = Path(path)
    rows = []
    for record in to_track_records(trajs):
        for step, (x, y) in enumerate(record.points):
            rows.append((record.traj_id, step, float(x), float(y), record.code_index, record.mode_label))
    frame = pd.DataFrame(rows, columns=EXPORT_COLUMNS)
    frame.to_csv(path, index=False, float_format='%.17g', lineterminator='\n')
    logger.info(f"Exported {len(trajs)} trajectories ({len(rows)} rows) to {path}")
    return path


def read_trajectories(path: Union[str, Path]) -> List[TrackRecord]:
    path = Path(path)
    try:
        frame = pd.read_csv(path, float_precision='round_trip')
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as e:
        raise DatasetError(f"Cannot parse trajectory export {path}: {e}") from e
    missing = [c for c in EXPORT_COLUMNS if c not in frame.columns]
    if missing:
        raise DatasetError(f"Trajectory export {path} lacks columns {missing}")
    records = []
    for traj_id, group in frame.groupby('traj_id', sort=True):
        group = group.sort_values('step')
        records.append(TrackRecord(int(traj_id), group[['x', 'y']].to_numpy(dtype=np.float64),
                                   int(group['code_index'].iloc[0]), int(group['mode_label'].iloc[0])))
    return records
