import numpy as np
import pytest

from conftest import one_hot_rows
from services.env_service import ExpertMixture, PairBatch, Trajectory
from services.eval_service import (best_permutation_accuracy, export_trajectories, final_distance_to_experts,
                                   latent_entropy, mi_lower_bound, posterior_accuracy, read_trajectories,
                                   trajectory_accuracy)
from services.model_service import LatentCode, Posterior
from utils.core_math import Mlp
from utils.errors import DatasetError


def _labeled_pairs(n=30, seed=0):
    rng = np.random.default_rng(seed)
    return PairBatch(rng.normal(size=(n, 10)), rng.normal(size=(n, 2)), None, np.arange(n) % 3)


def test_perfect_relabeling_scores_one():
    labels = np.array([0, 0, 1, 1, 2, 2])
    predicted = np.array([2, 2, 0, 0, 1, 1])
    accuracy, permutation, confusion, identity = best_permutation_accuracy(predicted, labels, 3)
    assert accuracy == 1.0
    assert permutation == {2: 0, 0: 1, 1: 2}
    assert identity == 0.0
    assert confusion.sum(axis=1).tolist() == [2, 2, 2]


def test_accuracy_invariant_under_relabeling():
    rng = np.random.default_rng(3)
    labels = rng.integers(0, 3, size=200)
    predicted = np.where(rng.random(200) < 0.7, labels, rng.integers(0, 3, size=200))
    base, _, _, identity = best_permutation_accuracy(predicted, labels, 3)
    assert base >= identity
    for perm in ([1, 2, 0], [2, 1, 0], [0, 2, 1]):
        relabeled, _, _, _ = best_permutation_accuracy(np.array(perm)[predicted], labels, 3)
        assert relabeled == base
        relabeled_truth, _, _, _ = best_permutation_accuracy(predicted, np.array(perm)[labels], 3)
        assert relabeled_truth == base


def test_uniform_posterior_is_chance():
    report = posterior_accuracy(Posterior(Mlp.zeros([12, 4, 3]), 3), _labeled_pairs())
    assert report.accuracy_best_perm == pytest.approx(1 / 3)
    assert report.per_mode_confusion.sum() == 30
    assert report.to_dict()['per_mode_confusion'][0] == [10, 0, 0]


def test_posterior_accuracy_needs_labels():
    pairs = _labeled_pairs()
    pairs.labels = None
    with pytest.raises(DatasetError):
        posterior_accuracy(Posterior(Mlp.zeros([12, 3]), 3), pairs)


def test_trajectory_accuracy_chance_for_uniform_posterior():
    trajs = [Trajectory(np.zeros((4, 10)), np.zeros((4, 2)), None, k % 3) for k in range(6)]
    assert trajectory_accuracy(Posterior(Mlp.zeros([12, 3]), 3), trajs) == pytest.approx(1 / 3)
    with pytest.raises(DatasetError):
        trajectory_accuracy(Posterior(Mlp.zeros([12, 3]), 3), [Trajectory(np.zeros((1, 10)), np.zeros((1, 2)))])


def test_latent_entropy():
    assert latent_entropy([1 / 3, 1 / 3, 1 / 3]) == pytest.approx(1.0986, abs=1e-4)
    assert latent_entropy([1.0, 0.0, 0.0]) == 0.0
    assert latent_entropy([0.5, 0.5, 0.0]) == pytest.approx(0.6931, abs=1e-4)
    with pytest.raises(ValueError):
        latent_entropy([0.5, 0.6])


def test_mi_bound_uniform_and_perfect():
    pairs = PairBatch(np.zeros((6, 10)), np.zeros((6, 2)), one_hot_rows([0] * 6))
    uniform = Posterior(Mlp.zeros([12, 4, 3]), 3)
    assert mi_lower_bound(uniform, pairs, [1 / 3] * 3) == pytest.approx(0.0, abs=1e-12)

    perfect = Posterior(Mlp.zeros([12, 3], 'linear'), 3)
    perfect.net.set_values(np.concatenate([np.zeros(36), [1000.0, 0.0, 0.0]]))
    assert mi_lower_bound(perfect, pairs, [1 / 3] * 3) == pytest.approx(np.log(3))


@pytest.mark.parametrize('seed', range(10))
def test_mi_bound_never_exceeds_code_entropy(seed):
    rng = np.random.default_rng(seed)
    posterior = Posterior(Mlp.init([12, 8, 3], 'tanh', seed), 3)
    pairs = PairBatch(rng.normal(size=(20, 10)), rng.normal(size=(20, 2)),
                      one_hot_rows(rng.integers(0, 3, size=20)))
    assert mi_lower_bound(posterior, pairs, [1 / 3] * 3) <= np.log(3) + 1e-9


def test_mi_bound_needs_codes():
    with pytest.raises(DatasetError):
        mi_lower_bound(Posterior(Mlp.zeros([12, 3]), 3), _labeled_pairs(), [1 / 3] * 3)


def test_final_distance_to_experts():
    mixture = ExpertMixture.concentric()
    trajs = [Trajectory(np.zeros((1, 10)), np.zeros((1, 2)), final_position=np.array([1.0, 0.0])),
             Trajectory(np.zeros((1, 10)), np.zeros((1, 2)), final_position=np.array([0.0, 2.0]))]
    assert final_distance_to_experts(trajs, mixture) == pytest.approx(0.25)


def _track(points, code=None, label=None):
    points = np.asarray(points, dtype=np.float64)
    obs = np.hstack([np.zeros((len(points), 8)), points])
    return Trajectory(obs, np.zeros((len(points), 2)), None if code is None else LatentCode.from_index(code, 3).one_hot,
                      label)


def test_export_row_count_and_sentinels(tmp_path):
    trajs = [_track([[0.1, 0.2], [0.3, 0.4], [0.5, 0.6]], code=2),
             _track([[1.0, 1.0], [1.1, 1.0], [1.2, 1.0]], label=1)]
    path = export_trajectories(trajs, tmp_path / 'trajectories.csv')
    lines = path.read_text(encoding='utf-8').splitlines()
    assert len(lines) == 7
    assert lines[0] == 'traj_id,step,x,y,code_index,mode_label'
    records = read_trajectories(path)
    assert [(r.code_index, r.mode_label) for r in records] == [(2, -1), (-1, 1)]


def test_export_round_trip_is_lossless(tmp_path):
    rng = np.random.default_rng(0)
    trajs = [_track(rng.normal(size=(5, 2)) / 3.0, code=k) for k in range(3)]
    records = read_trajectories(export_trajectories(trajs, tmp_path / 'out.csv'))
    for traj, record in zip(trajs, records):
        assert np.array_equal(traj.positions, record.points)


def test_read_trajectories_missing_columns(tmp_path):
    path = tmp_path / 'bad.csv'
    path.write_text('traj_id,step,x\n0,0,1.0\n', encoding='utf-8')
    with pytest.raises(DatasetError):
        read_trajectories(path)
