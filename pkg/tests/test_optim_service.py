import numpy as np
import pytest

from conftest import one_hot_rows
from services.model_service import GaussianPolicy
from services.optim_service import (AdamState, RmspropState, TrpoConfig, clip_params, conjugate_gradient,
                                    fisher_vector_product, trpo_step)
from utils.core_math import Mlp
from utils.errors import DimensionError, NumericalError


def test_adam_zero_gradient():
    adam = AdamState(2, lr=0.1)
    params = np.array([1.0, -2.0])
    assert np.array_equal(adam.step(params, np.zeros(2)), params)


def test_adam_first_step_magnitude():
    adam = AdamState(2, lr=0.01)
    new = adam.step(np.zeros(2), np.array([0.5, -2.0]), minimize=True)
    assert np.allclose(new, [-0.01, 0.01], rtol=0, atol=1e-9)


def test_adam_minimizes_quadratic():
    adam = AdamState(2, lr=0.1)
    p = np.array([1.0, 1.0])
    for _ in range(200):
        p = adam.step(p, 2 * p, minimize=True)
    assert np.linalg.norm(p) < 1e-3


def test_adam_shape_mismatch():
    with pytest.raises(DimensionError):
        AdamState(2).step(np.zeros(2), np.zeros(3))


def test_rmsprop_zero_gradient():
    rms = RmspropState(2, lr=0.01)
    params = np.array([0.3, 0.4])
    assert np.array_equal(rms.step(params, np.zeros(2)), params)


def test_rmsprop_displacement_saturates_at_lr():
    rms = RmspropState(1, lr=0.01, rho=0.99)
    p = np.zeros(1)
    for _ in range(3000):
        new = rms.step(p, np.array([0.7]))
        displacement = abs(float(new[0] - p[0]))
        p = new
    assert displacement == pytest.approx(0.01, rel=1e-6)


def test_rmsprop_maximization_shrinks_norm():
    rms = RmspropState(2, lr=0.01)
    p = np.array([1.0, 1.0])
    start = np.linalg.norm(p)
    for _ in range(500):
        p = rms.step(p, -2 * p, maximize=True)
    assert np.linalg.norm(p) < 0.5 * start


def test_clip_params():
    clipped = clip_params(np.array([0.05, -0.003, -1.0]), 0.01)
    assert clipped.tolist() == [0.01, -0.003, -0.01]
    assert np.array_equal(clip_params(clipped, 0.01), clipped)
    with pytest.raises(ValueError):
        clip_params(np.zeros(2), 0.0)


def test_cg_identity_one_iteration():
    b = np.array([1.0, -2.0, 3.0])
    assert np.allclose(conjugate_gradient(lambda v: v, b, iters=1), b)


def test_cg_diagonal():
    a = np.diag([2.0, 4.0])
    assert np.allclose(conjugate_gradient(lambda v: a @ v, np.array([2.0, 4.0])), [1.0, 1.0])


def test_cg_random_spd_systems():
    rng = np.random.default_rng(0)
    for _ in range(50):
        n = int(rng.integers(2, 21))
        m = rng.normal(size=(n, n)) / np.sqrt(n)
        a = m @ m.T + np.eye(n)
        b = rng.normal(size=n)
        x = conjugate_gradient(lambda v: a @ v, b, iters=n, tol=1e-14)
        assert np.linalg.norm(a @ x - b) < 1e-8


def test_cg_reports_non_finite():
    with pytest.raises(NumericalError):
        conjugate_gradient(lambda v: np.full_like(v, np.nan), np.ones(3))


def _fvp_setup(seed=0):
    rng = np.random.default_rng(seed)
    policy = GaussianPolicy(Mlp.init([13, 2, 2], 'tanh', seed), 0.1, 3)
    obs = rng.normal(size=(5, 10))
    codes = one_hot_rows(rng.integers(0, 3, size=5))
    return policy, obs, codes, rng


def test_fvp_zero_vector():
    policy, obs, codes, _ = _fvp_setup()
    assert np.array_equal(fisher_vector_product(policy, obs, codes, np.zeros(len(policy.net.params)), 0.1),
                          np.zeros(len(policy.net.params)))


def test_fvp_symmetric_and_psd():
    policy, obs, codes, rng = _fvp_setup(1)
    for _ in range(10):
        u, v = rng.normal(size=(2, len(policy.net.params)))
        fu = fisher_vector_product(policy, obs, codes, u, 0.0)
        fv = fisher_vector_product(policy, obs, codes, v, 0.0)
        assert u @ fv == pytest.approx(v @ fu, rel=1e-8)
        assert v @ fv >= 0.0


def test_fvp_matches_kl_hessian():
    policy, obs, codes, rng = _fvp_setup(2)
    theta = policy.net.params.values.copy()
    old_mean = policy.mean(obs, codes)
    v = rng.normal(size=theta.size)
    v /= np.linalg.norm(v)

    def kl(values):
        return policy.mean_kl(obs, codes, old_mean, values=values)

    h = 1e-3
    numeric = np.zeros_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        numeric[i] = (kl(theta + h * v + e) - kl(theta + h * v - e)
                      - kl(theta - h * v + e) + kl(theta - h * v - e)) / (4 * h * h)
    analytic = fisher_vector_product(policy, obs, codes, v, 0.0)
    assert np.linalg.norm(analytic - numeric) / np.linalg.norm(analytic) < 1e-3


def test_fvp_shape_mismatch():
    policy, obs, codes, _ = _fvp_setup()
    with pytest.raises(DimensionError):
        fisher_vector_product(policy, obs, codes, np.zeros(3))


def test_trpo_zero_gradient_is_accepted_noop():
    values = np.array([0.2, -0.1])
    result = trpo_step(values, np.zeros(2), lambda x: 0.0, lambda x: 0.0, lambda v: v, TrpoConfig())
    assert result.accepted
    assert np.array_equal(result.values, values)


def test_trpo_full_step_with_identity_fisher():
    g = np.array([3.0, -4.0])
    cfg = TrpoConfig(kl_radius=0.01)
    result = trpo_step(np.zeros(2), g, lambda x: 0.0, lambda x: float(g @ x), lambda v: v, cfg)
    assert result.accepted
    assert result.backtracks == 0
    assert np.linalg.norm(result.values) == pytest.approx(np.sqrt(2 * 0.01), rel=1e-9)
    assert np.allclose(result.values / np.linalg.norm(result.values), g / np.linalg.norm(g))


def test_trpo_backtracks_into_trust_region():
    g = np.array([1.0, 2.0])
    cfg = TrpoConfig(kl_radius=0.01)

    def kl(x):
        return 1.5 * float(x @ x)

    result = trpo_step(np.zeros(2), g, kl, lambda x: float(g @ x), lambda v: v, cfg)
    assert result.accepted
    assert result.backtracks == 1
    assert kl(result.values) <= cfg.kl_radius
    assert result.surrogate_gain > 0


def test_trpo_rejects_when_kl_never_fits():
    values = np.array([0.5, 0.5])
    cfg = TrpoConfig(max_backtracks=3)
    result = trpo_step(values, np.ones(2), lambda x: 1.0, lambda x: float(np.sum(x)), lambda v: v, cfg)
    assert not result.accepted
    assert np.array_equal(result.values, values)


def test_trpo_rejects_on_solver_failure():
    values = np.array([0.5, 0.5])
    result = trpo_step(values, np.ones(2), lambda x: 0.0, lambda x: float(np.sum(x)),
                       lambda v: np.full_like(v, np.nan), TrpoConfig())
    assert not result.accepted
    assert np.array_equal(result.values, values)


def test_trpo_config_validation():
    with pytest.raises(ValueError):
        TrpoConfig(kl_radius=0.0)
    with pytest.raises(ValueError):
        TrpoConfig(backtrack_ratio=1.0)
