"""First-order optimizers, weight clipping and the trust-region policy step."""
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from services.model_service import GaussianPolicy
from utils.config import OptimSettings
from utils.core_math import Gradient
from utils.errors import DimensionError, NumericalError

logger = logging.getLogger(__name__)


def _check_shapes(params: np.ndarray, grad: np.ndarray, state_vector: Optional[np.ndarray]) -> None:
    if params.shape != grad.shape or (state_vector is not None and state_vector.shape != params.shape):
        raise DimensionError(
            f"Shape mismatch: params {params.shape}, gradient {grad.shape}, "
            f"optimizer state {None if state_vector is None else state_vector.shape}")


def _grad_values(grad) -> np.ndarray:
    return np.asarray(grad.values if isinstance(grad, Gradient) else grad, dtype=np.float64).reshape(-1)


@dataclass
class AdamState:
    size: int
    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: np.ndarray = field(default=None)
    v: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.m is None:
            self.m = np.zeros(self.size)
        if self.v is None:
            self.v = np.zeros(self.size)

    def step(self, params: np.ndarray, grad, minimize: bool = True) -> np.ndarray:
        """Bias-corrected Adam update; returns new parameter values."""
        params = np.asarray(params, dtype=np.float64)
        g = _grad_values(grad)
        _check_shapes(params, g, self.m)
        self.step_count += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * g
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * g * g
        m_hat = self.m / (1.0 - self.beta1 ** self.step_count)
        v_hat = self.v / (1.0 - self.beta2 ** self.step_count)
        update = self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return params - update if minimize else params + update


@dataclass
class RmspropState:
    size: int
    lr: float = 5e-5
    rho: float = 0.99
    eps: float = 1e-8
    acc: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.acc is None:
            self.acc = np.zeros(self.size)

    def step(self, params: np.ndarray, grad, maximize: bool = False) -> np.ndarray:
        params = np.asarray(params, dtype=np.float64)
        g = _grad_values(grad)
        _check_shapes(params, g, self.acc)
        self.acc = self.rho * self.acc + (1.0 - self.rho) * g * g
        update = self.lr * g / np.sqrt(self.acc + self.eps)
        return params + update if maximize else params - update


def clip_params(values: np.ndarray, bound: float) -> np.ndarray:
    if not bound > 0:
        raise ValueError(f"Clip bound must be positive, got {bound}")
    return np.clip(np.asarray(values, dtype=np.float64), -bound, bound)


def conjugate_gradient(apply_a: Callable[[np.ndarray], np.ndarray], b: np.ndarray,
                       iters: int = 10, tol: float = 1e-10) -> np.ndarray:
    """Solve A x = b for symmetric positive-definite A given only products A v.

    Stops when ``||A x - b|| <= tol * ||b||`` or after ``iters`` iterations.
    """
    b = np.asarray(b, dtype=np.float64)
    x = np.zeros_like(b)
    r = b.copy()
    p = r.copy()
    rr = float(r @ r)
    b_norm = float(np.sqrt(rr))
    if b_norm == 0.0:
        return x
    for i in range(iters):
        ap = apply_a(p)
        denom = float(p @ ap)
        if not np.isfinite(denom) or denom <= 0.0:
            raise NumericalError(f"Conjugate gradient curvature p'Ap = {denom} at iteration {i}")
        alpha = rr / denom
        x = x + alpha * p
        r = r - alpha * ap
        rr_new = float(r @ r)
        if not np.isfinite(rr_new):
            raise NumericalError(f"Conjugate gradient residual became non-finite at iteration {i}")
        if np.sqrt(rr_new) <= tol * b_norm:
            logger.debug(f"Conjugate gradient converged after {i + 1} iterations")
            break
        p = r + (rr_new / rr) * p
        rr = rr_new
    return x


def fisher_vector_product(policy: GaussianPolicy, obs: np.ndarray, codes: np.ndarray,
                          v: np.ndarray, damping: float = 0.0) -> np.ndarray:
    """(F + damping I) v with F the Hessian of the batch-mean KL at the current parameters.

    For a fixed-sigma Gaussian this is J' Sigma^-1 J v / N with J the Jacobian of the mean
    network: one forward tangent pass followed by one reverse pass.
    """
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if v.size != len(policy.net.params):
        raise DimensionError(f"Vector has {v.size} entries, policy has {len(policy.net.params)} parameters")
    x, _ = policy.inputs(obs, codes)
    jv = policy.net.jvp(x, v)
    gradient, _ = policy.net.backward(x, jv / policy.sigma ** 2 / x.shape[0])
    return gradient.values + damping * v


@dataclass
class TrpoConfig:
    kl_radius: float = 0.01
    cg_iters: int = 10
    cg_tol: float = 1e-10
    damping: float = 0.1
    backtrack_ratio: float = 0.5
    max_backtracks: int = 10

    def __post_init__(self):
        if not (self.kl_radius > 0 and self.cg_iters >= 1 and self.damping >= 0
                and 0 < self.backtrack_ratio < 1 and self.max_backtracks >= 0):
            raise ValueError(f"Invalid TRPO configuration: {self}")

    @classmethod
    def from_settings(cls, optim: OptimSettings) -> 'TrpoConfig':
        return cls(optim.kl_radius, optim.cg_iters, optim.cg_tol, optim.damping,
                   optim.backtrack_ratio, optim.max_backtracks)


@dataclass
class TrpoResult:
    values: np.ndarray
    accepted: bool
    mean_kl: float = 0.0
    surrogate_gain: float = 0.0
    backtracks: int = 0


def trpo_step(values: np.ndarray, surrogate_grad, kl_fn: Callable[[np.ndarray], float],
              surrogate_fn: Callable[[np.ndarray], float], fvp_fn: Callable[[np.ndarray], np.ndarray],
              cfg: TrpoConfig) -> TrpoResult:
    """One KL-constrained natural-gradient ascent step with backtracking line search.

    Returns the untouched ``values`` with ``accepted=False`` when no candidate satisfies
    both ``kl <= kl_radius`` and a strict surrogate improvement.
    """
    old = np.array(values, dtype=np.float64)
    g = _grad_values(surrogate_grad)
    old_surrogate = surrogate_fn(old)
    if not np.isfinite(old_surrogate):
        raise NumericalError(f"Surrogate is non-finite at the current parameters: {old_surrogate}")
    if not np.any(g):
        return TrpoResult(old, True)
    try:
        direction = conjugate_gradient(fvp_fn, g, cfg.cg_iters, cfg.cg_tol)
        shs = float(direction @ fvp_fn(direction))
    except NumericalError as e:
        logger.warning(f"TRPO step rejected: {str(e)}")
        return TrpoResult(old, False)
    if not np.isfinite(shs) or shs <= 0.0 or not np.all(np.isfinite(direction)):
        logger.warning(f"TRPO step rejected: invalid curvature {shs}")
        return TrpoResult(old, False)
    full_step = np.sqrt(2.0 * cfg.kl_radius / shs) * direction
    fraction = 1.0
    for backtrack in range(cfg.max_backtracks + 1):
        candidate = old + fraction * full_step
        kl = kl_fn(candidate)
        gain = surrogate_fn(candidate) - old_surrogate
        if np.isfinite(kl) and np.isfinite(gain) and kl <= cfg.kl_radius and gain > 0.0:
            return TrpoResult(candidate, True, float(kl), float(gain), backtrack)
        fraction *= cfg.backtrack_ratio
    logger.debug("TRPO line search exhausted; keeping previous parameters")
    return TrpoResult(old, False, 0.0, 0.0, cfg.max_backtracks)
