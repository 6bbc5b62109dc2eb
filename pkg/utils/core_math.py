"""Feed-forward networks with exact reverse-mode gradients over a flat parameter vector.

Every learned function in the package (policy mean, critic, posterior, baseline) is an
``Mlp``. Parameters live in a single contiguous float64 array so that optimizers and the
trust-region machinery can treat them as one vector.
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, List, Sequence, Tuple, Union

import numpy as np

from utils.errors import DimensionError, SizeError

logger = logging.getLogger(__name__)

ACTIVATIONS = ('tanh', 'relu', 'linear')

Shape = Tuple[int, int]


@dataclass
class ParamVector:
    values: np.ndarray
    manifest: List[Shape] = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        expected = sum(rows * cols for rows, cols in self.manifest)
        if self.values.size != expected:
            raise SizeError(
                f"Parameter vector has {self.values.size} values but manifest describes {expected}")

    @classmethod
    def flatten(cls, arrays: Sequence[np.ndarray]) -> 'ParamVector':
        manifest = []
        for array in arrays:
            array = np.atleast_2d(np.asarray(array, dtype=np.float64))
            manifest.append((int(array.shape[0]), int(array.shape[1])))
        values = np.concatenate([np.asarray(a, dtype=np.float64).reshape(-1) for a in arrays]) \
            if arrays else np.zeros(0)
        return cls(values, manifest)

    def unflatten(self) -> List[np.ndarray]:
        """Views into ``values`` shaped by the manifest; writes go through to the vector."""
        arrays = []
        offset = 0
        for rows, cols in self.manifest:
            count = rows * cols
            arrays.append(self.values[offset:offset + count].reshape(rows, cols))
            offset += count
        return arrays

    def copy(self) -> 'ParamVector':
        return ParamVector(self.values.copy(), list(self.manifest))

    def __len__(self) -> int:
        return int(self.values.size)


@dataclass
class Gradient:
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)

    def check_compatible(self, params: ParamVector) -> None:
        if self.values.size != len(params):
            raise DimensionError(
                f"Gradient has {self.values.size} entries, parameters have {len(params)}")

    def norm(self) -> float:
        return float(np.linalg.norm(self.values))


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == 'tanh':
        return np.tanh(z)
    if name == 'relu':
        return np.maximum(z, 0.0)
    return z


def _activation_slope(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if name == 'tanh':
        return 1.0 - a * a
    if name == 'relu':
        return (z > 0.0).astype(np.float64)
    return np.ones_like(z)


class Mlp:
    """Dense network; hidden layers use ``activation``, the output layer is linear."""

    def __init__(self, layer_sizes: Sequence[int], activation: str, params: ParamVector):
        self.layer_sizes = self.validate_sizes(layer_sizes)
        if activation not in ACTIVATIONS:
            raise ValueError(f"Unknown activation '{activation}', expected one of {ACTIVATIONS}")
        self.activation = activation
        if params.manifest != self.manifest_for(self.layer_sizes):
            raise SizeError("Parameter manifest does not match layer sizes")
        self.params = params

    @staticmethod
    def validate_sizes(layer_sizes: Sequence[int]) -> List[int]:
        sizes = [int(s) for s in layer_sizes]
        if len(sizes) < 2:
            raise SizeError(f"layer_sizes needs at least 2 entries, got {sizes}")
        if any(s < 1 for s in sizes):
            raise SizeError(f"layer_sizes entries must be >= 1, got {sizes}")
        return sizes

    @staticmethod
    def manifest_for(layer_sizes: Sequence[int]) -> List[Shape]:
        manifest = []
        for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            manifest.append((fan_out, fan_in))
            manifest.append((fan_out, 1))
        return manifest

    @staticmethod
    def param_count(layer_sizes: Sequence[int]) -> int:
        return sum(a * b + b for a, b in zip(layer_sizes[:-1], layer_sizes[1:]))

    @classmethod
    def init(cls, layer_sizes: Sequence[int], activation: str = 'tanh', seed: int = 0) -> 'Mlp':
        """Weights ~ N(0, 1/fan_in), zero biases; deterministic for a fixed seed."""
        sizes = cls.validate_sizes(layer_sizes)
        rng = np.random.default_rng(seed)
        arrays = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            arrays.append(rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_out, fan_in)))
            arrays.append(np.zeros((fan_out, 1)))
        return cls(sizes, activation, ParamVector.flatten(arrays))

    @classmethod
    def zeros(cls, layer_sizes: Sequence[int], activation: str = 'tanh') -> 'Mlp':
        sizes = cls.validate_sizes(layer_sizes)
        manifest = cls.manifest_for(sizes)
        return cls(sizes, activation, ParamVector(np.zeros(cls.param_count(sizes)), manifest))

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def output_dim(self) -> int:
        return self.layer_sizes[-1]

    def copy(self) -> 'Mlp':
        return Mlp(self.layer_sizes, self.activation, self.params.copy())

    def set_values(self, values: np.ndarray) -> None:
        values = np.asarray(values, dtype=np.float64).reshape(-1)
        if values.size != len(self.params):
            raise DimensionError(f"Expected {len(self.params)} parameter values, got {values.size}")
        self.params.values[:] = values

    def _layers(self, values: np.ndarray = None) -> List[Tuple[np.ndarray, np.ndarray]]:
        params = self.params if values is None else ParamVector(values, self.params.manifest)
        arrays = params.unflatten()
        return [(arrays[i], arrays[i + 1][:, 0]) for i in range(0, len(arrays), 2)]

    def _as_batch(self, inputs: np.ndarray) -> Tuple[np.ndarray, bool]:
        x = np.asarray(inputs, dtype=np.float64)
        single = x.ndim == 1
        x = np.atleast_2d(x)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise DimensionError(
                f"Expected input of dimension {self.input_dim}, got shape {np.shape(inputs)}")
        return x, single

    def _forward_cache(self, x: np.ndarray):
        pre, post = [], [x]
        layers = self._layers()
        for index, (weight, bias) in enumerate(layers):
            z = post[-1] @ weight.T + bias
            pre.append(z)
            post.append(z if index == len(layers) - 1 else _activate(self.activation, z))
        return pre, post

    def forward(self, inputs: np.ndarray) -> np.ndarray:
        """Output-layer pre-activation for one input vector or a batch of rows."""
        x, single = self._as_batch(inputs)
        _, post = self._forward_cache(x)
        return post[-1][0] if single else post[-1]

    def backward(self, inputs: np.ndarray, output_grad: np.ndarray) -> Tuple[Gradient, np.ndarray]:
        """Reverse-mode gradients of ``sum(output_grad * forward(inputs))``.

        The parameter gradient is summed over the batch; the input gradient is per row.
        """
        x, single = self._as_batch(inputs)
        delta = np.atleast_2d(np.asarray(output_grad, dtype=np.float64))
        if delta.shape != (x.shape[0], self.output_dim):
            raise DimensionError(
                f"Expected output_grad of shape {(x.shape[0], self.output_dim)}, got {delta.shape}")
        pre, post = self._forward_cache(x)
        layers = self._layers()
        grads: List[np.ndarray] = [None] * (2 * len(layers))
        for index in range(len(layers) - 1, -1, -1):
            weight, _ = layers[index]
            grads[2 * index] = delta.T @ post[index]
            grads[2 * index + 1] = delta.sum(axis=0)[:, None]
            delta = delta @ weight
            if index > 0:
                delta = delta * _activation_slope(self.activation, pre[index - 1], post[index])
        gradient = Gradient(np.concatenate([g.reshape(-1) for g in grads]))
        return gradient, (delta[0] if single else delta)

    def jvp(self, inputs: np.ndarray, tangent: np.ndarray) -> np.ndarray:
        """Directional derivative of the outputs along a parameter-space ``tangent``."""
        x, single = self._as_batch(inputs)
        tangent = np.asarray(tangent, dtype=np.float64).reshape(-1)
        if tangent.size != len(self.params):
            raise DimensionError(f"Tangent has {tangent.size} entries, parameters have {len(self.params)}")
        layers = self._layers()
        tangent_layers = self._layers(tangent)
        a, da = x, np.zeros_like(x)
        for index, ((weight, bias), (d_weight, d_bias)) in enumerate(zip(layers, tangent_layers)):
            z = a @ weight.T + bias
            dz = da @ weight.T + a @ d_weight.T + d_bias
            if index == len(layers) - 1:
                return dz[0] if single else dz
            a = _activate(self.activation, z)
            da = dz * _activation_slope(self.activation, z, a)
        raise AssertionError("unreachable")


def grad_check(loss_fn: Callable[[np.ndarray], Tuple[float, np.ndarray]],
               params: Union[ParamVector, np.ndarray],
               eps: float = 1e-5,
               floor: float = 1e-5) -> float:
    """Max per-coordinate relative error between analytic and central-difference gradients.

    ``loss_fn`` maps a flat value array to ``(loss, analytic_gradient)``. Both gradients
    zero counts as error 0; a non-finite loss anywhere returns ``inf``.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    values = np.array(params.values if isinstance(params, ParamVector) else params, dtype=np.float64)
    loss, analytic = loss_fn(values.copy())
    if not np.isfinite(loss):
        return float('inf')
    analytic = np.asarray(analytic, dtype=np.float64).reshape(-1)
    numeric = np.zeros_like(values)
    for i in range(values.size):
        shifted = values.copy()
        shifted[i] = values[i] + eps
        loss_plus, _ = loss_fn(shifted)
        shifted[i] = values[i] - eps
        loss_minus, _ = loss_fn(shifted)
        if not (np.isfinite(loss_plus) and np.isfinite(loss_minus)):
            return float('inf')
        numeric[i] = (loss_plus - loss_minus) / (2.0 * eps)
    if values.size == 0:
        return 0.0
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    error = float(np.max(np.abs(analytic - numeric) / scale))
    logger.debug(f"Gradient check over {values.size} coordinates: max relative error {error:.3e}")
    return error
