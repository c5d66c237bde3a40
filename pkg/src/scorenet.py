"""
Score Network Module

A small multilayer perceptron s_θ(x, t) written directly in numpy: Fourier
features of x, a sinusoidal time embedding, SiLU hidden layers and a linear
head. Parameters live in one flat float64 vector; layer weights are views into
it, so an optimizer step on the vector updates the network in place.

The time embedding does not double its frequencies per component the way the
Fourier features of x do (2π·2^k). Its K frequencies are 2π·1000^{k/(K−1)},
spread geometrically over three decades: doubling would reach 2π·2^63 at the
default embedding width, far past anything float64 can resolve on t ∈ [0, 1].

Also holds the Adam optimizer state and JSON checkpoints.
"""

import os
import json
import math
import logging
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
from scipy.special import expit

from errors import CheckpointError, ConfigError, NonFiniteError, StaleCacheError
from numerics import Rng

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1

# Highest time-embedding frequency relative to the lowest.
TIME_FREQUENCY_SPAN = 1000.0


@dataclass
class NetSpec:
    """
    Architecture of the score network; fully determines the parameter count.

    Attributes:
        input_dim (int): Data dimension d
        hidden_layers (int): Number of hidden SiLU layers
        hidden_width (int): Width of each hidden layer
        time_embed_dim (int): Sinusoidal time embedding size (even)
        fourier_features_x (int): Geometric frequencies per coordinate, 0 disables
        activation (str): Hidden activation, only 'silu'
    """

    input_dim: int
    hidden_layers: int = 3
    hidden_width: int = 128
    time_embed_dim: int = 128
    fourier_features_x: int = 8
    activation: str = 'silu'

    def __post_init__(self):
        for name in ('input_dim', 'hidden_layers', 'hidden_width', 'time_embed_dim'):
            if getattr(self, name) < 1:
                raise ConfigError(f"NetSpec.{name} must be >= 1, got {getattr(self, name)}")
        if self.time_embed_dim % 2:
            raise ConfigError(f"time_embed_dim must be even, got {self.time_embed_dim}")
        if self.fourier_features_x < 0:
            raise ConfigError(f"fourier_features_x must be >= 0, got {self.fourier_features_x}")
        if self.activation.lower() != 'silu':
            raise ConfigError(f"Unsupported activation: {self.activation}")

    @property
    def feature_dim(self) -> int:
        return self.input_dim * (1 + 2 * self.fourier_features_x) + self.time_embed_dim

    @property
    def layer_shapes(self) -> List[Tuple[int, int]]:
        shapes = [(self.feature_dim, self.hidden_width)]
        shapes += [(self.hidden_width, self.hidden_width)] * (self.hidden_layers - 1)
        shapes.append((self.hidden_width, self.input_dim))
        return shapes

    @property
    def param_count(self) -> int:
        return sum(fan_in * fan_out + fan_out for fan_in, fan_out in self.layer_shapes)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def time_frequencies(time_embed_dim: int) -> np.ndarray:
    """ω_k = 2π · SPAN^{k/(K−1)}, k = 0..K−1 with K = time_embed_dim / 2."""
    half = time_embed_dim // 2
    if half == 1:
        return np.array([2.0 * np.pi])
    return 2.0 * np.pi * TIME_FREQUENCY_SPAN ** (np.arange(half) / (half - 1))


def x_frequencies(count: int) -> np.ndarray:
    """ω_j = 2π · 2^j, j = 0..count−1."""
    return 2.0 * np.pi * 2.0 ** np.arange(count)


def silu(z: np.ndarray) -> np.ndarray:
    return z * expit(z)


def silu_grad(z: np.ndarray) -> np.ndarray:
    s = expit(z)
    return s * (1.0 + z * (1.0 - s))


@dataclass
class _ForwardCache:
    x: np.ndarray
    t: np.ndarray
    version: int
    inputs: List[np.ndarray]
    preacts: List[np.ndarray]
    last_hidden: np.ndarray


class ScoreNet:
    """
    MLP score model s_θ(x, t) on normalized coordinates.
    """

    def __init__(self, spec: NetSpec, rng: Optional[Rng] = None, theta: Optional[np.ndarray] = None):
        """
        Initialize the network.

        Hidden layers get fan-in scaled Gaussian weights; the output layer and all
        biases start at zero, so a fresh network predicts a zero score.

        Args:
            spec (NetSpec): Architecture
            rng (Optional[Rng]): Stream for the initial weights
            theta (Optional[np.ndarray]): Explicit flat parameters
        """
        self.spec = spec
        self.theta = np.zeros(spec.param_count, dtype=np.float64)
        self._version = 0
        self._cache: Optional[_ForwardCache] = None
        self._omega_t = time_frequencies(spec.time_embed_dim)
        self._omega_x = x_frequencies(spec.fourier_features_x)

        if theta is not None:
            self.set_parameters(theta)
        elif rng is not None:
            for weight, _ in self.layers()[:-1]:
                fan_in = weight.shape[0]
                weight[...] = rng.normal(size=weight.shape) / math.sqrt(fan_in)

    def layers(self) -> List[Tuple[np.ndarray, np.ndarray]]:
        """(W, b) views into the flat parameter vector, input layer first."""
        views = []
        offset = 0
        for fan_in, fan_out in self.spec.layer_shapes:
            weight = self.theta[offset:offset + fan_in * fan_out].reshape(fan_in, fan_out)
            offset += fan_in * fan_out
            bias = self.theta[offset:offset + fan_out]
            offset += fan_out
            views.append((weight, bias))
        return views

    def set_parameters(self, theta: np.ndarray) -> None:
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != self.theta.shape:
            raise ConfigError(f"Expected {self.theta.size} parameters, got {theta.size}")
        self.theta[...] = theta
        self.mark_updated()

    def mark_updated(self) -> None:
        """Invalidate the forward cache after an in-place parameter change."""
        self._version += 1
        self._cache = None

    def features(self, x: np.ndarray, t: np.ndarray) -> np.ndarray:
        """
        Network input: [x, sin/cos(ω_j x), sin/cos(ω_k t)].

        Args:
            x (np.ndarray): Points, shape (n, d)
            t (np.ndarray): Times, shape (n,)

        Returns:
            np.ndarray: Features, shape (n, feature_dim)
        """
        parts = [x]
        if self._omega_x.size:
            angles = (x[:, :, None] * self._omega_x[None, None, :]).reshape(x.shape[0], -1)
            parts += [np.sin(angles), np.cos(angles)]
        time_angles = t[:, None] * self._omega_t[None, :]
        parts += [np.sin(time_angles), np.cos(time_angles)]
        return np.concatenate(parts, axis=1)

    def _prepare(self, x: np.ndarray, t: Union[float, np.ndarray]) -> Tuple[np.ndarray, np.ndarray, bool]:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x.reshape(1, -1)
        if x.shape[1] != self.spec.input_dim:
            raise ConfigError(f"Network expects {self.spec.input_dim}-d inputs, got {x.shape[1]}")
        times = np.broadcast_to(np.asarray(t, dtype=np.float64), (x.shape[0],)).copy()
        return x, times, single

    def forward(self, x: np.ndarray, t: Union[float, np.ndarray], cache: bool = True) -> np.ndarray:
        """
        Evaluate s_θ(x, t) and cache the activations for backward().

        Args:
            x (np.ndarray): Normalized points, shape (n, d) or (d,)
            t (Union[float, np.ndarray]): Scalar time or one time per row
            cache (bool): Keep activations; samplers sharing one net across threads pass False

        Returns:
            np.ndarray: Scores, same shape as x
        """
        x, times, single = self._prepare(x, t)
        layers = self.layers()
        hidden = self.features(x, times)
        inputs, preacts = [], []
        for weight, bias in layers[:-1]:
            inputs.append(hidden)
            z = hidden @ weight + bias
            preacts.append(z)
            hidden = silu(z)
        out_weight, out_bias = layers[-1]
        output = hidden @ out_weight + out_bias
        if cache:
            self._cache = _ForwardCache(x=x.copy(), t=times, version=self._version,
                                        inputs=inputs, preacts=preacts, last_hidden=hidden)
        return output[0] if single else output

    def backward(self, x: np.ndarray, t: Union[float, np.ndarray], upstream: np.ndarray) -> np.ndarray:
        """
        Reverse-mode gradient of Σ ⟨upstream, s_θ(x, t)⟩ with respect to θ.

        Args:
            x (np.ndarray): The batch passed to the last forward()
            t (Union[float, np.ndarray]): The times passed to the last forward()
            upstream (np.ndarray): Cotangents, same shape as the forward output

        Returns:
            np.ndarray: Flat gradient, same layout as theta
        """
        x, times, _ = self._prepare(x, t)
        cache = self._cache
        if (cache is None or cache.version != self._version
                or cache.x.shape != x.shape or not np.array_equal(cache.x, x)
                or not np.array_equal(cache.t, times)):
            raise StaleCacheError("backward() needs a forward() on the same batch with current parameters")
        upstream = np.asarray(upstream, dtype=np.float64).reshape(x.shape[0], self.spec.input_dim)

        layers = self.layers()
        grads: List[Tuple[np.ndarray, np.ndarray]] = []
        out_weight, _ = layers[-1]
        grads.append((cache.last_hidden.T @ upstream, upstream.sum(axis=0)))
        delta = upstream @ out_weight.T
        for index in range(len(layers) - 2, -1, -1):
            weight, _ = layers[index]
            dz = delta * silu_grad(cache.preacts[index])
            grads.append((cache.inputs[index].T @ dz, dz.sum(axis=0)))
            delta = dz @ weight.T
        grads.reverse()
        return np.concatenate([np.concatenate([gw.ravel(), gb]) for gw, gb in grads])


@dataclass
class AdamState:
    """
    Adam moments and hyperparameters.

    Attributes:
        m (np.ndarray): First moment, same length as θ
        v (np.ndarray): Second moment, same length as θ
        step (int): Completed update count
        lr (float): Learning rate
    """

    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def create(cls, n_params: int, lr: float = 5e-4) -> 'AdamState':
        return cls(m=np.zeros(n_params), v=np.zeros(n_params), step=0, lr=lr)


def clip_by_norm(vector: np.ndarray, max_norm: Optional[float]) -> Tuple[np.ndarray, float]:
    """Rescale vector to max_norm when its Euclidean norm exceeds it; returns (vector, original norm)."""
    norm = float(np.linalg.norm(vector))
    if max_norm is not None and norm > max_norm:
        return vector * (max_norm / norm), norm
    return vector, norm


def adam_step(state: AdamState, theta: np.ndarray, grad: np.ndarray,
              clip_norm: Optional[float] = None) -> Tuple[np.ndarray, AdamState]:
    """
    One bias-corrected Adam update, with optional global-norm gradient clipping
    applied before the moment updates.

    Args:
        state (AdamState): Current optimizer state
        theta (np.ndarray): Current parameters
        grad (np.ndarray): Gradient
        clip_norm (Optional[float]): Global norm cap for grad

    Returns:
        Tuple[np.ndarray, AdamState]: New parameters and state
    """
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != theta.shape or state.m.shape != theta.shape:
        raise ConfigError(f"Shape mismatch: theta {theta.shape}, grad {grad.shape}, moments {state.m.shape}")
    if not np.all(np.isfinite(grad)):
        raise NonFiniteError(f"Non-finite gradient at optimizer step {state.step + 1}")

    grad, _ = clip_by_norm(grad, clip_norm)
    step = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    v = state.beta2 * state.v + (1.0 - state.beta2) * grad ** 2
    m_hat = m / (1.0 - state.beta1 ** step)
    v_hat = v / (1.0 - state.beta2 ** step)
    new_theta = theta - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    new_state = AdamState(m=m, v=v, step=step, lr=state.lr, beta1=state.beta1,
                          beta2=state.beta2, eps=state.eps)
    return new_theta, new_state


@dataclass
class Checkpoint:
    """
    Everything needed to rebuild a trained sampler.

    Attributes:
        net_spec (NetSpec): Architecture
        schedule (Dict[str, float]): sigma_min / sigma_max
        benchmark (Dict[str, Any]): Energy description (id, dim, scale, parameters)
        seed (int): Run seed
        step (int): Optimizer steps completed
        theta (np.ndarray): Flat parameters
        adam (Optional[AdamState]): Optimizer state
        format_version (int): Schema version
    """

    net_spec: NetSpec
    schedule: Dict[str, float]
    benchmark: Dict[str, Any]
    seed: int
    step: int
    theta: np.ndarray
    adam: Optional[AdamState] = None
    format_version: int = CHECKPOINT_FORMAT_VERSION
    extra: Dict[str, Any] = field(default_factory=dict)

    def build_net(self) -> ScoreNet:
        return ScoreNet(self.net_spec, theta=self.theta)

    def to_dict(self) -> Dict[str, Any]:
        payload = {
            'format_version': self.format_version,
            'net_spec': self.net_spec.to_dict(),
            'schedule': dict(self.schedule),
            'benchmark': dict(self.benchmark),
            'seed': self.seed,
            'step': self.step,
            'theta': self.theta.tolist(),
            'adam': None,
            'extra': self.extra,
        }
        if self.adam is not None:
            payload['adam'] = {
                'step': self.adam.step, 'lr': self.adam.lr, 'beta1': self.adam.beta1,
                'beta2': self.adam.beta2, 'eps': self.adam.eps,
                'm': self.adam.m.tolist(), 'v': self.adam.v.tolist(),
            }
        return payload


def save_checkpoint(checkpoint: Checkpoint, path: str) -> None:
    """
    Write a checkpoint as UTF-8 JSON; the file is replaced atomically.

    Args:
        checkpoint (Checkpoint): Checkpoint to save
        path (str): Output path
    """
    tmp_path = f'{path}.tmp'
    try:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(tmp_path, 'w', encoding='utf-8') as f:
            json.dump(checkpoint.to_dict(), f)
        os.replace(tmp_path, path)
    except OSError as e:
        logger.error(f"Error saving checkpoint: {e}")
        raise CheckpointError(f"Cannot write checkpoint {path}: {e}") from e
    logger.info(f"Checkpoint saved to {path} (step {checkpoint.step})")


def load_checkpoint(path: str, expected_benchmark: Optional[Dict[str, Any]] = None) -> Checkpoint:
    """
    Read and validate a checkpoint.

    Args:
        path (str): Checkpoint path
        expected_benchmark (Optional[Dict[str, Any]]): Benchmark description the caller
            intends to use; a different id logs a warning, a different dimension fails

    Returns:
        Checkpoint: Loaded checkpoint
    """
    try:
        with open(path, 'r', encoding='utf-8') as f:
            payload = json.load(f)
    except FileNotFoundError as e:
        raise CheckpointError(f"Checkpoint not found: {path}") from e
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as e:
        logger.error(f"Error loading checkpoint {path}: {e}")
        raise CheckpointError(f"Corrupt checkpoint {path}: {e}") from e

    try:
        version = payload['format_version']
        if version != CHECKPOINT_FORMAT_VERSION:
            raise CheckpointError(
                f"Checkpoint format {version} is not supported (expected {CHECKPOINT_FORMAT_VERSION})"
            )
        spec = NetSpec(**payload['net_spec'])
        theta = np.asarray(payload['theta'], dtype=np.float64)
        adam = None
        if payload.get('adam'):
            raw = payload['adam']
            adam = AdamState(m=np.asarray(raw['m'], dtype=np.float64), v=np.asarray(raw['v'], dtype=np.float64),
                             step=int(raw['step']), lr=float(raw['lr']), beta1=float(raw['beta1']),
                             beta2=float(raw['beta2']), eps=float(raw['eps']))
        checkpoint = Checkpoint(net_spec=spec, schedule=payload['schedule'], benchmark=payload['benchmark'],
                                seed=int(payload['seed']), step=int(payload['step']), theta=theta, adam=adam,
                                format_version=version, extra=payload.get('extra') or {})
    except CheckpointError:
        raise
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"Checkpoint {path} is missing or has malformed fields: {e}") from e

    if theta.ndim != 1 or theta.size != spec.param_count:
        raise CheckpointError(f"Checkpoint holds {theta.size} parameters, NetSpec needs {spec.param_count}")
    if adam is not None and (adam.m.shape != theta.shape or adam.v.shape != theta.shape):
        raise CheckpointError("Adam moments do not match the parameter count")
    if spec.input_dim != int(checkpoint.benchmark.get('dim', spec.input_dim)):
        raise CheckpointError("Checkpoint network dimension disagrees with its benchmark")

    if expected_benchmark is not None:
        if int(expected_benchmark.get('dim', spec.input_dim)) != spec.input_dim:
            raise CheckpointError(
                f"Checkpoint is {spec.input_dim}-d, benchmark {expected_benchmark.get('id')} "
                f"is {expected_benchmark.get('dim')}-d"
            )
        if expected_benchmark.get('id') != checkpoint.benchmark.get('id'):
            logger.warning(
                f"Checkpoint was trained on {checkpoint.benchmark.get('id')}, "
                f"now used for {expected_benchmark.get('id')}"
            )
    logger.info(f"Checkpoint loaded from {path} (step {checkpoint.step})")
    return checkpoint
