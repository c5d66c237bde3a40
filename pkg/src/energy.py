"""
Energy Module

Benchmark energies E(x) = −log π̃(x) with analytic gradients, the scaled view
used by the diffusion components, and exact reference sampling where the
target allows it (Gaussian mixtures, Gaussians, the 1D bimodal toy).
"""

import os
import re
import json
import logging
from dataclasses import dataclass
from typing import Any, Dict, Optional, Tuple

import numpy as np
from scipy import special

from errors import ConfigError, DataIOError, SingularConfigurationError
from numerics import Rng
from samples import SampleSet

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

# Pair distances below this are treated as coincident particles.
SINGULAR_DISTANCE = 1e-6

# Coordinate scale per GMM size; the network works on x / scale.
GMM_SCALES = {40: 50.0, 80: 100.0, 120: 150.0}

# Rows per evaluation block; keeps per-row intermediates (n × m logits) cache-sized.
_BLOCK_ROWS = 4096


class EnergyFn:
    """
    Differentiable unnormalized negative log density.

    Subclasses implement the batched `_energy_rows` / `_grad_rows`; rows that
    hit a singularity get +inf energy and a zero gradient so that estimators
    can drop them.
    """

    benchmark_id: str = 'energy'
    dim: int = 1
    scale: float = 1.0
    n_particles: Optional[int] = None
    space_dim: Optional[int] = None
    exact_sampling: bool = False

    def _energy_rows(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _grad_rows(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _energy_grad_rows(self, X: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        return self._energy_rows(X), self._grad_rows(X)

    def _check_batch(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        if X.shape[-1] != self.dim:
            raise ConfigError(f"{self.benchmark_id} expects {self.dim}-dimensional points, got {X.shape[-1]}")
        return X

    @staticmethod
    def _blocks(X: np.ndarray):
        for start in range(0, X.shape[0], _BLOCK_ROWS):
            yield X[start:start + _BLOCK_ROWS]

    def energy_batch(self, X: np.ndarray) -> np.ndarray:
        """
        Energies of every row of X.

        Args:
            X (np.ndarray): Points, shape (n, d)

        Returns:
            np.ndarray: Energies, shape (n,); +inf at singular rows
        """
        X = self._check_batch(X)
        if X.shape[0] <= _BLOCK_ROWS:
            return self._energy_rows(X)
        return np.concatenate([self._energy_rows(block) for block in self._blocks(X)])

    def grad_batch(self, X: np.ndarray) -> np.ndarray:
        """
        Gradients ∇E of every row of X.

        Args:
            X (np.ndarray): Points, shape (n, d)

        Returns:
            np.ndarray: Gradients, shape (n, d); zero at singular rows
        """
        X = self._check_batch(X)
        if X.shape[0] <= _BLOCK_ROWS:
            return self._grad_rows(X)
        return np.concatenate([self._grad_rows(block) for block in self._blocks(X)])

    def energy_and_grad_batch(self, X: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """
        Energies and gradients in one pass, sharing the intermediates both need.

        Args:
            X (np.ndarray): Points, shape (n, d)

        Returns:
            Tuple[np.ndarray, np.ndarray]: Energies (n,) and gradients (n, d)
        """
        X = self._check_batch(X)
        if X.shape[0] <= _BLOCK_ROWS:
            return self._energy_grad_rows(X)
        energies = np.empty(X.shape[0])
        grads = np.empty_like(X)
        for start in range(0, X.shape[0], _BLOCK_ROWS):
            stop = start + _BLOCK_ROWS
            energies[start:stop], grads[start:stop] = self._energy_grad_rows(X[start:stop])
        return energies, grads

    def energy(self, x: np.ndarray) -> float:
        """
        Energy of a single point.

        Args:
            x (np.ndarray): Point in R^d

        Returns:
            float: E(x)
        """
        value = float(self.energy_batch(np.asarray(x, dtype=np.float64).reshape(1, -1))[0])
        if not np.isfinite(value):
            raise SingularConfigurationError(f"{self.benchmark_id} energy is singular at this configuration")
        return value

    def grad_energy(self, x: np.ndarray) -> np.ndarray:
        """
        Gradient of the energy at a single point.

        Args:
            x (np.ndarray): Point in R^d

        Returns:
            np.ndarray: ∇E(x)
        """
        x = np.asarray(x, dtype=np.float64).reshape(1, -1)
        if not np.isfinite(self.energy_batch(x)[0]):
            raise SingularConfigurationError(f"{self.benchmark_id} gradient is singular at this configuration")
        return self.grad_batch(x)[0]

    def reference_sample(self, n: int, rng: Rng) -> SampleSet:
        """
        Exact i.i.d. draws from the target.

        Args:
            n (int): Number of samples
            rng (Rng): Random stream

        Returns:
            SampleSet: Reference samples in physical coordinates
        """
        raise ConfigError(
            f"{self.benchmark_id} cannot be sampled exactly; ingest a reference CSV instead"
        )

    def normalized(self) -> 'EnergyFn':
        """View of this energy in network coordinates y = x / scale."""
        if self.scale == 1.0:
            return self
        return ScaledEnergy(self)

    def describe(self) -> Dict[str, Any]:
        return {'id': self.benchmark_id, 'dim': self.dim, 'scale': self.scale}


class ScaledEnergy(EnergyFn):
    """E_y(y) = E(s·y), with gradient s·∇E(s·y)."""

    def __init__(self, base: EnergyFn):
        self.base = base
        self.benchmark_id = base.benchmark_id
        self.dim = base.dim
        self.scale = 1.0
        self.factor = float(base.scale)

    def _energy_rows(self, X: np.ndarray) -> np.ndarray:
        return self.base._energy_rows(self.factor * X)

    def _grad_rows(self, X: np.ndarray) -> np.ndarray:
        return self.factor * self.base._grad_rows(self.factor * X)

    def _energy_grad_rows(self, X: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        energies, grads = self.base._energy_grad_rows(self.factor * X)
        grads *= self.factor
        return energies, grads

    def describe(self) -> Dict[str, Any]:
        return {**self.base.describe(), 'normalized': True}


@dataclass
class GmmSpec:
    """
    Equal-weight 2D Gaussian mixture with shared isotropic covariance.

    Attributes:
        m (int): Number of components
        means (np.ndarray): Component means, shape (m, 2)
        cov_scale (float): Shared variance per axis
        seed (int): Seed that fixed the means
    """

    m: int
    means: np.ndarray
    cov_scale: float
    seed: int = 0

    @classmethod
    def from_seed(cls, m: int, seed: int, cov_scale: Optional[float] = None) -> 'GmmSpec':
        """
        Draw the means uniformly on (−m, m)² from a seeded stream.

        Args:
            m (int): Number of components
            seed (int): Seed for the means
            cov_scale (Optional[float]): Variance per axis, defaults to m

        Returns:
            GmmSpec: Mixture specification
        """
        if m < 1:
            raise ConfigError(f"GMM needs at least one component, got {m}")
        rng = Rng(seed).substream('gmm_means', m)
        means = rng.uniform(-m, m, size=(m, 2))
        return cls(m=m, means=means, cov_scale=float(m if cov_scale is None else cov_scale), seed=seed)


class GmmEnergy(EnergyFn):
    """
    E(x) = −log Σ_i exp(−‖x − μ_i‖² / (2c)).

    The −log m term and the Gaussian normalizer are dropped; both are constant
    shifts of E and cancel wherever energies are compared or self-normalized.
    """

    exact_sampling = True

    def __init__(self, spec: GmmSpec, scale: float = 1.0, benchmark_id: Optional[str] = None):
        self.spec = spec
        self.means = np.asarray(spec.means, dtype=np.float64)
        self.dim = self.means.shape[1]
        self.scale = float(scale)
        self.benchmark_id = benchmark_id or f'gmm{spec.m}'
        self._mean_sq = (self.means ** 2).sum(axis=1)

    def _logits(self, X: np.ndarray) -> np.ndarray:
        # −max(‖x − μ‖², 0) / 2c, built in place on the (n, m) product
        logits = X @ self.means.T
        logits *= 2.0
        logits -= (X ** 2).sum(axis=1)[:, None]
        logits -= self._mean_sq[None, :]
        np.minimum(logits, 0.0, out=logits)
        logits /= 2.0 * self.spec.cov_scale
        return logits

    def _energy_rows(self, X: np.ndarray) -> np.ndarray:
        return -special.logsumexp(self._logits(X), axis=1)

    def _grad_rows(self, X: np.ndarray) -> np.ndarray:
        return self._energy_grad_rows(X)[1]

    def _energy_grad_rows(self, X: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        logits = self._logits(X)
        lse = special.logsumexp(logits, axis=1)
        logits -= lse[:, None]
        resp = np.exp(logits, out=logits)
        return -lse, (X - resp @ self.means) / self.spec.cov_scale

    def reference_sample(self, n: int, rng: Rng) -> SampleSet:
        if n < 1:
            raise ConfigError(f"Reference sample size must be >= 1, got {n}")
        components = rng.integers(0, self.spec.m, size=n)
        noise = rng.normal(size=(n, self.dim))
        points = self.means[components] + np.sqrt(self.spec.cov_scale) * noise
        return SampleSet(points=points, seed=rng.seed, source='reference', benchmark=self.benchmark_id)

    def export_means(self, path: str) -> None:
        """
        Write the component means to JSON for inspection.

        Args:
            path (str): Output JSON path
        """
        payload = {
            'benchmark': self.benchmark_id,
            'm': self.spec.m,
            'seed': self.spec.seed,
            'cov_scale': self.spec.cov_scale,
            'means': self.means.tolist(),
        }
        try:
            os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
            with open(path, 'w') as f:
                json.dump(payload, f, indent=2)
        except OSError as e:
            logger.error(f"Error exporting GMM means: {e}")
            raise DataIOError(f"Cannot write GMM means to {path}: {e}") from e
        logger.info(f"GMM means saved to {path}")

    def describe(self) -> Dict[str, Any]:
        return {**super().describe(), 'm': self.spec.m, 'means_seed': self.spec.seed,
                'cov_scale': self.spec.cov_scale}


class GaussEnergy(EnergyFn):
    """Standard normal target, E(x) = ‖x‖² / 2."""

    exact_sampling = True

    def __init__(self, dim: int):
        if dim < 1:
            raise ConfigError(f"Gaussian dimension must be >= 1, got {dim}")
        self.dim = dim
        self.benchmark_id = f'gauss{dim}'

    def _energy_rows(self, X: np.ndarray) -> np.ndarray:
        return 0.5 * (X ** 2).sum(axis=1)

    def _grad_rows(self, X: np.ndarray) -> np.ndarray:
        return X.copy()

    def reference_sample(self, n: int, rng: Rng) -> SampleSet:
        if n < 1:
            raise ConfigError(f"Reference sample size must be >= 1, got {n}")
        return SampleSet(points=rng.normal(size=(n, self.dim)), seed=rng.seed,
                         source='reference', benchmark=self.benchmark_id)


class Bimodal1dEnergy(EnergyFn):
    """Equal mixture of N(μ1, σ²) and N(μ2, σ²) on the real line."""

    exact_sampling = True

    def __init__(self, mu1: float = -2.0, mu2: float = 2.0, sigma: float = 1.0):
        if sigma <= 0:
            raise ConfigError(f"sigma must be positive, got {sigma}")
        self.mu = np.array([mu1, mu2], dtype=np.float64)
        self.sigma = float(sigma)
        self.dim = 1
        self.benchmark_id = 'bimodal1d'

    def _logits(self, X: np.ndarray) -> np.ndarray:
        return -((X - self.mu[None, :]) ** 2) / (2.0 * self.sigma ** 2)

    def _energy_rows(self, X: np.ndarray) -> np.ndarray:
        return -special.logsumexp(self._logits(X), axis=1)

    def _grad_rows(self, X: np.ndarray) -> np.ndarray:
        return self._energy_grad_rows(X)[1]

    def _energy_grad_rows(self, X: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        logits = self._logits(X)
        lse = special.logsumexp(logits, axis=1)
        resp = np.exp(logits - lse[:, None])
        grads = (resp * (X - self.mu[None, :])).sum(axis=1) / self.sigma ** 2
        return -lse, grads.reshape(-1, 1)

    def reference_sample(self, n: int, rng: Rng) -> SampleSet:
        if n < 1:
            raise ConfigError(f"Reference sample size must be >= 1, got {n}")
        components = rng.integers(0, 2, size=n)
        points = self.mu[components] + self.sigma * rng.normal(size=n)
        return SampleSet(points=points.reshape(-1, 1), seed=rng.seed,
                         source='reference', benchmark=self.benchmark_id)

    def describe(self) -> Dict[str, Any]:
        return {**super().describe(), 'mu1': float(self.mu[0]), 'mu2': float(self.mu[1]), 'sigma': self.sigma}


class PairPotential(EnergyFn):
    """
    Shared geometry for particle systems: rows are flattened (n_particles, space_dim)
    configurations, energies are sums over the pairs i < j.
    """

    def __init__(self, n_particles: int, space_dim: int):
        if n_particles < 2 or space_dim < 1:
            raise ConfigError(f"Particle system needs >= 2 particles in >= 1 dims, got {n_particles}x{space_dim}")
        self.n_particles = n_particles
        self.space_dim = space_dim
        self.dim = n_particles * space_dim
        self._pair_i, self._pair_j = np.triu_indices(n_particles, k=1)
        incidence = np.zeros((len(self._pair_i), n_particles))
        incidence[np.arange(len(self._pair_i)), self._pair_i] = 1.0
        incidence[np.arange(len(self._pair_i)), self._pair_j] = -1.0
        self._incidence = incidence

    def pair_geometry(self, X: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """
        Pair displacement vectors and distances.

        Args:
            X (np.ndarray): Flattened configurations, shape (n, N·D)

        Returns:
            Tuple[np.ndarray, np.ndarray]: diffs (n, P, D) and distances (n, P)
        """
        Y = X.reshape(X.shape[0], self.n_particles, self.space_dim)
        diffs = Y[:, self._pair_i, :] - Y[:, self._pair_j, :]
        return diffs, np.linalg.norm(diffs, axis=-1)

    def _scatter(self, dE_dd: np.ndarray, diffs: np.ndarray, dists: np.ndarray) -> np.ndarray:
        unit = diffs / np.maximum(dists, 1e-300)[..., None]
        contrib = dE_dd[..., None] * unit
        grads = np.einsum('pk,npd->nkd', self._incidence, contrib)
        return grads.reshape(diffs.shape[0], self.dim)

    def describe(self) -> Dict[str, Any]:
        return {**super().describe(), 'n_particles': self.n_particles, 'space_dim': self.space_dim}


class DoubleWellEnergy(PairPotential):
    """
    E(x) = 1/(2τ) Σ_{i<j} [a(d_ij − d0) + b(d_ij − d0)² + c(d_ij − d0)⁴].
    """

    def __init__(self, n_particles: int = 4, space_dim: int = 2, a: float = 0.0, b: float = -4.0,
                 c: float = 0.9, tau: float = 1.0, d0: float = 4.0):
        super().__init__(n_particles, space_dim)
        self.a, self.b, self.c, self.tau, self.d0 = a, b, c, tau, d0
        self.benchmark_id = f'dw{n_particles}'

    def _pair_energy(self, dists: np.ndarray) -> np.ndarray:
        u = dists - self.d0
        return (self.a * u + self.b * u ** 2 + self.c * u ** 4).sum(axis=1) / (2.0 * self.tau)

    def _pair_grad(self, diffs: np.ndarray, dists: np.ndarray) -> np.ndarray:
        u = dists - self.d0
        dE_dd = (self.a + 2.0 * self.b * u + 4.0 * self.c * u ** 3) / (2.0 * self.tau)
        return self._scatter(dE_dd, diffs, dists)

    def _energy_rows(self, X: np.ndarray) -> np.ndarray:
        return self._pair_energy(self.pair_geometry(X)[1])

    def _grad_rows(self, X: np.ndarray) -> np.ndarray:
        return self._pair_grad(*self.pair_geometry(X))

    def _energy_grad_rows(self, X: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        diffs, dists = self.pair_geometry(X)
        return self._pair_energy(dists), self._pair_grad(diffs, dists)

    def describe(self) -> Dict[str, Any]:
        return {**super().describe(), 'a': self.a, 'b': self.b, 'c': self.c, 'tau': self.tau, 'd0': self.d0}


class LennardJonesEnergy(PairPotential):
    """
    E(x) = ε/(2τ) Σ_{i<j} [(r_m/d_ij)¹² − (r_m/d_ij)⁶] + c · ½ Σ_i ‖x_i − x_COM‖².

    The center of mass is recomputed for every configuration.
    """

    def __init__(self, n_particles: int = 13, space_dim: int = 3, epsilon: float = 1.0,
                 r_m: float = 1.0, tau: float = 1.0, c_osc: float = 0.5):
        super().__init__(n_particles, space_dim)
        self.epsilon, self.r_m, self.tau, self.c_osc = epsilon, r_m, tau, c_osc
        self.benchmark_id = f'lj{n_particles}'

    def _centered(self, X: np.ndarray) -> np.ndarray:
        Y = X.reshape(X.shape[0], self.n_particles, self.space_dim)
        return Y - Y.mean(axis=1, keepdims=True)

    def _pair_terms(self, dists: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        singular = (dists < SINGULAR_DISTANCE).any(axis=1)
        safe = np.maximum(dists, SINGULAR_DISTANCE)
        return singular, safe, (self.r_m / safe) ** 6

    def _lj_energy(self, X: np.ndarray, singular: np.ndarray, ratio6: np.ndarray) -> np.ndarray:
        lj = self.epsilon / (2.0 * self.tau) * (ratio6 ** 2 - ratio6).sum(axis=1)
        osc = 0.5 * (self._centered(X) ** 2).sum(axis=(1, 2))
        energies = lj + self.c_osc * osc
        energies[singular] = np.inf
        return energies

    def _lj_grad(self, X: np.ndarray, diffs: np.ndarray, singular: np.ndarray, safe: np.ndarray,
                 ratio6: np.ndarray) -> np.ndarray:
        dE_dd = self.epsilon / (2.0 * self.tau) * (-12.0 * ratio6 ** 2 + 6.0 * ratio6) / safe
        grads = self._scatter(dE_dd, diffs, safe)
        grads += self.c_osc * self._centered(X).reshape(X.shape[0], self.dim)
        grads[singular] = 0.0
        return grads

    def _energy_rows(self, X: np.ndarray) -> np.ndarray:
        singular, _, ratio6 = self._pair_terms(self.pair_geometry(X)[1])
        return self._lj_energy(X, singular, ratio6)

    def _grad_rows(self, X: np.ndarray) -> np.ndarray:
        diffs, dists = self.pair_geometry(X)
        return self._lj_grad(X, diffs, *self._pair_terms(dists))

    def _energy_grad_rows(self, X: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        diffs, dists = self.pair_geometry(X)
        singular, safe, ratio6 = self._pair_terms(dists)
        return self._lj_energy(X, singular, ratio6), self._lj_grad(X, diffs, singular, safe, ratio6)

    def describe(self) -> Dict[str, Any]:
        return {**super().describe(), 'epsilon': self.epsilon, 'r_m': self.r_m,
                'tau': self.tau, 'c_osc': self.c_osc}


_BENCHMARK_PATTERN = re.compile(r'^(gmm|gauss|dw|lj)(\d+)$')


def build_energy(benchmark_id: str, seed: int = 0, **params) -> EnergyFn:
    """
    Construct the energy for a benchmark id.

    Args:
        benchmark_id (str): 'gmm40', 'gmm80', 'gmm120', 'gmm<m>', 'gauss<d>',
            'dw4', 'lj13', 'lj55', 'lj<n>' or 'bimodal1d'
        seed (int): Seed fixing random benchmark parameters (GMM means)
        **params: Per-benchmark overrides (cov_scale, scale, d0, c_osc, mu1, ...)

    Returns:
        EnergyFn: Energy function
    """
    benchmark_id = benchmark_id.lower().strip()
    if benchmark_id == 'bimodal1d':
        return Bimodal1dEnergy(**_pick(params, ('mu1', 'mu2', 'sigma')))

    match = _BENCHMARK_PATTERN.match(benchmark_id)
    if match is None:
        raise ConfigError(f"Unknown benchmark: {benchmark_id}")
    family, size = match.group(1), int(match.group(2))

    if family == 'gmm':
        _pick(params, ())
        spec = GmmSpec.from_seed(size, seed, cov_scale=params.get('cov_scale'))
        scale = params.get('scale') or GMM_SCALES.get(size, 1.25 * size)
        return GmmEnergy(spec, scale=scale, benchmark_id=benchmark_id)
    if family == 'gauss':
        return GaussEnergy(size)
    if family == 'dw':
        return DoubleWellEnergy(n_particles=size, **_pick(params, ('space_dim', 'a', 'b', 'c', 'tau', 'd0')))
    return LennardJonesEnergy(n_particles=size, **_pick(params, ('space_dim', 'epsilon', 'r_m', 'tau', 'c_osc')))


def _pick(params: Dict[str, Any], names: Tuple[str, ...]) -> Dict[str, Any]:
    unknown = set(params) - set(names) - {'scale', 'cov_scale'}
    if unknown:
        raise ConfigError(f"Unsupported benchmark parameters: {sorted(unknown)}")
    return {k: v for k, v in params.items() if k in names and v is not None}


def energy_from_description(description: Dict[str, Any]) -> EnergyFn:
    """
    Rebuild an energy from its describe() record, as stored in checkpoints.

    Args:
        description (Dict[str, Any]): Output of EnergyFn.describe()

    Returns:
        EnergyFn: Equivalent energy
    """
    try:
        benchmark_id = description['id']
    except (KeyError, TypeError) as e:
        raise ConfigError("Benchmark description lacks an id") from e
    skipped = {'id', 'dim', 'n_particles', 'm', 'means_seed', 'normalized'}
    params = {k: v for k, v in description.items() if k not in skipped}
    if benchmark_id.startswith('gauss'):
        params = {}
    return build_energy(benchmark_id, seed=int(description.get('means_seed', 0)), **params)
