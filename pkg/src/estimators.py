"""
Estimators Module

Monte Carlo estimators behind importance weighted score matching:

    S_L   score target   −Σ_i softmax(−E(x⁽ⁱ⁾))_i ∇E(x⁽ⁱ⁾),  x⁽ⁱ⁾ ~ N(x_t, σ_t² I)
    N_K   numerator      (1/K) Σ_i exp(−E(x⁽ⁱ⁾))
    D_M   denominator    (1/M) Σ_j p_{t|0}(x_t | x₀⁽ʲ⁾)
    w̃     N_K / D_M, normalized within a batch (SNIS)

Every weight quantity stays in the log domain; w̃ is only exponentiated
inside the final batch softmax.
"""

import math
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from energy import EnergyFn
from errors import ConfigError, NonFiniteError, NumericError
from numerics import Rng, log_sum_exp, softmax
from sde import VeSchedule

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

# Attempts at drawing an inner sample set with at least one finite energy.
MAX_DRAW_ATTEMPTS = 3


@dataclass
class InnerSamples:
    """
    Gaussian inner samples around each x_t with their energies and gradients.

    Attributes:
        points (np.ndarray): Shape (n, L, d)
        energies (np.ndarray): Shape (n, L); +inf marks dropped samples
        grads (np.ndarray): Shape (n, L, d); zero for dropped samples
    """

    points: np.ndarray
    energies: np.ndarray
    grads: np.ndarray

    @property
    def count(self) -> int:
        return self.energies.shape[1]


@dataclass
class ScoreTarget:
    """
    S_L estimate for one point.

    Attributes:
        value (np.ndarray): Estimated score, shape (d,)
        n_inner (int): Number of inner samples L
        clipped (bool): Whether norm clipping rescaled the value
        inner (Optional[InnerSamples]): Draws behind the estimate, kept for reuse
    """

    value: np.ndarray
    n_inner: int
    clipped: bool = False
    inner: Optional[InnerSamples] = None


@dataclass
class WeightEstimate:
    """Log-domain pieces of the unnormalized importance weight w̃ = N_K / D_M."""

    log_numerator: float
    log_denominator: float

    @property
    def log_w_tilde(self) -> float:
        return self.log_numerator - self.log_denominator


def _as_rows(x_t: np.ndarray, t: Union[float, np.ndarray]) -> Tuple[np.ndarray, np.ndarray]:
    X = np.asarray(x_t, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    times = np.broadcast_to(np.asarray(t, dtype=np.float64), (X.shape[0],)).copy()
    return X, times


def _evaluate(f: EnergyFn, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    m, L, d = points.shape
    energies, grads = f.energy_and_grad_batch(points.reshape(-1, d))
    return energies.reshape(m, L), grads.reshape(m, L, d)


def draw_inner_samples(f: EnergyFn, sched: VeSchedule, x_t: np.ndarray, t: Union[float, np.ndarray],
                       L: int, rng: Rng) -> InnerSamples:
    """
    Draw L points from N(x_t, σ_t² I) per row and evaluate E and ∇E there.

    Samples with non-finite energy are dropped (weight zero). A row whose
    draws are all non-finite is redrawn, at most MAX_DRAW_ATTEMPTS times in total.

    Args:
        f (EnergyFn): Energy in the coordinates of x_t
        sched (VeSchedule): Noise schedule
        x_t (np.ndarray): Noisy points, shape (n, d) or (d,)
        t (Union[float, np.ndarray]): Scalar time or one time per row
        L (int): Inner samples per row
        rng (Rng): Random stream

    Returns:
        InnerSamples: Draws, energies and gradients
    """
    if L < 1:
        raise ConfigError(f"Number of inner samples must be >= 1, got {L}")
    X, times = _as_rows(x_t, t)
    n, d = X.shape
    sig = np.asarray(sched.sigma(times)).reshape(n, 1, 1)

    points = X[:, None, :] + sig * rng.normal(size=(n, L, d))
    energies, grads = _evaluate(f, points)

    pending = ~np.isfinite(energies).any(axis=1)
    attempts = 1
    while pending.any():
        if attempts >= MAX_DRAW_ATTEMPTS:
            raise NumericError(
                f"All {L} inner energies non-finite for {int(pending.sum())} point(s) after {attempts} attempts"
            )
        rows = np.flatnonzero(pending)
        logger.warning(f"Redrawing inner samples for {len(rows)} point(s) with no finite energy")
        points[rows] = X[rows, None, :] + sig[rows] * rng.normal(size=(len(rows), L, d))
        energies[rows], grads[rows] = _evaluate(f, points[rows])
        pending = ~np.isfinite(energies).any(axis=1)
        attempts += 1

    finite = np.isfinite(energies)
    energies = np.where(finite, energies, np.inf)
    grads[~finite] = 0.0
    return InnerSamples(points=points, energies=energies, grads=grads)


def score_from_inner(inner: InnerSamples, clip_norm: Optional[float] = None) -> Tuple[np.ndarray, np.ndarray]:
    """
    S_L per row from precomputed inner samples.

    Args:
        inner (InnerSamples): Draws with energies and gradients
        clip_norm (Optional[float]): Maximum Euclidean norm of each target

    Returns:
        Tuple[np.ndarray, np.ndarray]: Targets (n, d) and clipped flags (n,)
    """
    weights = softmax(-inner.energies, axis=1)
    targets = -np.einsum('nl,nld->nd', weights, inner.grads)
    clipped = np.zeros(targets.shape[0], dtype=bool)
    if clip_norm is not None:
        if clip_norm <= 0:
            raise ConfigError(f"clip_norm must be positive, got {clip_norm}")
        norms = np.linalg.norm(targets, axis=1)
        clipped = norms > clip_norm
        if clipped.any():
            targets[clipped] *= (clip_norm / norms[clipped])[:, None]
    return targets, clipped


def log_numerator_from_inner(inner: InnerSamples) -> np.ndarray:
    """log N_K = log Σ_i exp(−E(x⁽ⁱ⁾)) − ln K per row; dropped samples count in K with zero mass."""
    return log_sum_exp(-inner.energies, axis=1) - math.log(inner.count)


def score_targets_batch(f: EnergyFn, sched: VeSchedule, x_t: np.ndarray, t: Union[float, np.ndarray],
                        L: int, rng: Rng, clip_norm: Optional[float] = None
                        ) -> Tuple[np.ndarray, np.ndarray, np.ndarray, InnerSamples]:
    """
    S_L targets and log N_K from one shared inner draw (the K = L reuse).

    Args:
        f (EnergyFn): Energy in the coordinates of x_t
        sched (VeSchedule): Noise schedule
        x_t (np.ndarray): Noisy points, shape (n, d)
        t (Union[float, np.ndarray]): Scalar time or one time per row
        L (int): Inner samples per row
        rng (Rng): Random stream
        clip_norm (Optional[float]): Target norm cap

    Returns:
        Tuple: targets (n, d), log numerators (n,), clipped flags (n,), inner samples
    """
    inner = draw_inner_samples(f, sched, x_t, t, L, rng)
    targets, clipped = score_from_inner(inner, clip_norm)
    return targets, log_numerator_from_inner(inner), clipped, inner


def score_target(f: EnergyFn, sched: VeSchedule, x_t: np.ndarray, t: float, L: int, rng: Rng,
                 clip_norm: Optional[float] = None) -> ScoreTarget:
    """
    S_L estimate of ∇ log p_t at a single point.

    Args:
        f (EnergyFn): Energy in the coordinates of x_t
        sched (VeSchedule): Noise schedule
        x_t (np.ndarray): Point, shape (d,)
        t (float): Time
        L (int): Inner samples
        rng (Rng): Random stream
        clip_norm (Optional[float]): Target norm cap

    Returns:
        ScoreTarget: Estimate with its inner draws
    """
    targets, _, clipped, inner = score_targets_batch(f, sched, x_t, t, L, rng, clip_norm)
    return ScoreTarget(value=targets[0], n_inner=L, clipped=bool(clipped[0]), inner=inner)


def log_numerator(f: EnergyFn, sched: VeSchedule, x_t: np.ndarray, t: float, K: int, rng: Rng,
                  reuse: Optional[InnerSamples] = None) -> float:
    """
    log N_K at a single point.

    With `reuse`, the energies already evaluated for S_L are used and no new
    draws or energy evaluations take place.

    Args:
        f (EnergyFn): Energy in the coordinates of x_t
        sched (VeSchedule): Noise schedule
        x_t (np.ndarray): Point, shape (d,)
        t (float): Time
        K (int): Inner samples
        rng (Rng): Random stream
        reuse (Optional[InnerSamples]): Shared inner draws for this point

    Returns:
        float: log N_K
    """
    if reuse is not None:
        if reuse.count != K:
            raise ConfigError(f"Reused inner samples hold {reuse.count} draws, K={K} requested")
        return float(log_numerator_from_inner(reuse)[0])
    inner = draw_inner_samples(f, sched, x_t, t, K, rng)
    return float(log_numerator_from_inner(inner)[0])


def log_denominator(sched: VeSchedule, x_t: np.ndarray, t: float, buffer_batch: np.ndarray) -> float:
    """
    log D_M = log Σ_j p_{t|0}(x_t | x₀⁽ʲ⁾) − ln M.

    Args:
        sched (VeSchedule): Noise schedule
        x_t (np.ndarray): Point, shape (d,)
        t (float): Time
        buffer_batch (np.ndarray): Buffer samples, shape (M, d)

    Returns:
        float: log D_M
    """
    return float(log_denominator_batch(sched, np.asarray(x_t).reshape(1, -1), t, buffer_batch)[0])


def log_denominator_batch(sched: VeSchedule, x_t: np.ndarray, t: Union[float, np.ndarray],
                          buffer_batch: np.ndarray) -> np.ndarray:
    """
    log D_M for every row of x_t against a shared set of buffer samples.

    Args:
        sched (VeSchedule): Noise schedule
        x_t (np.ndarray): Points, shape (n, d)
        t (Union[float, np.ndarray]): Scalar time or one time per row
        buffer_batch (np.ndarray): Buffer samples, shape (M, d)

    Returns:
        np.ndarray: log D_M per row, shape (n,)
    """
    X, times = _as_rows(x_t, t)
    X0 = np.asarray(buffer_batch, dtype=np.float64)
    if X0.ndim == 1:
        X0 = X0.reshape(1, -1)
    if X0.shape[0] == 0:
        raise ConfigError("Denominator needs at least one buffer sample")
    log_kernel = sched.log_transition(X[:, None, :], X0[None, :, :], times[:, None])
    return log_sum_exp(log_kernel, axis=1) - math.log(X0.shape[0])


def estimate_weight(f: EnergyFn, sched: VeSchedule, x_t: np.ndarray, t: float, K: int, rng: Rng,
                    buffer_batch: np.ndarray, reuse: Optional[InnerSamples] = None) -> WeightEstimate:
    """Both halves of log w̃ at a single point."""
    return WeightEstimate(
        log_numerator=log_numerator(f, sched, x_t, t, K, rng, reuse=reuse),
        log_denominator=log_denominator(sched, x_t, t, buffer_batch),
    )


def snis_weights(log_w_tilde: Sequence[float]) -> np.ndarray:
    """
    Self-normalized importance weights softmax(log w̃) over a batch.

    Any constant shared by all entries (log Z among them) cancels.

    Args:
        log_w_tilde (Sequence[float]): Log unnormalized weights, shape (S,)

    Returns:
        np.ndarray: Probability vector
    """
    values = np.asarray(log_w_tilde, dtype=np.float64)
    if values.size == 0:
        raise ConfigError("SNIS weights need at least one entry")
    if np.isnan(values).any() or np.isposinf(values).any():
        raise NonFiniteError("SNIS weights received NaN or +inf log weights")
    if np.isneginf(values).all():
        raise NonFiniteError("SNIS weights received only zero-mass entries")
    return softmax(values)


def snis_weights_grouped(log_w_tilde: np.ndarray) -> np.ndarray:
    """SNIS weights normalized within each row of a (B, S) matrix."""
    values = np.asarray(log_w_tilde, dtype=np.float64)
    if np.isnan(values).any() or np.isposinf(values).any():
        raise NonFiniteError("SNIS weights received NaN or +inf log weights")
    if np.isneginf(values).all(axis=-1).any():
        raise NonFiniteError("SNIS weights received a group with only zero-mass entries")
    return softmax(values, axis=-1)


def snis_loss(s_theta_out: np.ndarray, targets: Union[np.ndarray, List[ScoreTarget]],
              weights: np.ndarray) -> float:
    """
    Σ_s w_s ‖s_θ(x⁽ˢ⁾, t) − S_L(x⁽ˢ⁾)‖².

    Args:
        s_theta_out (np.ndarray): Network outputs, shape (S, d)
        targets (Union[np.ndarray, List[ScoreTarget]]): Score targets, shape (S, d)
        weights (np.ndarray): Weights, shape (S,)

    Returns:
        float: Weighted squared error
    """
    if isinstance(targets, (list, tuple)):
        targets = np.stack([target.value for target in targets])
    outputs = np.asarray(s_theta_out, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if outputs.shape != targets.shape or weights.shape != (outputs.shape[0],):
        raise ConfigError(
            f"Inconsistent shapes: outputs {outputs.shape}, targets {targets.shape}, weights {weights.shape}"
        )
    return float(weights @ ((outputs - targets) ** 2).sum(axis=1))
