"""
Variance-Exploding SDE Module

Single source of truth for the noise schedule σ(t), the diffusion coefficient
g(t)² and the forward kernel p_{t|0}(x_t | x_0) = N(x_t; x_0, σ(t)² I) on the
horizon t ∈ [0, 1]. The drift is identically zero.
"""

import math
import logging
from dataclasses import dataclass
from typing import Dict, Union

import numpy as np

from errors import ConfigError
from numerics import Rng

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

TimeLike = Union[float, np.ndarray]


@dataclass(frozen=True)
class VeSchedule:
    """
    Geometric schedule σ(t) = σ_min (σ_max / σ_min)^t.

    Attributes:
        sigma_min (float): Noise scale at t = 0
        sigma_max (float): Noise scale at t = 1
    """

    sigma_min: float = 1e-5
    sigma_max: float = 1.0

    def __post_init__(self):
        if not (self.sigma_min > 0 and self.sigma_max > self.sigma_min):
            raise ConfigError(
                f"Schedule needs 0 < sigma_min < sigma_max, got ({self.sigma_min}, {self.sigma_max})"
            )

    @property
    def log_ratio(self) -> float:
        return math.log(self.sigma_max / self.sigma_min)

    def _check_time(self, t: TimeLike) -> np.ndarray:
        times = np.asarray(t, dtype=np.float64)
        if np.any(times < 0.0) or np.any(times > 1.0) or np.any(np.isnan(times)):
            raise ConfigError(f"Diffusion time must lie in [0, 1], got {t}")
        return times

    def sigma(self, t: TimeLike) -> TimeLike:
        """
        Noise scale at time t.

        Args:
            t (TimeLike): Time(s) in [0, 1]

        Returns:
            TimeLike: σ(t), same shape as t
        """
        times = self._check_time(t)
        values = self.sigma_min * np.exp(times * self.log_ratio)
        return float(values) if values.ndim == 0 else values

    def g_squared(self, t: TimeLike) -> TimeLike:
        """d[σ(t)²]/dt = 2 σ(t)² ln(σ_max / σ_min)."""
        sig = np.asarray(self.sigma(t))
        values = 2.0 * sig ** 2 * self.log_ratio
        return float(values) if values.ndim == 0 else values

    def perturb(self, x0: np.ndarray, t: TimeLike, rng: Rng) -> np.ndarray:
        """
        Draw x_t = x_0 + σ(t) ε with ε ~ N(0, I).

        Args:
            x0 (np.ndarray): Clean point(s), shape (d,) or (n, d)
            t (TimeLike): Scalar time or one time per row
            rng (Rng): Random stream

        Returns:
            np.ndarray: Perturbed point(s), same shape as x0
        """
        x0 = np.asarray(x0, dtype=np.float64)
        sig = np.asarray(self.sigma(t))
        if sig.ndim == 1:
            sig = sig[:, None]
        return x0 + sig * rng.normal(size=x0.shape)

    def log_transition(self, x_t: np.ndarray, x0: np.ndarray, t: TimeLike) -> TimeLike:
        """
        log N(x_t; x_0, σ(t)² I) = −d/2 · ln(2πσ²) − ‖x_t − x_0‖² / (2σ²).

        σ(0) = σ_min > 0, so the kernel stays finite on the whole horizon.

        Args:
            x_t (np.ndarray): Point(s), last axis is the dimension
            x0 (np.ndarray): Centre(s), broadcastable against x_t
            t (TimeLike): Time, broadcastable against the leading axes

        Returns:
            TimeLike: Log density per broadcast row
        """
        x_t = np.asarray(x_t, dtype=np.float64)
        x0 = np.asarray(x0, dtype=np.float64)
        dim = x_t.shape[-1]
        var = np.asarray(self.sigma(t)) ** 2
        sq = ((x_t - x0) ** 2).sum(axis=-1)
        values = -0.5 * dim * np.log(2.0 * np.pi * var) - sq / (2.0 * var)
        return float(values) if np.ndim(values) == 0 else values

    def prior_sample(self, n: int, dim: int, rng: Rng) -> np.ndarray:
        """Draw x_1 ~ N(0, σ_max² I), shape (n, dim)."""
        return self.sigma_max * rng.normal(size=(n, dim))

    def to_dict(self) -> Dict[str, float]:
        return {'sigma_min': self.sigma_min, 'sigma_max': self.sigma_max}
