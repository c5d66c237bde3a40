"""
Numerics Module

Deterministic random streams, log-domain reductions and histogramming shared by
every other module. All floating-point work is 64-bit.
"""

import os
import zlib
import logging
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy import special

from errors import ConfigError, NonFiniteError

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

_SEED_MASK = (1 << 64) - 1

ArrayLike = Union[Sequence[float], np.ndarray]


class Rng:
    """
    Seedable random stream backed by numpy's counter-based Philox generator.

    A stream is identified by the run seed plus a key path. Substreams are
    derived with SeedSequence spawn keys, so a given (seed, tag, index) path
    always yields the same draws regardless of what other streams consumed.
    """

    def __init__(self, seed: int, key: Tuple[int, ...] = ()):
        """
        Initialize the stream.

        Args:
            seed (int): 64-bit run seed
            key (Tuple[int, ...]): Spawn key path identifying the substream
        """
        if int(seed) < 0:
            raise ConfigError(f"Seed must be non-negative, got {seed}")
        self.seed = int(seed) & _SEED_MASK
        self.key = tuple(int(k) for k in key)
        sequence = np.random.SeedSequence(entropy=self.seed, spawn_key=self.key)
        self._generator = np.random.Generator(np.random.Philox(sequence))

    def substream(self, tag: str, index: int = 0) -> 'Rng':
        """
        Derive an independent stream keyed by a purpose tag and an index.

        Args:
            tag (str): Purpose of the draws (e.g. 'buffer', 'inner')
            index (int): Non-negative index within that purpose

        Returns:
            Rng: Child stream
        """
        if index < 0:
            raise ConfigError(f"Substream index must be non-negative, got {index}")
        tag_key = zlib.crc32(tag.encode('utf-8'))
        return Rng(self.seed, self.key + (tag_key, int(index)))

    def normal(self, size=None) -> np.ndarray:
        return self._generator.standard_normal(size)

    def uniform(self, low: float = 0.0, high: float = 1.0, size=None) -> np.ndarray:
        return self._generator.uniform(low, high, size)

    def integers(self, low: int, high: int, size=None) -> np.ndarray:
        return self._generator.integers(low, high, size)

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        return self._generator.choice(n, size=size, replace=replace)

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed}, key={self.key})"


@dataclass
class Histogram:
    """Equal-width histogram with probability mass per bin."""

    edges: np.ndarray
    mass: np.ndarray

    @property
    def n_bins(self) -> int:
        return len(self.mass)


def log_sum_exp(values: ArrayLike, axis: Optional[int] = None) -> Union[float, np.ndarray]:
    """
    Stable log Σ exp(v_i), computed as max(v) + log Σ exp(v_i − max(v)).

    Args:
        values (ArrayLike): Input values
        axis (Optional[int]): Reduction axis; None reduces everything

    Returns:
        Union[float, np.ndarray]: Log of the sum of exponentials
    """
    array = np.asarray(values, dtype=np.float64)
    if array.size == 0:
        raise ConfigError("log_sum_exp requires a nonempty input")
    result = special.logsumexp(array, axis=axis)
    if axis is None:
        return float(result)
    return result


def softmax(values: ArrayLike, axis: int = -1) -> np.ndarray:
    """
    Normalized exponentials, invariant to adding a constant to all entries.

    Entries equal to -inf receive zero probability.

    Args:
        values (ArrayLike): Logits
        axis (int): Normalization axis

    Returns:
        np.ndarray: Probabilities summing to one along axis
    """
    array = np.asarray(values, dtype=np.float64)
    if array.size == 0:
        raise ConfigError("softmax requires a nonempty input")
    if np.isnan(array).any():
        raise NonFiniteError("softmax received NaN logits")
    return special.softmax(array, axis=axis)


def make_histogram(values: ArrayLike, n_bins: int, value_range: Tuple[float, float]) -> Histogram:
    """
    Histogram over equal-width bins on [lo, hi].

    Bins are half-open [edge_i, edge_{i+1}) except the last, which is closed.
    Values outside the range are clamped into the boundary bins so that mass
    is never lost when two sets share a range.

    Args:
        values (ArrayLike): Values to bin
        n_bins (int): Number of bins
        value_range (Tuple[float, float]): (lo, hi) with hi > lo

    Returns:
        Histogram: Edges and normalized mass
    """
    array = np.asarray(values, dtype=np.float64).ravel()
    lo, hi = float(value_range[0]), float(value_range[1])
    if array.size == 0:
        raise ConfigError("Cannot build a histogram from an empty set of values")
    if n_bins < 1:
        raise ConfigError(f"n_bins must be >= 1, got {n_bins}")
    if not hi > lo:
        raise ConfigError(f"Histogram range must satisfy hi > lo, got ({lo}, {hi})")

    counts, edges = np.histogram(np.clip(array, lo, hi), bins=n_bins, range=(lo, hi))
    mass = counts.astype(np.float64) / array.size
    return Histogram(edges=edges, mass=mass)


def histogram_tvd(first: Histogram, second: Histogram) -> float:
    """
    Total variation distance ½ Σ |p_i − q_i| between histograms on shared edges.

    Args:
        first (Histogram): First histogram
        second (Histogram): Second histogram

    Returns:
        float: Distance in [0, 1]
    """
    if first.n_bins != second.n_bins or not np.allclose(first.edges, second.edges):
        raise ConfigError("Histograms must share identical edges to be compared")
    return float(0.5 * np.abs(first.mass - second.mass).sum())


def worker_count(n_jobs: Optional[int] = None) -> int:
    """
    Number of parallel workers: explicit value, else IWSM_THREADS, else 1.

    Args:
        n_jobs (Optional[int]): Requested worker count

    Returns:
        int: Worker count >= 1
    """
    if n_jobs is None:
        raw = os.getenv('IWSM_THREADS')
        if not raw:
            return 1
        try:
            n_jobs = int(raw)
        except ValueError as e:
            raise ConfigError(f"IWSM_THREADS must be an integer, got {raw!r}") from e
    if n_jobs < 1:
        raise ConfigError(f"Worker count must be >= 1, got {n_jobs}")
    return int(n_jobs)
