"""
Metrics Module

Sample-quality metrics between a generated set and a reference set:
exact Wasserstein distances by optimal assignment, and total variation
distances over histograms of shifted log-energies (E-TVD), 2D positions
(S-TVD) and interparticle distances (D-TVD).
"""

import os
import json
import math
import logging
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
from scipy.optimize import linear_sum_assignment
from sklearn.metrics import pairwise_distances

from energy import EnergyFn
from errors import ConfigError, DataIOError, NumericError
from numerics import Rng, histogram_tvd, make_histogram
from samples import SampleSet

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

# Largest matched set size for exact assignment.
MAX_ASSIGNMENT_SIZE = 2000

# Fraction of finite energies below which E-TVD warns.
MIN_FINITE_FRACTION = 0.99

Samples = Union[SampleSet, np.ndarray]


@dataclass
class MetricsReport:
    """
    Evaluation result for one generated set.

    Attributes:
        w1 (float): 1-Wasserstein distance
        w2 (float): 2-Wasserstein distance
        e_tvd (Optional[float]): Energy TVD
        s_tvd (Optional[float]): Sample-space TVD, 2D benchmarks only
        d_tvd (Optional[float]): Interparticle distance TVD, particle benchmarks only
        n_gen (int): Generated samples
        n_ref (int): Reference samples
        config (Dict[str, Any]): Evaluation settings echo
    """

    w1: float
    w2: float
    e_tvd: Optional[float]
    s_tvd: Optional[float]
    d_tvd: Optional[float]
    n_gen: int
    n_ref: int
    config: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def save(self, path: str) -> None:
        try:
            os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
            with open(path, 'w', encoding='utf-8') as f:
                json.dump(self.to_dict(), f, indent=2, sort_keys=True)
        except OSError as e:
            logger.error(f"Error writing metrics report: {e}")
            raise DataIOError(f"Cannot write metrics report {path}: {e}") from e


def _points(samples: Samples) -> np.ndarray:
    points = samples.points if isinstance(samples, SampleSet) else np.asarray(samples, dtype=np.float64)
    if points.ndim == 1:
        points = points.reshape(-1, 1)
    if points.shape[0] == 0:
        raise ConfigError("Metric inputs must be nonempty")
    return points


def _pair(gen: Samples, ref: Samples) -> Tuple[np.ndarray, np.ndarray]:
    a, b = _points(gen), _points(ref)
    if a.shape[1] != b.shape[1]:
        raise ConfigError(f"Dimension mismatch: generated {a.shape[1]}-d, reference {b.shape[1]}-d")
    return a, b


def tvd_bins(n: int) -> int:
    """Histogram bin count ⌊√n⌋, never fewer than two."""
    return max(2, int(math.isqrt(int(n))))


def _pooled_range(first: np.ndarray, second: np.ndarray) -> Tuple[float, float]:
    lo = float(min(first.min(), second.min()))
    hi = float(max(first.max(), second.max()))
    if hi <= lo:
        lo, hi = lo - 0.5, hi + 0.5
    return lo, hi


def _equalize(a: np.ndarray, b: np.ndarray, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    n = min(a.shape[0], b.shape[0])
    rng = Rng(seed).substream('wasserstein_subsample')
    if a.shape[0] > n:
        a = a[np.sort(rng.choice(a.shape[0], n))]
    elif b.shape[0] > n:
        b = b[np.sort(rng.choice(b.shape[0], n))]
    return a, b


def wasserstein(gen: Samples, ref: Samples, p: int, seed: int = 0) -> float:
    """
    Exact W_p between equal-size empirical sets via the linear assignment problem.

    The larger set is first subsampled uniformly without replacement, so the
    result does not depend on argument order.

    Args:
        gen (Samples): Generated samples
        ref (Samples): Reference samples
        p (int): 1 or 2
        seed (int): Subsampling seed

    Returns:
        float: (1/n Σ matched ‖x − y‖^p)^{1/p}
    """
    if p not in (1, 2):
        raise ConfigError(f"Wasserstein order must be 1 or 2, got {p}")
    a, b = _pair(gen, ref)
    a, b = _equalize(a, b, seed)
    if a.shape[0] > MAX_ASSIGNMENT_SIZE:
        raise ConfigError(
            f"Exact assignment on {a.shape[0]} points exceeds {MAX_ASSIGNMENT_SIZE}; subsample both sets first"
        )
    # Difference-based kernel: identical rows cost exactly 0.
    cost = pairwise_distances(a, b, metric='minkowski', p=2) ** p
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].mean() ** (1.0 / p))


def _finite_energies(f: EnergyFn, points: np.ndarray, label: str) -> np.ndarray:
    energies = f.energy_batch(points)
    finite = np.isfinite(energies)
    if not finite.any():
        raise NumericError(f"All {label} energies are non-finite")
    if finite.mean() < MIN_FINITE_FRACTION:
        logger.warning(f"Only {finite.mean():.1%} of {label} energies are finite")
    elif not finite.all():
        logger.warning(f"Dropping {int((~finite).sum())} {label} samples with non-finite energy")
    return energies[finite]


def energy_tvd(gen: Samples, ref: Samples, f: EnergyFn, n_bins: Optional[int] = None) -> float:
    """
    TVD between histograms of log(E − E_min + 1), E_min pooled over both sets.

    Args:
        gen (Samples): Generated samples
        ref (Samples): Reference samples
        f (EnergyFn): Energy in physical coordinates
        n_bins (Optional[int]): Bin count; ⌊√min(n_gen, n_ref)⌋ by default

    Returns:
        float: Distance in [0, 1]
    """
    a, b = _pair(gen, ref)
    e_gen = _finite_energies(f, a, 'generated')
    e_ref = _finite_energies(f, b, 'reference')
    shift = min(e_gen.min(), e_ref.min())
    v_gen, v_ref = np.log(e_gen - shift + 1.0), np.log(e_ref - shift + 1.0)
    bins = n_bins or tvd_bins(min(a.shape[0], b.shape[0]))
    value_range = _pooled_range(v_gen, v_ref)
    return histogram_tvd(make_histogram(v_gen, bins, value_range), make_histogram(v_ref, bins, value_range))


def sample_tvd(gen: Samples, ref: Samples, bins_per_axis: Optional[int] = None) -> float:
    """
    TVD between 2D histograms on the pooled bounding box.

    Each axis gets ⌊√n_bins⌋ cells, where n_bins is the 1D rule, so the
    grid holds about n_bins cells in total.

    Args:
        gen (Samples): Generated 2D samples
        ref (Samples): Reference 2D samples
        bins_per_axis (Optional[int]): Override for the per-axis cell count

    Returns:
        float: Distance in [0, 1]
    """
    a, b = _pair(gen, ref)
    if a.shape[1] != 2:
        raise ConfigError(f"Sample TVD is defined for 2D samples, got {a.shape[1]}-d")
    k = bins_per_axis or tvd_bins(tvd_bins(min(a.shape[0], b.shape[0])))
    ranges = [_pooled_range(a[:, axis], b[:, axis]) for axis in range(2)]

    def mass(points: np.ndarray) -> np.ndarray:
        clipped = np.column_stack([np.clip(points[:, axis], *ranges[axis]) for axis in range(2)])
        counts, _, _ = np.histogram2d(clipped[:, 0], clipped[:, 1], bins=[k, k], range=ranges)
        return counts / points.shape[0]

    return float(0.5 * np.abs(mass(a) - mass(b)).sum())


def pair_distances(points: np.ndarray, n_particles: int, space_dim: int) -> np.ndarray:
    """All n(n−1)/2 interparticle distances per configuration, shape (N, n(n−1)/2)."""
    if points.shape[1] != n_particles * space_dim:
        raise ConfigError(
            f"Configurations have {points.shape[1]} coordinates, expected {n_particles} x {space_dim}"
        )
    coords = points.reshape(points.shape[0], n_particles, space_dim)
    i, j = np.triu_indices(n_particles, k=1)
    return np.linalg.norm(coords[:, i, :] - coords[:, j, :], axis=-1)


def distance_tvd(gen: Samples, ref: Samples, n_particles: int, space_dim: int,
                 n_bins: Optional[int] = None) -> float:
    """
    TVD between histograms of all pairwise interparticle distances.

    Args:
        gen (Samples): Generated configurations
        ref (Samples): Reference configurations
        n_particles (int): Particles per configuration
        space_dim (int): Spatial dimension
        n_bins (Optional[int]): Bin count; ⌊√min(n_gen, n_ref)⌋ by default

    Returns:
        float: Distance in [0, 1]
    """
    a, b = _pair(gen, ref)
    d_gen = pair_distances(a, n_particles, space_dim).ravel()
    d_ref = pair_distances(b, n_particles, space_dim).ravel()
    bins = n_bins or tvd_bins(min(a.shape[0], b.shape[0]))
    value_range = _pooled_range(d_gen, d_ref)
    return histogram_tvd(make_histogram(d_gen, bins, value_range), make_histogram(d_ref, bins, value_range))


def evaluate(gen: Samples, ref: Samples, f: EnergyFn, seed: int = 0) -> MetricsReport:
    """
    Full metric suite for a benchmark: W1, W2, E-TVD, plus S-TVD in 2D and
    D-TVD for particle systems.

    Args:
        gen (Samples): Generated samples
        ref (Samples): Reference samples
        f (EnergyFn): Benchmark energy
        seed (int): Subsampling seed for the Wasserstein distances

    Returns:
        MetricsReport: Metric values and counts
    """
    a, b = _pair(gen, ref)
    if a.shape[1] != f.dim:
        raise ConfigError(f"Samples are {a.shape[1]}-d, benchmark {f.benchmark_id} is {f.dim}-d")
    report = MetricsReport(
        w1=wasserstein(a, b, 1, seed=seed),
        w2=wasserstein(a, b, 2, seed=seed),
        e_tvd=energy_tvd(a, b, f),
        s_tvd=sample_tvd(a, b) if f.dim == 2 else None,
        d_tvd=distance_tvd(a, b, f.n_particles, f.space_dim) if f.n_particles else None,
        n_gen=a.shape[0],
        n_ref=b.shape[0],
        config={'benchmark': f.benchmark_id, 'seed': seed,
                'matched_n': min(a.shape[0], b.shape[0])},
    )
    logger.info(f"Metrics for {f.benchmark_id}: W1 {report.w1:.4f}, W2 {report.w2:.4f}, E-TVD {report.e_tvd:.4f}")
    return report
