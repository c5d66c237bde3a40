"""
Reverse-Time Sampler Module

Euler–Maruyama integration of the reverse VE-SDE

    dx = −g(t)² · score(x, t) dt + g(t) dw̄

from x₁ ~ N(0, σ_max² I) down a uniform time grid to t_floor. The score comes
from a trained network, from the S_L estimator evaluated afresh at every step
(sampling with estimated scores), or from any callable.

Integration runs in normalized coordinates; outputs are mapped back to
physical coordinates with the benchmark scale.
"""

import time
import logging
from dataclasses import asdict, dataclass
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
from joblib import Parallel, delayed

from energy import EnergyFn
from errors import ConfigError, NumericError
from estimators import score_targets_batch
from numerics import Rng, worker_count
from samples import SampleSet
from scorenet import ScoreNet, load_checkpoint
from sde import VeSchedule

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

# Trajectories per work unit; each chunk owns one random substream, so results
# do not depend on the number of workers.
CHUNK_SIZE = 100

SCORE_SOURCES = ('network', 'estimated')


@dataclass
class IntegratorConfig:
    """
    Reverse integration settings.

    Attributes:
        n_steps (int): Euler–Maruyama steps
        score_source (str): 'network' (trained checkpoint) or 'estimated' (S_L)
        checkpoint (Optional[str]): Checkpoint path for network mode
        n_inner (int): L for the estimated-score mode
        target_clip (Optional[float]): Norm cap on S_L in estimated mode
        t_floor (float): Final integration time
        seed (int): Run seed
    """

    n_steps: int = 1000
    score_source: str = 'network'
    checkpoint: Optional[str] = None
    n_inner: int = 1000
    target_clip: Optional[float] = None
    t_floor: float = 1e-3
    seed: int = 0

    def __post_init__(self):
        if self.n_steps < 1:
            raise ConfigError(f"n_steps must be >= 1, got {self.n_steps}")
        if self.score_source not in SCORE_SOURCES:
            raise ConfigError(f"score_source must be one of {SCORE_SOURCES}, got {self.score_source!r}")
        if self.n_inner < 1:
            raise ConfigError(f"n_inner must be >= 1, got {self.n_inner}")
        if not 0.0 <= self.t_floor < 1.0:
            raise ConfigError(f"t_floor must lie in [0, 1), got {self.t_floor}")

    def time_grid(self) -> np.ndarray:
        return np.linspace(1.0, self.t_floor, self.n_steps + 1)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


class NetworkScore:
    """Score from a trained network; reads θ only."""

    def __init__(self, net: ScoreNet):
        self.net = net

    def __call__(self, x: np.ndarray, t: float, rng: Rng) -> np.ndarray:
        return self.net.forward(x, t, cache=False)


class EstimatedScore:
    """S_L(x, t) with fresh inner samples at every call."""

    def __init__(self, f_norm: EnergyFn, sched: VeSchedule, n_inner: int, clip_norm: Optional[float] = None):
        self.f_norm = f_norm
        self.sched = sched
        self.n_inner = n_inner
        self.clip_norm = clip_norm

    def __call__(self, x: np.ndarray, t: float, rng: Rng) -> np.ndarray:
        targets, _, _, _ = score_targets_batch(self.f_norm, self.sched, x, t, self.n_inner, rng, self.clip_norm)
        return targets


class FunctionScore:
    """Wraps a plain callable fn(x, t) so it can drive the sampler."""

    def __init__(self, fn: Callable[[np.ndarray, float], np.ndarray]):
        self.fn = fn

    def __call__(self, x: np.ndarray, t: float, rng: Rng) -> np.ndarray:
        return np.asarray(self.fn(x, t), dtype=np.float64)


def _integrate_chunk(score, sched: VeSchedule, grid: np.ndarray, size: int, dim: int,
                     rng: Rng) -> Tuple[np.ndarray, int]:
    """Integrate one chunk of trajectories; returns surviving end points and the failure count."""
    x = sched.prior_sample(size, dim, rng)
    alive = np.ones(size, dtype=bool)
    g_squared = np.asarray(sched.g_squared(grid[:-1]))
    for step in range(len(grid) - 1):
        t, dt = float(grid[step]), float(grid[step] - grid[step + 1])
        rows = np.flatnonzero(alive)
        if rows.size == 0:
            break
        current = x[rows]
        drift = score(current, t, rng.substream('score', step))
        noise = rng.normal(size=current.shape)
        updated = current + g_squared[step] * drift * dt + np.sqrt(g_squared[step] * dt) * noise
        finite = np.isfinite(updated).all(axis=1)
        x[rows] = updated
        alive[rows[~finite]] = False
    return x[alive], int(size - alive.sum())


def sample_reverse(f: EnergyFn, sched: VeSchedule, cfg: IntegratorConfig, n: int,
                   net: Optional[ScoreNet] = None, score: Optional[Callable] = None,
                   rng: Optional[Rng] = None, n_jobs: Optional[int] = None) -> SampleSet:
    """
    Draw n samples by integrating the reverse SDE.

    Args:
        f (EnergyFn): Target energy in physical coordinates
        sched (VeSchedule): Noise schedule
        cfg (IntegratorConfig): Integration settings
        n (int): Number of trajectories
        net (Optional[ScoreNet]): Network for network mode; loaded from cfg.checkpoint when omitted
        score (Optional[Callable]): Explicit score source score(x, t, rng), overrides cfg.score_source
        rng (Optional[Rng]): Stream to use instead of Rng(cfg.seed)
        n_jobs (Optional[int]): Worker cap

    Returns:
        SampleSet: Surviving samples in physical coordinates; the failure count is in metadata
    """
    if n < 1:
        raise ConfigError(f"Number of samples must be >= 1, got {n}")

    source = 'custom'
    if score is None:
        if cfg.score_source == 'network':
            if net is None:
                if not cfg.checkpoint:
                    raise ConfigError("Network sampling needs a checkpoint or a ScoreNet")
                net = load_checkpoint(cfg.checkpoint, expected_benchmark=f.describe()).build_net()
            if net.spec.input_dim != f.dim:
                raise ConfigError(f"Network is {net.spec.input_dim}-d, benchmark {f.benchmark_id} is {f.dim}-d")
            score, source = NetworkScore(net), 'network'
        else:
            score, source = EstimatedScore(f.normalized(), sched, cfg.n_inner, cfg.target_clip), 'dwes'

    root = rng if rng is not None else Rng(cfg.seed)
    grid = cfg.time_grid()
    sizes = [min(CHUNK_SIZE, n - start) for start in range(0, n, CHUNK_SIZE)]

    started = time.perf_counter()
    results: List[Tuple[np.ndarray, int]] = Parallel(n_jobs=worker_count(n_jobs), prefer='threads')(
        delayed(_integrate_chunk)(score, sched, grid, size, f.dim, root.substream('reverse', chunk))
        for chunk, size in enumerate(sizes)
    )
    wall_seconds = time.perf_counter() - started

    failures = sum(failed for _, failed in results)
    points = np.concatenate([chunk_points for chunk_points, _ in results], axis=0)
    if failures:
        logger.warning(f"{failures} of {n} trajectories became non-finite and were dropped")
    if points.shape[0] == 0:
        raise NumericError(f"All {n} trajectories diverged during reverse integration")

    logger.info(f"Sampled {points.shape[0]} points for {f.benchmark_id} ({source}, "
                f"{cfg.n_steps} steps) in {wall_seconds:.2f}s")
    return SampleSet(
        points=points * f.scale,
        seed=cfg.seed,
        source=source,
        benchmark=f.benchmark_id,
        metadata={
            'config': cfg.to_dict(),
            'schedule': sched.to_dict(),
            'n_requested': n,
            'failures': failures,
            'wall_seconds': wall_seconds,
        },
    )


def fill_buffer(buffer, f: EnergyFn, sched: VeSchedule, net: ScoreNet, n: int, n_steps: int,
                rng: Rng, t_floor: float = 1e-3, n_jobs: Optional[int] = None) -> SampleSet:
    """
    Generate n samples with the current network and push them into the replay buffer.

    Args:
        buffer: Replay buffer exposing push(points)
        f (EnergyFn): Target energy in physical coordinates
        sched (VeSchedule): Noise schedule
        net (ScoreNet): Current network
        n (int): Samples to generate
        n_steps (int): Integration steps
        rng (Rng): Generation stream
        t_floor (float): Final integration time
        n_jobs (Optional[int]): Worker cap

    Returns:
        SampleSet: The generated samples
    """
    cfg = IntegratorConfig(n_steps=n_steps, score_source='network', t_floor=t_floor, seed=rng.seed)
    samples = sample_reverse(f, sched, cfg, n, net=net, rng=rng, n_jobs=n_jobs)
    buffer.push(samples.points)
    return samples
