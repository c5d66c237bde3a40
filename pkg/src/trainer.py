"""
Trainer Module

Importance weighted score matching end to end: a replay buffer of the
sampler's own outputs acts as the proposal, each outer loop refills it by
reverse integration with the current network, and each inner step fits
s_θ to S_L targets at forward-perturbed buffer points, weighted by
self-normalized importance weights w̃ = N_K / D_M within each x₀ group.
"""

import os
import copy
import time
import logging
from dataclasses import asdict, dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from energy import EnergyFn
from errors import ConfigError, DataIOError, NonFiniteError, NumericError
from estimators import (draw_inner_samples, log_denominator_batch, log_numerator_from_inner,
                        score_targets_batch, snis_weights_grouped)
from metrics import wasserstein
from numerics import Rng
from sampler import IntegratorConfig, fill_buffer, sample_reverse
from samples import SampleSet
from scorenet import AdamState, Checkpoint, NetSpec, ScoreNet, adam_step, save_checkpoint
from sde import VeSchedule

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

LOG_COLUMNS = ['step', 'loss', 'wall_ms', 'buffer_fill']


class ReplayBuffer:
    """
    Fixed-capacity FIFO ring of samples in physical coordinates.
    """

    def __init__(self, capacity: int, dim: int):
        if capacity < 1 or dim < 1:
            raise ConfigError(f"Buffer needs capacity >= 1 and dim >= 1, got ({capacity}, {dim})")
        self.capacity = capacity
        self.dim = dim
        self._storage = np.zeros((capacity, dim), dtype=np.float64)
        self._next = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def push(self, points: np.ndarray) -> None:
        """
        Append points, evicting the oldest entries once full.

        Args:
            points (np.ndarray): Samples, shape (n, dim)
        """
        points = np.asarray(points, dtype=np.float64).reshape(-1, self.dim)
        if points.shape[0] > self.capacity:
            points = points[-self.capacity:]
        count = points.shape[0]
        slots = (self._next + np.arange(count)) % self.capacity
        self._storage[slots] = points
        self._next = int((self._next + count) % self.capacity)
        self.size = min(self.capacity, self.size + count)

    def sample(self, batch_size: int, rng: Rng) -> np.ndarray:
        """Uniform draws with replacement over the current contents."""
        if self.size == 0:
            raise ConfigError("Cannot sample from an empty replay buffer")
        return self._storage[rng.integers(0, self.size, batch_size)].copy()

    def contents(self) -> np.ndarray:
        """Current contents, oldest first."""
        if self.size < self.capacity:
            return self._storage[:self.size].copy()
        return np.roll(self._storage, -self._next, axis=0)

    @property
    def fill(self) -> float:
        return self.size / self.capacity


@dataclass
class TrainConfig:
    """
    Training hyperparameters.

    Attributes:
        batch_size (int): B, buffer points per inner step (also M of the denominator)
        snis_samples (int): S, perturbed points per buffer point
        n_inner (int): L inner samples for S_L, reused as K for N_K
        n_numerator (Optional[int]): Separate K for N_K with its own draws; None reuses L
        n_inner_steps (int): N_inner optimizer steps per outer loop
        n_outer (int): N_outer generation rounds
        gen_per_outer (int): Samples generated into the buffer per outer loop
        gen_steps (int): Reverse-integration steps used for generation
        buffer_capacity (int): Replay buffer size
        lr (float): Adam learning rate
        target_clip (Optional[float]): Norm cap on S_L targets
        grad_clip (Optional[float]): Global norm cap on the parameter gradient
        t_floor (float): Final time of generation runs
        checkpoint_every (int): Outer loops between periodic checkpoints, 0 disables
        seed (int): Run seed
    """

    batch_size: int = 64
    snis_samples: int = 5
    n_inner: int = 500
    n_numerator: Optional[int] = None
    n_inner_steps: int = 100
    n_outer: int = 50
    gen_per_outer: int = 1000
    gen_steps: int = 1000
    buffer_capacity: int = 10000
    lr: float = 5e-4
    target_clip: Optional[float] = 70.0
    grad_clip: Optional[float] = None
    t_floor: float = 1e-3
    checkpoint_every: int = 10
    seed: int = 0

    def __post_init__(self):
        for name in ('batch_size', 'snis_samples', 'n_inner', 'n_inner_steps', 'gen_per_outer',
                     'gen_steps', 'buffer_capacity'):
            if getattr(self, name) < 1:
                raise ConfigError(f"TrainConfig.{name} must be >= 1, got {getattr(self, name)}")
        if self.n_outer < 0 or self.checkpoint_every < 0:
            raise ConfigError("n_outer and checkpoint_every must be >= 0")
        if self.n_numerator is not None and self.n_numerator < 1:
            raise ConfigError(f"n_numerator must be >= 1, got {self.n_numerator}")
        if self.lr <= 0:
            raise ConfigError(f"Learning rate must be positive, got {self.lr}")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class TrainResult:
    """Outcome of a training run."""

    checkpoint: Checkpoint
    log: pd.DataFrame
    out_dir: str
    wall_seconds: float


@dataclass
class BatchLoss:
    """Loss, parameter gradient and the diagnostics of one inner step."""

    loss: float
    grad: np.ndarray
    weights: np.ndarray
    clipped_fraction: float


def batch_loss_and_grad(net: ScoreNet, f_norm: EnergyFn, sched: VeSchedule, x0: np.ndarray,
                        cfg: TrainConfig, rng: Rng, uniform_weights: bool = False) -> BatchLoss:
    """
    L_batch = (1/B) Σ_b Σ_s w̃_SNIS(b, s) ‖s_θ(x_t⁽ᵇˢ⁾, t_b) − S_L(x_t⁽ᵇˢ⁾)‖² and its gradient.

    All weight quantities are computed even for uniform weighting, so both
    variants consume the same random draws.

    Args:
        net (ScoreNet): Network being trained
        f_norm (EnergyFn): Energy in normalized coordinates
        sched (VeSchedule): Noise schedule
        x0 (np.ndarray): Buffer points in normalized coordinates, shape (B, d)
        cfg (TrainConfig): Hyperparameters
        rng (Rng): Stream for this step
        uniform_weights (bool): Replace SNIS weights with 1/S

    Returns:
        BatchLoss: Loss, gradient and weights (B, S)
    """
    B, S = x0.shape[0], cfg.snis_samples
    times = rng.substream('times').uniform(0.0, 1.0, B)
    t_rep = np.repeat(times, S)
    x_t = sched.perturb(np.repeat(x0, S, axis=0), t_rep, rng.substream('perturb'))

    targets, log_num, clipped, _ = score_targets_batch(
        f_norm, sched, x_t, t_rep, cfg.n_inner, rng.substream('score'), cfg.target_clip
    )
    if cfg.n_numerator is not None:
        numerator_inner = draw_inner_samples(f_norm, sched, x_t, t_rep, cfg.n_numerator,
                                             rng.substream('numerator'))
        log_num = log_numerator_from_inner(numerator_inner)
    log_den = log_denominator_batch(sched, x_t, t_rep, x0)

    weights = snis_weights_grouped((log_num - log_den).reshape(B, S))
    if uniform_weights:
        weights = np.full((B, S), 1.0 / S)
    flat_weights = weights.reshape(-1)

    outputs = net.forward(x_t, t_rep)
    residual = outputs - targets
    loss = float(flat_weights @ (residual ** 2).sum(axis=1)) / B
    upstream = (2.0 / B) * flat_weights[:, None] * residual
    grad = net.backward(x_t, t_rep, upstream)
    return BatchLoss(loss=loss, grad=grad, weights=weights, clipped_fraction=float(clipped.mean()))


def _checkpoint(net: ScoreNet, adam: AdamState, sched: VeSchedule, f: EnergyFn, cfg: TrainConfig,
                step: int, uniform_weights: bool) -> Checkpoint:
    return Checkpoint(
        net_spec=net.spec,
        schedule=sched.to_dict(),
        benchmark=f.describe(),
        seed=cfg.seed,
        step=step,
        theta=net.theta.copy(),
        adam=copy.deepcopy(adam),
        extra={'weighting': 'uniform' if uniform_weights else 'snis', 'snis_samples': cfg.snis_samples},
    )


def _write_log(rows: List[Dict[str, Any]], out_dir: str) -> pd.DataFrame:
    log = pd.DataFrame(rows, columns=LOG_COLUMNS)
    path = os.path.join(out_dir, 'training_log.csv')
    try:
        log.to_csv(path, index=False)
    except OSError as e:
        logger.error(f"Error writing training log: {e}")
        raise DataIOError(f"Cannot write training log {path}: {e}") from e
    return log


def train(f: EnergyFn, sched: VeSchedule, netspec: NetSpec, cfg: TrainConfig, out_dir: str,
          n_jobs: Optional[int] = None, uniform_weights: bool = False) -> TrainResult:
    """
    Run importance weighted score matching.

    Args:
        f (EnergyFn): Target energy in physical coordinates
        sched (VeSchedule): Noise schedule
        netspec (NetSpec): Network architecture
        cfg (TrainConfig): Hyperparameters
        out_dir (str): Directory for checkpoints and the training log
        n_jobs (Optional[int]): Worker cap for generation
        uniform_weights (bool): Train the unweighted ablation

    Returns:
        TrainResult: Final checkpoint and loss log
    """
    if netspec.input_dim != f.dim:
        raise ConfigError(f"NetSpec input_dim {netspec.input_dim} does not match {f.benchmark_id} ({f.dim}-d)")
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as e:
        raise DataIOError(f"Cannot create output directory {out_dir}: {e}") from e

    variant = 'unweighted ablation' if uniform_weights else f'SNIS (S={cfg.snis_samples})'
    logger.info(f"Training {variant} on {f.benchmark_id}: {cfg.n_outer} outer x {cfg.n_inner_steps} inner steps")

    root = Rng(cfg.seed)
    f_norm = f.normalized()
    net = ScoreNet(netspec, rng=root.substream('init'))
    adam = AdamState.create(netspec.param_count, cfg.lr)
    buffer = ReplayBuffer(cfg.buffer_capacity, f.dim)
    bootstrap = min(cfg.buffer_capacity, cfg.gen_per_outer)
    buffer.push(sched.prior_sample(bootstrap, f.dim, root.substream('buffer_bootstrap')) * f.scale)

    rows: List[Dict[str, Any]] = []
    step = 0
    last_good = _checkpoint(net, adam, sched, f, cfg, step, uniform_weights)
    started = time.perf_counter()

    for outer in range(cfg.n_outer):
        fill_buffer(buffer, f, sched, net, cfg.gen_per_outer, cfg.gen_steps,
                    root.substream('generate', outer), t_floor=cfg.t_floor, n_jobs=n_jobs)
        for _ in range(cfg.n_inner_steps):
            step += 1
            step_started = time.perf_counter()
            step_rng = root.substream('inner', step)
            try:
                x0 = buffer.sample(cfg.batch_size, step_rng.substream('batch')) / f.scale
                result = batch_loss_and_grad(net, f_norm, sched, x0, cfg, step_rng, uniform_weights)
                if not np.isfinite(result.loss):
                    raise NonFiniteError(f"Non-finite loss {result.loss} at step {step}")
                theta, adam = adam_step(adam, net.theta, result.grad, cfg.grad_clip)
            except NumericError as e:
                logger.error(f"Training aborted at step {step}: {e}")
                save_checkpoint(last_good, os.path.join(out_dir, 'ckpt_last_good.json'))
                _write_log(rows, out_dir)
                raise
            net.set_parameters(theta)
            rows.append({
                'step': step,
                'loss': result.loss,
                'wall_ms': (time.perf_counter() - step_started) * 1000.0,
                'buffer_fill': len(buffer),
            })
            last_good = _checkpoint(net, adam, sched, f, cfg, step, uniform_weights)

        logger.info(f"Outer loop {outer + 1}/{cfg.n_outer}: step {step}, loss {rows[-1]['loss']:.4f}, "
                    f"buffer {len(buffer)}/{buffer.capacity}")
        if cfg.checkpoint_every and (outer + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(last_good, os.path.join(out_dir, f'ckpt_{step}.json'))
            _write_log(rows, out_dir)

    save_checkpoint(last_good, os.path.join(out_dir, 'ckpt_final.json'))
    log = _write_log(rows, out_dir)
    wall_seconds = time.perf_counter() - started
    logger.info(f"Training finished after {step} steps in {wall_seconds:.1f}s")
    return TrainResult(checkpoint=last_good, log=log, out_dir=out_dir, wall_seconds=wall_seconds)


def train_unweighted_ablation(f: EnergyFn, sched: VeSchedule, netspec: NetSpec, cfg: TrainConfig,
                              out_dir: str, n_jobs: Optional[int] = None) -> TrainResult:
    """Same pipeline and draws as train(), with every SNIS weight forced to 1/S."""
    return train(f, sched, netspec, cfg, out_dir, n_jobs=n_jobs, uniform_weights=True)


def tail_loss(log: pd.DataFrame, fraction: float = 0.1) -> float:
    """Mean loss over the last `fraction` of logged steps."""
    if log.empty:
        raise ConfigError("Training log is empty")
    count = max(1, int(np.ceil(len(log) * fraction)))
    return float(log['loss'].iloc[-count:].mean())


def snis_sweep(f: EnergyFn, sched: VeSchedule, netspec: NetSpec, cfg: TrainConfig, out_dir: str,
               s_values: Sequence[int] = (2, 5, 10), reference: Optional[SampleSet] = None,
               n_eval: int = 1000, eval_steps: int = 1000, n_jobs: Optional[int] = None) -> pd.DataFrame:
    """
    Compare SNIS quantities against the unweighted ablation under matched seeds.

    Every variant is trained into its own subdirectory, sampled with the same
    seed and scored against one reference set.

    Args:
        f (EnergyFn): Target energy
        sched (VeSchedule): Noise schedule
        netspec (NetSpec): Network architecture
        cfg (TrainConfig): Base hyperparameters; snis_samples is overridden per variant
        out_dir (str): Output directory
        s_values (Sequence[int]): SNIS quantities to train
        reference (Optional[SampleSet]): Reference samples; drawn exactly when omitted
        n_eval (int): Samples drawn per trained variant
        eval_steps (int): Integration steps for evaluation sampling
        n_jobs (Optional[int]): Worker cap

    Returns:
        pd.DataFrame: One row per variant with tail loss, W1, W2 and wall time
    """
    if reference is None:
        reference = f.reference_sample(n_eval, Rng(cfg.seed).substream('sweep_reference'))
    variants: List[Tuple[str, int, bool]] = [(f'snis_{s}', s, False) for s in s_values]
    variants.append(('unweighted', cfg.snis_samples, True))

    records = []
    for name, s, uniform in variants:
        variant_cfg = TrainConfig(**{**cfg.to_dict(), 'snis_samples': s})
        result = train(f, sched, netspec, variant_cfg, os.path.join(out_dir, name), n_jobs=n_jobs,
                       uniform_weights=uniform)
        samples = sample_reverse(
            f, sched, IntegratorConfig(n_steps=eval_steps, score_source='network', t_floor=cfg.t_floor,
                                       seed=cfg.seed),
            n_eval, net=result.checkpoint.build_net(), n_jobs=n_jobs,
        )
        records.append({
            'variant': name,
            'snis_samples': s,
            'weighting': 'uniform' if uniform else 'snis',
            'tail_loss': tail_loss(result.log),
            'w1': wasserstein(samples, reference, 1, seed=cfg.seed),
            'w2': wasserstein(samples, reference, 2, seed=cfg.seed),
            'wall_seconds': result.wall_seconds,
        })
        logger.info(f"Sweep variant {name}: tail loss {records[-1]['tail_loss']:.4f}, W2 {records[-1]['w2']:.3f}")

    table = pd.DataFrame(records)
    path = os.path.join(out_dir, 'sweep.csv')
    try:
        table.to_csv(path, index=False)
    except OSError as e:
        raise DataIOError(f"Cannot write sweep table {path}: {e}") from e
    return table
