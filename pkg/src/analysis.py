"""
Analysis Module

Diagnostic experiments around the estimators:

- toy_kl_report: fit a single Gaussian to an equal two-component mixture by
  forward KL (mode covering) and by reverse KL from two starting points
  (mode seeking), and compare with the closed-form forward optimum.
- estimator_scaling_report: empirical bias/std of S_L versus L and bias/MSE
  of the SNIS loss versus S on a standard Gaussian target, where the true
  score and the true loss are known.
"""

import os
import json
import math
import logging
from dataclasses import asdict, dataclass
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from numpy.polynomial.hermite_e import hermegauss
from scipy.integrate import trapezoid
from scipy.special import logsumexp

from energy import GaussEnergy
from errors import ConfigError, DataIOError, NumericError
from estimators import (log_denominator_batch, score_targets_batch, snis_loss, snis_weights)
from numerics import Rng, worker_count
from sde import VeSchedule

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

# Relative change of the quadrature moments accepted as converged.
QUADRATURE_TOL = 1e-9


@dataclass
class ToyKlSpec:
    """
    Two-component toy problem p = ½ N(μ1, σ²) + ½ N(μ2, σ²).

    Attributes:
        mu1 (float): First mode
        mu2 (float): Second mode
        sigma (float): Shared component standard deviation
        n_nodes (int): Initial trapezoid nodes for forward-KL moments
        max_nodes (int): Node cap for the adaptive refinement
        width_std (float): Half-width of the quadrature window in pooled std
        hermite_nodes (int): Gauss–Hermite nodes for reverse-KL expectations
        steps (int): Gradient-descent iterations
        lr (float): Initial step size before backtracking
        tol (float): Gradient-norm stopping tolerance
    """

    mu1: float = -3.0
    mu2: float = 3.0
    sigma: float = 1.0
    n_nodes: int = 400
    max_nodes: int = 6400
    width_std: float = 8.0
    hermite_nodes: int = 80
    steps: int = 5000
    lr: float = 1.0
    tol: float = 1e-10

    def __post_init__(self):
        if self.mu1 == self.mu2:
            raise ConfigError("The two mixture means must differ")
        if self.sigma <= 0:
            raise ConfigError(f"sigma must be positive, got {self.sigma}")
        if self.n_nodes < 3 or self.hermite_nodes < 2 or self.steps < 1:
            raise ConfigError("Quadrature node counts and step count are too small")

    @property
    def closed_form(self) -> Tuple[float, float]:
        """Forward-KL optimum (μ*, σ̂²*) = ((μ1+μ2)/2, σ² + (μ1−μ2)²/4)."""
        return 0.5 * (self.mu1 + self.mu2), self.sigma ** 2 + 0.25 * (self.mu1 - self.mu2) ** 2


def mixture_log_density(x: np.ndarray, spec: ToyKlSpec) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    components = np.stack([
        -0.5 * ((x - mu) / spec.sigma) ** 2 - math.log(spec.sigma * math.sqrt(2.0 * math.pi))
        for mu in (spec.mu1, spec.mu2)
    ])
    return logsumexp(components, axis=0) - math.log(2.0)


def mixture_grad_log_density(x: np.ndarray, spec: ToyKlSpec) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    logits = np.stack([-0.5 * ((x - mu) / spec.sigma) ** 2 for mu in (spec.mu1, spec.mu2)])
    resp = np.exp(logits - logsumexp(logits, axis=0))
    return (resp[0] * (spec.mu1 - x) + resp[1] * (spec.mu2 - x)) / spec.sigma ** 2


def _trapezoid_moments(spec: ToyKlSpec, n_nodes: int) -> np.ndarray:
    """[mass, E[x], E[x²], E[log p]] under p on the quadrature window."""
    _, var = spec.closed_form
    centre = 0.5 * (spec.mu1 + spec.mu2)
    half_width = spec.width_std * math.sqrt(var)
    grid = np.linspace(centre - half_width, centre + half_width, n_nodes)
    log_p = mixture_log_density(grid, spec)
    density = np.exp(log_p)
    return np.array([trapezoid(density * g, grid) for g in (np.ones_like(grid), grid, grid ** 2, log_p)])


def adaptive_moments(spec: ToyKlSpec) -> Tuple[np.ndarray, int]:
    """
    Trapezoid moments of p, doubling the node count until two successive
    refinements agree.

    Returns:
        Tuple[np.ndarray, int]: Moments and the node count used
    """
    nodes = spec.n_nodes
    previous = _trapezoid_moments(spec, nodes)
    while nodes * 2 <= spec.max_nodes:
        nodes *= 2
        current = _trapezoid_moments(spec, nodes)
        if np.all(np.abs(current - previous) <= QUADRATURE_TOL * np.maximum(1.0, np.abs(current))):
            return current, nodes
        previous = current
    raise NumericError(
        f"Quadrature did not converge with {nodes} nodes; raise max_nodes above {spec.max_nodes} "
        f"or widen width_std"
    )


def minimize(objective: Callable[[np.ndarray], Tuple[float, np.ndarray]], start: Sequence[float],
             steps: int, lr: float, tol: float) -> Tuple[np.ndarray, float, int]:
    """
    Gradient descent with Armijo backtracking.

    Args:
        objective: Returns (value, gradient) at a parameter vector
        start (Sequence[float]): Initial parameters
        steps (int): Iteration cap
        lr (float): Initial trial step
        tol (float): Stop once the gradient norm falls below this

    Returns:
        Tuple[np.ndarray, float, int]: Parameters, value, iterations used
    """
    params = np.asarray(start, dtype=np.float64)
    value, grad = objective(params)
    for iteration in range(1, steps + 1):
        if np.linalg.norm(grad) < tol:
            return params, value, iteration - 1
        step = lr
        while True:
            candidate = params - step * grad
            cand_value, cand_grad = objective(candidate)
            if np.isfinite(cand_value) and cand_value <= value - 0.5 * step * float(grad @ grad):
                break
            step *= 0.5
            if step < 1e-16:
                return params, value, iteration
        params, value, grad = candidate, cand_value, cand_grad
    return params, value, steps


def forward_kl_fit(spec: ToyKlSpec) -> Dict[str, Any]:
    """Minimize KL(p‖q) over (μ, log σ̂²) with quadrature moments of p."""
    moments, nodes = adaptive_moments(spec)
    mass, first, second, neg_entropy = moments
    if abs(mass - 1.0) > 1e-6:
        raise NumericError(f"Quadrature window holds mass {mass:.8f}; widen width_std")

    def objective(params: np.ndarray) -> Tuple[float, np.ndarray]:
        mu, log_var = params
        var = math.exp(log_var)
        spread = second - 2.0 * mu * first + mu ** 2
        cross_entropy = 0.5 * (math.log(2.0 * math.pi) + log_var) + spread / (2.0 * var)
        grad = np.array([-(first - mu) / var, 0.5 - spread / (2.0 * var)])
        return neg_entropy + cross_entropy, grad

    params, value, iterations = minimize(objective, [spec.mu1, 2.0 * math.log(spec.sigma)],
                                         spec.steps, spec.lr, spec.tol)
    mu_star, var_star = spec.closed_form
    var = math.exp(params[1])
    return {
        'mu': float(params[0]),
        'var': var,
        'kl': float(value),
        'iterations': iterations,
        'quadrature_nodes': nodes,
        'closed_form': {'mu': mu_star, 'var': var_star},
        'abs_error_mu': abs(params[0] - mu_star),
        'rel_error_var': abs(var - var_star) / var_star,
    }


def reverse_kl_fit(spec: ToyKlSpec, init_mu: float, init_var: float) -> Dict[str, Any]:
    """Minimize KL(q‖p) over (μ, log σ̂) with Gauss–Hermite expectations under q."""
    nodes, weights = hermegauss(spec.hermite_nodes)
    weights = weights / math.sqrt(2.0 * math.pi)

    def objective(params: np.ndarray) -> Tuple[float, np.ndarray]:
        mu, log_s = params
        s = math.exp(log_s)
        x = mu + s * nodes
        neg_entropy = -log_s - 0.5 * math.log(2.0 * math.pi * math.e)
        value = neg_entropy - float(weights @ mixture_log_density(x, spec))
        score = mixture_grad_log_density(x, spec)
        grad = np.array([-float(weights @ score), -1.0 - s * float(weights @ (score * nodes))])
        return value, grad

    params, value, iterations = minimize(objective, [init_mu, 0.5 * math.log(init_var)],
                                         spec.steps, spec.lr, spec.tol)
    mu = float(params[0])
    nearest = spec.mu1 if abs(mu - spec.mu1) <= abs(mu - spec.mu2) else spec.mu2
    return {
        'init_mu': init_mu,
        'init_var': init_var,
        'mu': mu,
        'var': math.exp(2.0 * params[1]),
        'kl': float(value),
        'iterations': iterations,
        'nearest_mode': nearest,
    }


def toy_kl_report(spec: ToyKlSpec, out_path: Optional[str] = None) -> Dict[str, Any]:
    """
    Forward versus reverse KL on the two-mode toy problem.

    Reverse KL starts once inside each mode's basin (an eighth of the gap
    in from μ1 and from μ2); different endpoints show the mode collapse.
    With modes 4σ apart the only optimum is a wide centred Gaussian, so both
    runs end at the midpoint.

    Args:
        spec (ToyKlSpec): Problem and solver settings
        out_path (Optional[str]): JSON destination

    Returns:
        Dict[str, Any]: Forward optimum with closed-form comparison and both reverse runs
    """
    gap = spec.mu2 - spec.mu1
    forward = forward_kl_fit(spec)
    reverse = [
        reverse_kl_fit(spec, spec.mu1 + gap / 8.0, spec.sigma ** 2),
        reverse_kl_fit(spec, spec.mu2 - gap / 8.0, spec.sigma ** 2),
    ]
    report = {
        'spec': asdict(spec),
        'forward': forward,
        'reverse': reverse,
        'distinct_reverse_endpoints': abs(reverse[0]['mu'] - reverse[1]['mu']) > 0.5 * spec.sigma,
    }
    logger.info(f"Forward KL optimum mu={forward['mu']:.6f} var={forward['var']:.6f}; reverse endpoints "
                f"{reverse[0]['mu']:.3f}, {reverse[1]['mu']:.3f}")
    if out_path:
        _write_json(report, out_path)
    return report


@dataclass
class ScalingSetup:
    """
    Fixed quantities of the estimator scaling study.

    Attributes:
        x_t (float): Evaluation point of S_L
        t (float): Diffusion time
        sigma_max (float): Schedule σ_max (σ(1) = sigma_max)
        buffer_mean (float): Mean of the proposal buffer distribution
        buffer_std (float): Std of the proposal buffer distribution
        frozen_slope (float): s_θ(x) = frozen_slope · x
        loss_inner (int): L for the loss targets
        quadrature_nodes (int): Nodes for the ground-truth loss
    """

    x_t: float = 2.0
    t: float = 1.0
    sigma_max: float = 1.0
    buffer_mean: float = 0.5
    buffer_std: float = 1.5
    frozen_slope: float = -0.3
    loss_inner: int = 256
    quadrature_nodes: int = 4001

    @property
    def schedule(self) -> VeSchedule:
        return VeSchedule(sigma_min=1e-5, sigma_max=self.sigma_max)

    @property
    def marginal_var(self) -> float:
        """Variance of p_t for the standard Gaussian target."""
        return 1.0 + self.schedule.sigma(self.t) ** 2

    def true_score(self, x: np.ndarray) -> np.ndarray:
        return -np.asarray(x) / self.marginal_var

    def true_loss(self) -> float:
        """L* = E_{p_t}[(s_θ(x) − ∇log p_t(x))²] by trapezoid quadrature."""
        std = math.sqrt(self.marginal_var)
        grid = np.linspace(-12.0 * std, 12.0 * std, self.quadrature_nodes)
        density = np.exp(-0.5 * grid ** 2 / self.marginal_var) / math.sqrt(2.0 * math.pi * self.marginal_var)
        residual = self.frozen_slope * grid - self.true_score(grid)
        return float(trapezoid(density * residual ** 2, grid))


def _score_replication(setup: ScalingSetup, L_list: Sequence[int], rng: Rng) -> List[float]:
    f = GaussEnergy(1)
    sched = setup.schedule
    x = np.array([[setup.x_t]])
    return [float(score_targets_batch(f, sched, x, setup.t, L, rng.substream('L', L))[0][0, 0]) for L in L_list]


def _loss_replication(setup: ScalingSetup, S_list: Sequence[int], rng: Rng) -> Tuple[List[float], float]:
    f = GaussEnergy(1)
    sched = setup.schedule
    sigma_t = sched.sigma(setup.t)
    losses = []
    for S in S_list:
        stream = rng.substream('S', S)
        x0 = setup.buffer_mean + setup.buffer_std * stream.substream('buffer').normal(size=(S, 1))
        x_t = sched.perturb(x0, setup.t, stream.substream('perturb'))
        targets, log_num, _, _ = score_targets_batch(f, sched, x_t, setup.t, setup.loss_inner,
                                                     stream.substream('score'))
        weights = snis_weights(log_num - log_denominator_batch(sched, x_t, setup.t, x0))
        losses.append(snis_loss(setup.frozen_slope * x_t, targets, weights))

    # Exact weights p_t / q_t and exact targets at the largest S.
    S = max(S_list)
    stream = rng.substream('exact', S)
    proposal_var = setup.buffer_std ** 2 + sigma_t ** 2
    x_t = setup.buffer_mean + math.sqrt(proposal_var) * stream.normal(size=(S, 1))
    log_w = (-0.5 * x_t[:, 0] ** 2 / setup.marginal_var - 0.5 * math.log(setup.marginal_var)
             + 0.5 * (x_t[:, 0] - setup.buffer_mean) ** 2 / proposal_var + 0.5 * math.log(proposal_var))
    exact = snis_loss(setup.frozen_slope * x_t, setup.true_score(x_t), snis_weights(log_w))
    return losses, exact


def estimator_scaling_report(L_list: Sequence[int], S_list: Sequence[int], replications: int,
                             seed: int = 0, setup: Optional[ScalingSetup] = None,
                             n_jobs: Optional[int] = None, out_dir: Optional[str] = None) -> Dict[str, Any]:
    """
    Empirical scaling of the score estimator in L and of the SNIS loss in S.

    Args:
        L_list (Sequence[int]): Inner sample counts for S_L
        S_list (Sequence[int]): SNIS sample counts for the loss
        replications (int): Independent repetitions per setting
        seed (int): Root seed; replication r uses its own substream
        setup (Optional[ScalingSetup]): Fixed study quantities
        n_jobs (Optional[int]): Worker cap
        out_dir (Optional[str]): Directory for score_scaling.csv, loss_scaling.csv and diag.json

    Returns:
        Dict[str, Any]: Score table, loss table, fitted slope and the exact-weights check
    """
    if replications < 2 or not L_list or not S_list:
        raise ConfigError("Scaling report needs at least two replications and nonempty L and S lists")
    setup = setup or ScalingSetup()
    root = Rng(seed)
    parallel = Parallel(n_jobs=worker_count(n_jobs), prefer='threads')

    score_runs = np.array(parallel(
        delayed(_score_replication)(setup, L_list, root.substream('score_scaling', r)) for r in range(replications)
    ))
    true_score = float(setup.true_score(setup.x_t))
    score_table = pd.DataFrame({
        'L': list(L_list),
        'mean': score_runs.mean(axis=0),
        'bias': score_runs.mean(axis=0) - true_score,
        'std': score_runs.std(axis=0, ddof=1),
        'bias_stderr': score_runs.std(axis=0, ddof=1) / math.sqrt(replications),
    })
    slope = float(np.polyfit(np.log(score_table['L']), np.log(score_table['std']), 1)[0]) \
        if len(L_list) > 1 else float('nan')

    loss_runs = parallel(
        delayed(_loss_replication)(setup, S_list, root.substream('loss_scaling', r)) for r in range(replications)
    )
    losses = np.array([run[0] for run in loss_runs])
    exact = np.array([run[1] for run in loss_runs])
    l_star = setup.true_loss()
    loss_table = pd.DataFrame({
        'S': list(S_list),
        'mean_loss': losses.mean(axis=0),
        'bias': losses.mean(axis=0) - l_star,
        'mse': ((losses - l_star) ** 2).mean(axis=0),
        'l_star': l_star,
    })

    report = {
        'setup': asdict(setup),
        'seed': seed,
        'replications': replications,
        'true_score': true_score,
        'score_std_slope': slope,
        'score_table': score_table.to_dict(orient='records'),
        'loss_table': loss_table.to_dict(orient='records'),
        'exact_weights': {
            'S': max(S_list),
            'mean_loss': float(exact.mean()),
            'stderr': float(exact.std(ddof=1) / math.sqrt(replications)),
            'l_star': l_star,
        },
    }
    logger.info(f"Scaling report: std slope {slope:.3f}, L* {l_star:.5f}, "
                f"exact-weight loss {report['exact_weights']['mean_loss']:.5f}")

    if out_dir:
        try:
            os.makedirs(out_dir, exist_ok=True)
            score_table.to_csv(os.path.join(out_dir, 'score_scaling.csv'), index=False)
            loss_table.to_csv(os.path.join(out_dir, 'loss_scaling.csv'), index=False)
        except OSError as e:
            raise DataIOError(f"Cannot write scaling tables to {out_dir}: {e}") from e
        _write_json(report, os.path.join(out_dir, 'diag.json'))
    return report


def _write_json(payload: Dict[str, Any], path: str) -> None:
    try:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(payload, f, indent=2, default=float)
    except OSError as e:
        logger.error(f"Error writing report: {e}")
        raise DataIOError(f"Cannot write report {path}: {e}") from e
    logger.info(f"Report written to {path}")
