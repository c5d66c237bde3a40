"""
Run Configuration Module

Typed run configuration with per-benchmark defaults, loaded from and written
to JSON. Unknown keys anywhere in the document are rejected.
"""

import os
import re
import json
import copy
import logging
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, Optional

from energy import EnergyFn, build_energy
from errors import ConfigError, DataIOError
from sampler import IntegratorConfig
from scorenet import NetSpec
from sde import VeSchedule
from trainer import TrainConfig

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)

# Benchmark defaults; keys mirror the sections of a RunConfig document.
BENCHMARK_PRESETS: Dict[str, Dict[str, Dict[str, Any]]] = {
    'gmm40': {
        'schedule': {'sigma_min': 1e-5, 'sigma_max': 1.0},
        'train': {'lr': 5e-4, 'n_inner': 500, 'target_clip': 70.0, 'snis_samples': 5, 'buffer_capacity': 10000},
    },
    'gmm80': {
        'schedule': {'sigma_min': 1e-5, 'sigma_max': 1.0},
        'train': {'lr': 5e-4, 'n_inner': 500, 'target_clip': 70.0, 'snis_samples': 5, 'buffer_capacity': 20000},
    },
    'gmm120': {
        'schedule': {'sigma_min': 1e-5, 'sigma_max': 1.0},
        'train': {'lr': 5e-4, 'n_inner': 500, 'target_clip': 70.0, 'snis_samples': 5, 'buffer_capacity': 10000},
    },
    'dw4': {
        'schedule': {'sigma_min': 1e-5, 'sigma_max': 3.0},
        'train': {'lr': 1e-3, 'n_inner': 1000, 'target_clip': 20.0, 'snis_samples': 2, 'buffer_capacity': 10000},
    },
    'lj13': {
        'schedule': {'sigma_min': 0.01, 'sigma_max': 2.0},
        'train': {'lr': 1e-3, 'n_inner': 1000, 'target_clip': 20.0, 'snis_samples': 5, 'buffer_capacity': 10000},
    },
    'lj55': {
        'schedule': {'sigma_min': 0.5, 'sigma_max': 4.0},
        'train': {'lr': 1e-3, 'n_inner': 100, 'target_clip': 20.0, 'snis_samples': 5, 'buffer_capacity': 10000},
    },
    'gauss': {
        'schedule': {'sigma_min': 1e-5, 'sigma_max': 10.0},
        'train': {'lr': 1e-3, 'n_inner': 500, 'target_clip': None, 'snis_samples': 5, 'buffer_capacity': 10000},
    },
    'bimodal1d': {
        'schedule': {'sigma_min': 1e-5, 'sigma_max': 10.0},
        'train': {'lr': 1e-3, 'n_inner': 500, 'target_clip': None, 'snis_samples': 5, 'buffer_capacity': 10000},
    },
}


def preset_for(benchmark_id: str) -> Dict[str, Dict[str, Any]]:
    """
    Defaults for a benchmark id; gauss<d> and other gmm<m> fall back to their family.

    Args:
        benchmark_id (str): Benchmark id

    Returns:
        Dict[str, Dict[str, Any]]: Section overrides
    """
    key = benchmark_id.lower().strip()
    if key in BENCHMARK_PRESETS:
        return copy.deepcopy(BENCHMARK_PRESETS[key])
    family = re.match(r'^[a-z]+', key)
    if family and family.group(0) == 'gauss':
        return copy.deepcopy(BENCHMARK_PRESETS['gauss'])
    if family and family.group(0) == 'gmm':
        return copy.deepcopy(BENCHMARK_PRESETS['gmm40'])
    raise ConfigError(f"No defaults for benchmark {benchmark_id}")


@dataclass
class ScheduleConfig:
    sigma_min: float = 1e-5
    sigma_max: float = 1.0

    def build(self) -> VeSchedule:
        return VeSchedule(self.sigma_min, self.sigma_max)


@dataclass
class BenchmarkConfig:
    """
    Target selection.

    Attributes:
        id (str): Benchmark id
        seed (int): Seed fixing random benchmark parameters (GMM means), independent of the run seed
        params (Dict[str, Any]): Energy parameter overrides
    """

    id: str = 'gmm40'
    seed: int = 0
    params: Dict[str, Any] = field(default_factory=dict)

    def build(self) -> EnergyFn:
        return build_energy(self.id, seed=self.seed, **self.params)


def _section(cls, data: Optional[Dict[str, Any]], defaults: Optional[Dict[str, Any]] = None):
    """Instantiate a config dataclass from defaults overlaid with data, rejecting unknown keys."""
    data = data or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{cls.__name__} section must be a JSON object")
    allowed = {f.name for f in fields(cls)}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"Unknown keys in {cls.__name__}: {sorted(unknown)}")
    try:
        return cls(**{**(defaults or {}), **data})
    except TypeError as e:
        raise ConfigError(f"Invalid {cls.__name__}: {e}") from e


@dataclass
class RunConfig:
    """
    Complete description of a run; the run seed is copied into the training
    and integration sections.
    """

    benchmark: BenchmarkConfig
    schedule: ScheduleConfig
    net: NetSpec
    train: TrainConfig
    integrator: IntegratorConfig
    seed: int = 0
    out_dir: str = 'runs'

    def __post_init__(self):
        if self.seed < 0:
            raise ConfigError(f"Seed must be non-negative, got {self.seed}")
        self.train.seed = self.seed
        self.integrator.seed = self.seed

    def build_energy(self) -> EnergyFn:
        return self.benchmark.build()

    def build_schedule(self) -> VeSchedule:
        return self.schedule.build()

    def to_dict(self) -> Dict[str, Any]:
        return {
            'benchmark': asdict(self.benchmark),
            'schedule': asdict(self.schedule),
            'net': self.net.to_dict(),
            'train': self.train.to_dict(),
            'integrator': self.integrator.to_dict(),
            'seed': self.seed,
            'out_dir': self.out_dir,
        }

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> 'RunConfig':
        """
        Build a configuration from a (possibly partial) JSON document.

        Missing values come from the benchmark preset, then from the dataclass defaults.

        Args:
            payload (Dict[str, Any]): Parsed JSON document

        Returns:
            RunConfig: Validated configuration
        """
        if not isinstance(payload, dict):
            raise ConfigError("Run configuration must be a JSON object")
        allowed = {'benchmark', 'schedule', 'net', 'train', 'integrator', 'seed', 'out_dir'}
        unknown = set(payload) - allowed
        if unknown:
            raise ConfigError(f"Unknown keys in run configuration: {sorted(unknown)}")

        benchmark = _section(BenchmarkConfig, payload.get('benchmark'))
        preset = preset_for(benchmark.id)
        dim = benchmark.build().dim
        seed = int(payload.get('seed', 0))
        return cls(
            benchmark=benchmark,
            schedule=_section(ScheduleConfig, payload.get('schedule'), preset.get('schedule')),
            net=_section(NetSpec, payload.get('net'), {'input_dim': dim}),
            train=_section(TrainConfig, payload.get('train'), preset.get('train')),
            integrator=_section(IntegratorConfig, payload.get('integrator')),
            seed=seed,
            out_dir=payload.get('out_dir', os.path.join('runs', benchmark.id)),
        )


def default_run_config(benchmark_id: str, seed: int = 0, out_dir: Optional[str] = None) -> RunConfig:
    payload: Dict[str, Any] = {'benchmark': {'id': benchmark_id}, 'seed': seed}
    if out_dir:
        payload['out_dir'] = out_dir
    return RunConfig.from_dict(payload)


def load_run_config(path: str) -> RunConfig:
    """
    Read a RunConfig JSON document.

    Args:
        path (str): JSON path

    Returns:
        RunConfig: Validated configuration
    """
    try:
        with open(path, 'r', encoding='utf-8') as f:
            payload = json.load(f)
    except FileNotFoundError as e:
        raise DataIOError(f"Config file not found: {path}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"Config file {path} is not valid JSON: {e}") from e
    except OSError as e:
        logger.error(f"Error loading config {path}: {e}")
        raise DataIOError(f"Cannot read config {path}: {e}") from e
    return RunConfig.from_dict(payload)


def save_run_config(cfg: RunConfig, path: str) -> None:
    try:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(cfg.to_dict(), f, indent=2, sort_keys=True)
    except OSError as e:
        logger.error(f"Error writing config {path}: {e}")
        raise DataIOError(f"Cannot write config {path}: {e}") from e
    logger.info(f"Resolved configuration written to {path}")
