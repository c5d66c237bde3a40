"""
Sample Set Module

Holds sample matrices with their provenance and moves them in and out of CSV
files. The CSV carries one row per sample with columns dim_0..dim_{d-1}; a
sidecar JSON file next to it keeps the seed, source and run metadata.
"""

import os
import json
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Optional

import numpy as np
import pandas as pd

from errors import ConfigError, DataIOError

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)


@dataclass
class SampleSet:
    """
    N×d matrix of samples plus provenance.

    Attributes:
        points (np.ndarray): Samples in physical coordinates, shape (n, d)
        seed (Optional[int]): Seed that produced the samples
        source (str): Producer ('reference', 'network', 'dwes', 'file', ...)
        benchmark (str): Benchmark id the samples target
        metadata (Dict[str, Any]): Free-form run information for the sidecar
    """

    points: np.ndarray
    seed: Optional[int] = None
    source: str = 'unknown'
    benchmark: str = ''
    metadata: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        points = np.asarray(self.points, dtype=np.float64)
        if points.ndim == 1:
            points = points.reshape(-1, 1)
        if points.ndim != 2:
            raise ConfigError(f"SampleSet points must be a 2D matrix, got shape {points.shape}")
        self.points = points

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def sidecar(self) -> Dict[str, Any]:
        return {
            'seed': self.seed,
            'source': self.source,
            'benchmark': self.benchmark,
            'n': self.n,
            'dim': self.dim,
            **self.metadata,
        }

    def to_csv(self, path: str, write_sidecar: bool = True) -> None:
        """
        Write samples as CSV with a dim_i header, plus the sidecar JSON.

        Args:
            path (str): Output CSV path
            write_sidecar (bool): Whether to write <stem>.meta.json
        """
        columns = [f'dim_{i}' for i in range(self.dim)]
        try:
            directory = os.path.dirname(os.path.abspath(path))
            os.makedirs(directory, exist_ok=True)
            pd.DataFrame(self.points, columns=columns).to_csv(path, index=False, float_format='%.17g')
            if write_sidecar:
                with open(sidecar_path(path), 'w') as f:
                    json.dump(self.sidecar(), f, indent=2, sort_keys=True)
        except OSError as e:
            logger.error(f"Error writing samples to {path}: {e}")
            raise DataIOError(f"Cannot write samples to {path}: {e}") from e
        logger.info(f"Wrote {self.n} samples ({self.dim}-d) to {path}")

    @classmethod
    def from_csv(cls, path: str, benchmark: str = '') -> 'SampleSet':
        """
        Load samples from CSV; the sidecar is read when present.

        Args:
            path (str): CSV path
            benchmark (str): Benchmark id used when no sidecar names one

        Returns:
            SampleSet: Loaded samples
        """
        points = _read_matrix(path)
        meta: Dict[str, Any] = {}
        meta_path = sidecar_path(path)
        if os.path.exists(meta_path):
            try:
                with open(meta_path, 'r') as f:
                    meta = json.load(f)
            except (OSError, json.JSONDecodeError) as e:
                logger.warning(f"Ignoring unreadable sidecar {meta_path}: {e}")
                meta = {}
        extra = {k: v for k, v in meta.items() if k not in ('seed', 'source', 'benchmark', 'n', 'dim')}
        return cls(
            points=points,
            seed=meta.get('seed'),
            source=meta.get('source', 'file'),
            benchmark=meta.get('benchmark') or benchmark,
            metadata=extra,
        )


def sidecar_path(csv_path: str) -> str:
    stem, _ = os.path.splitext(csv_path)
    return f'{stem}.meta.json'


def _read_matrix(path: str) -> np.ndarray:
    try:
        df = pd.read_csv(path, float_precision='round_trip')
    except FileNotFoundError as e:
        logger.error(f"Sample file not found: {path}")
        raise DataIOError(f"Sample file not found: {path}") from e
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        logger.error(f"Error loading samples from {path}: {e}")
        raise DataIOError(f"Cannot parse sample file {path}: {e}") from e

    try:
        points = df.to_numpy(dtype=np.float64)
    except ValueError as e:
        raise DataIOError(f"Sample file {path} contains non-numeric entries") from e
    if points.size == 0:
        raise DataIOError(f"Sample file {path} holds no samples")
    logger.info(f"Loaded {points.shape[0]} samples with {points.shape[1]} dims from {path}")
    return points


def load_reference_csv(path: str, benchmark: str, expected_dim: Optional[int] = None) -> SampleSet:
    """
    Ingest an externally generated reference set (row = flattened configuration).

    Args:
        path (str): CSV path
        benchmark (str): Benchmark id
        expected_dim (Optional[int]): Required row length

    Returns:
        SampleSet: Reference samples
    """
    samples = SampleSet.from_csv(path, benchmark=benchmark)
    if expected_dim is not None and samples.dim != expected_dim:
        raise ConfigError(
            f"Reference set {path} has {samples.dim} columns, benchmark {benchmark} needs {expected_dim}"
        )
    samples.source = 'reference'
    return samples
