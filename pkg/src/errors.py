"""
Error Types for the Importance Weighted Score Matching Toolkit

Every failure the library raises on purpose derives from IwsmError and carries
the process exit code the command line reports for it.
"""

import logging

logging.basicConfig(level=logging.INFO)
logger = logging.getLogger(__name__)


class IwsmError(Exception):
    """Base class for all library errors."""

    exit_code = 1


class ConfigError(IwsmError, ValueError):
    """Invalid configuration, flag or precondition."""

    exit_code = 2


class NumericError(IwsmError, ArithmeticError):
    """A computation produced or received values it cannot work with."""

    exit_code = 3


class SingularConfigurationError(NumericError):
    """Energy evaluated at a singular configuration (coincident particles)."""


class NonFiniteError(NumericError):
    """NaN or infinite values where finite ones are required."""


class StaleCacheError(IwsmError, RuntimeError):
    """Backward pass requested for a batch other than the cached forward pass."""

    exit_code = 3


class DataIOError(IwsmError, OSError):
    """Reading or writing a file failed, or the file content is unusable."""

    exit_code = 4


class CheckpointError(DataIOError):
    """Checkpoint file is corrupt, truncated, or incompatible."""


def error_payload(error: BaseException) -> dict:
    """
    Build the structured record the CLI prints to stderr.

    Args:
        error (BaseException): Raised exception

    Returns:
        dict: Error class name, message and exit code
    """
    exit_code = getattr(error, 'exit_code', 1)
    return {
        'error': type(error).__name__,
        'message': str(error),
        'exit_code': exit_code,
    }
