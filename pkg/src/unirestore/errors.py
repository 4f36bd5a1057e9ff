"""Exception hierarchy mapped to CLI exit codes.

Exit codes: 0 success, 2 usage (argparse), 3 config/parameter, 4 data,
5 shape, 6 numeric failure.
"""

from __future__ import annotations


class UnirestoreError(Exception):
    """Base class for package errors; carries the CLI exit code."""

    exit_code = 1


class ConfigError(UnirestoreError, ValueError):
    """Invalid configuration value or degradation parameter."""

    exit_code = 3


class DataError(UnirestoreError):
    """Missing, unreadable, or inconsistent data artifacts."""

    exit_code = 4


class ShapeError(UnirestoreError, ValueError):
    """Tensor shape violates an interface contract."""

    exit_code = 5


class NumericError(UnirestoreError, ArithmeticError):
    """Non-finite values where finite ones are required."""

    exit_code = 6
