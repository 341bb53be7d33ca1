# -*- coding: utf-8 -*-
"""Exception hierarchy for the nodule pipeline."""

from typing import Optional


class LungDpnError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(LungDpnError, ValueError):
    """Tensor or feature extents do not line up."""


class SpecError(LungDpnError, ValueError):
    """A network or block specification is internally inconsistent."""


class DomainError(LungDpnError, ValueError):
    """An argument lies outside the domain of the operation."""


class ScheduleError(LungDpnError, ValueError):
    """A training schedule was queried outside its range."""


class UsageError(LungDpnError, RuntimeError):
    """An API was called in a way it does not support."""


class ConfigError(LungDpnError, ValueError):
    """A configuration file contains unknown keys or invalid values."""


class DataError(LungDpnError, ValueError):
    """Input data cannot support the requested computation."""


class CheckpointError(LungDpnError, ValueError):
    """A checkpoint or model file is malformed."""


class SynthesisError(LungDpnError, RuntimeError):
    """The synthetic generator could not place its nodules."""


class NumericError(LungDpnError, ArithmeticError):
    """Training diverged or produced non-finite values."""


class MhdParseError(LungDpnError, ValueError):
    """A MetaImage header or its raw payload is invalid."""

    def __init__(self, message: str, key: Optional[str] = None):
        """Initialize parse error.

        Args:
            message: Human readable description
            key: Header key responsible for the failure, if any
        """
        super().__init__(message)
        self.key = key
