"""Exception hierarchy.

Every error maps onto one of the CLI exit codes: configuration problems (2),
parameter-regime problems (3) and numerical failures (4).
"""

from __future__ import annotations


class VortexTopoError(Exception):
    """Base class for all package errors."""

    exit_code = 4


class ConfigError(VortexTopoError, ValueError):
    exit_code = 2


class RegimeOutOfRange(VortexTopoError, ValueError):
    """Perturbation amplitude at or above the critical value."""

    exit_code = 3


class OnAxis(VortexTopoError, ValueError):
    """Point lies on the shifted axis line where the shifted azimuth is undefined."""

    exit_code = 3


class NotCritical(VortexTopoError, ValueError):
    exit_code = 3


class NumericalFailure(VortexTopoError, RuntimeError):
    exit_code = 4


class InternalConsistencyError(NumericalFailure):
    """Two independent routes to the same quantity disagree."""


# tracer
class SeedOnAxis(OnAxis):
    pass


class SeedAtCritical(NotCritical):
    pass


class StepFailure(NumericalFailure):
    pass


# surface_mesh
class SeparatrixTooClose(VortexTopoError, ValueError):
    exit_code = 3


class NotCompact(VortexTopoError, ValueError):
    exit_code = 3


class NotWatertight(NumericalFailure):
    pass


# perturb_general
class OutOfRange(VortexTopoError, ValueError):
    exit_code = 2


class EmptySpectrum(ConfigError):
    pass


class NoN1Mode(ConfigError):
    pass


class NuTooLarge(RegimeOutOfRange):
    pass


class NonPhysicalSpectrum(ConfigError):
    pass


class ZeroMeanSpectrum(ConfigError):
    pass


# cli_io
class EmptyData(VortexTopoError, ValueError):
    exit_code = 4


# cli_io
class ManifestMismatch(NumericalFailure):
    """Re-running a recorded command did not reproduce the recorded file hashes."""
