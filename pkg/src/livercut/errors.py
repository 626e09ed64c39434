"""Exception hierarchy. Each class maps to a stable CLI exit code."""


class LivercutError(Exception):
    exit_code = 1


class ConfigError(LivercutError, ValueError):
    """Invalid parameters, flags or config file entries."""

    exit_code = 2


class DataError(LivercutError, ValueError):
    """Malformed, missing or misaligned input data."""

    exit_code = 3


class EmptyRegionError(DataError):
    """The thresholded likelihood map produced no foreground voxel."""


class NumericalError(LivercutError, ArithmeticError):
    """A numerical invariant failed (degenerate statistics, flow/cut mismatch)."""

    exit_code = 4
