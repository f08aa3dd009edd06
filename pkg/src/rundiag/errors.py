"""Exception types shared across the package."""


class RundiagError(Exception):
    """Base class for all errors raised by this package."""


class TelemetryError(RundiagError):
    """Malformed or inconsistent telemetry (bad file, dim mismatch, non-finite payload).

    Messages are single-line and name the offending file and field so they can
    be surfaced verbatim by the CLI.
    """


class InsufficientDataError(RundiagError):
    """Too few samples for the requested estimate."""


class DegenerateInputError(RundiagError):
    """Input is valid but statistically degenerate (zero variance, P_e == 1, ...)."""
