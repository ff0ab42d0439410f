"""Shared exception types, with the CLI exit code each one maps to."""


class TrellisError(Exception):
    """Base class for all library errors."""

    exit_code = 1


class UsageError(TrellisError):
    """Bad input files, malformed configuration, unknown names."""

    exit_code = 2


class DimensionError(TrellisError):
    """Operands live in apartments / fibers of different rank."""

    exit_code = 3


class DegeneracyError(TrellisError):
    """Singular matrix, non-reduced cover, or vanishing data."""

    exit_code = 3


class PathError(TrellisError):
    """A path violates branch-point clearance or is degenerate."""

    exit_code = 3


class ResolutionError(TrellisError):
    """Step or grid too coarse to resolve the requested structure."""

    exit_code = 3


class IntegrationError(TrellisError):
    """Quadrature or ODE integration failed to reach its target accuracy."""

    exit_code = 3


class PrecisionError(TrellisError):
    """Stiffness or cancellation beyond the configured budget."""

    exit_code = 3


class CrossingError(TrellisError):
    """A wall crossing is tangential or otherwise ill posed."""

    exit_code = 3


class GluingError(TrellisError):
    """Chart transitions disagree beyond tolerance; wrong MAR set or section."""

    exit_code = 4


class BudgetError(TrellisError):
    """A configurable work budget (walls, generations, samples) ran out."""

    exit_code = 5
