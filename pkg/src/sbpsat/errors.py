"""Exception hierarchy shared by all sbpsat modules."""


class SbpSatError(Exception):
    """Base class for every error raised by this package."""


class ConfigurationError(SbpSatError, ValueError):
    """Unsupported or inconsistent user-supplied configuration."""


class DomainError(SbpSatError, ValueError):
    """Evaluation point outside the domain of a function."""


class ConstructionError(SbpSatError):
    """An operator could not be built from the supplied data."""


class TopologyError(SbpSatError):
    """Mesh connectivity is not a valid 2-manifold triangulation."""


class PerturbationError(SbpSatError):
    """Random mesh perturbation failed to keep all elements valid."""


class MetricError(SbpSatError):
    """Degenerate element mapping."""


class DefinitenessError(SbpSatError):
    """A matrix expected to be (semi-)definite is not."""


class AlignmentError(SbpSatError):
    """Face traces of two neighbouring elements do not coincide."""


class DataError(SbpSatError, ValueError):
    """Malformed numeric input, e.g. nonpositive errors in a rate fit."""


class SolverError(SbpSatError):
    """Linear or eigenvalue solver failed to reach its tolerance."""
