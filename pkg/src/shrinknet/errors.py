"""Exception types shared across the package."""


class ConfigError(ValueError):
    """A configuration is malformed, incomplete, or internally inconsistent."""


class DomainError(ValueError):
    """A numeric argument lies outside the domain of the requested function."""


class ShapeError(ValueError):
    """Array extents are incompatible with the requested operation."""


class FormatError(ValueError):
    """A binary or text artifact does not conform to its file format."""


class SolverError(RuntimeError):
    """An iterative solver failed to reach its tolerance."""


class TrainingDiverged(RuntimeError):
    """The training loss became non-finite."""
