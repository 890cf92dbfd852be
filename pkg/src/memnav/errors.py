"""Exception types shared across the package."""


class MemnavError(Exception):
    """Base class for package errors."""


class ConfigError(MemnavError, ValueError):
    """A configuration or spec object failed validation."""


class GenerationError(MemnavError, RuntimeError):
    """Rejection sampling ran out of retries."""


class ContractError(MemnavError, ValueError):
    """A function was called outside its documented domain."""


class NonFiniteError(MemnavError, FloatingPointError):
    """A tensor operation produced NaN or Inf."""


class ShapeError(MemnavError, ValueError):
    """Operand shapes are inconsistent."""


class UndefinedLossError(MemnavError, ValueError):
    """Every frame of a loss term was masked out."""


class FormatError(MemnavError, ValueError):
    """A serialized artifact is malformed or has the wrong version."""


class StageDependencyError(MemnavError, RuntimeError):
    """A pipeline stage ran before the artifacts it needs existed."""
