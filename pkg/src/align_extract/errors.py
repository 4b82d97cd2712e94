"""Exception hierarchy shared by every module."""


class AlignExtractError(Exception):
    """Base class for all package errors."""


class ConfigurationError(AlignExtractError, ValueError):
    """Invalid inputs, shapes, or configuration values."""


class DatasetFormatError(ConfigurationError):
    """A dataset file could not be parsed.

    ``lineno`` is the 1-based line of the offending record, when known.
    """

    def __init__(self, message, lineno=None):
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)
        self.lineno = lineno


class NumericError(AlignExtractError, ArithmeticError):
    """An iterative solver failed to reach its tolerance."""

    def __init__(self, message, residual=None):
        if residual is not None:
            message = f"{message} (residual={residual:.3e})"
        super().__init__(message)
        self.residual = residual


class InfeasibleError(AlignExtractError):
    """The alignment target lies outside the hull of supported Q-values."""


class DegenerateStateError(AlignExtractError):
    """A state whose extraction weights sum to zero."""

    def __init__(self, state, message="all weights are zero"):
        super().__init__(f"state {state}: {message}")
        self.state = state


class PipelineError(AlignExtractError):
    """A pipeline stage failed; ``stage`` names it and ``__cause__`` holds the original error."""

    def __init__(self, stage, cause):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
