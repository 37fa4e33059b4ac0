"""Exception hierarchy shared by the library, the CLI and the HTTP layer."""


class DepthPipelineError(Exception):
    """Base class for every error raised by the depth pipeline."""

    exit_code = 1
    status_code = 500


class ContractViolation(DepthPipelineError, ValueError):
    """A precondition of an operation was not met (shape, sign, divisibility...)."""

    status_code = 422


class EmptyValidSetError(ContractViolation):
    """A reduction was asked for over an empty set of pixels."""


class DegenerateConfigurationError(ContractViolation):
    """The geometry cannot produce an answer (parallel rays, zero coverage)."""


class ConfigError(DepthPipelineError):
    """Configuration or calibration input is missing or invalid."""

    exit_code = 2
    status_code = 400


class NumericDivergence(DepthPipelineError):
    """An iterative procedure produced a non-finite value."""

    exit_code = 3
    status_code = 500
