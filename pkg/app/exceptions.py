"""
Error types shared by the numerics, the CLI and the HTTP routes.

Config problems are ValueErrors and numerical failures are RuntimeErrors, so
callers that only know the builtin hierarchy still catch them.
"""


class ConfigError(ValueError):
    """Invalid configuration or usage (exit code 2)."""


class KernelResolutionError(ConfigError):
    """The grid is too coarse to resolve the kernel width."""


class NumericalError(RuntimeError):
    """A computation produced non-finite values or failed to converge (exit code 3)."""


class NonContractionError(NumericalError):
    """Picard updates kept growing; epsilon is above the contraction threshold."""


class FlowStabilityError(NumericalError):
    """The limiting-flow integrator lost positivity or was given too large a step."""


EXIT_OK = 0
EXIT_VERIFICATION_FAILED = 1
EXIT_CONFIG_ERROR = 2
EXIT_NUMERICAL_ERROR = 3
