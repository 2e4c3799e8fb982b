"""Exception hierarchy shared across the toolkit."""


class AdvstError(Exception):
    """Base class for all toolkit errors."""


class InvalidInputError(AdvstError):
    """Malformed or out-of-domain data passed to an operation."""


class ConfigurationError(AdvstError):
    """Inconsistent or unsupported configuration."""


class UnsupportedOperationError(AdvstError):
    """Operation requires a hook or capability that is not available."""


class OptimizationFailureError(AdvstError):
    """Attack optimization produced a non-finite loss or diverged."""

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class TrainingFailureError(AdvstError):
    """Surrogate training did not reach the required accuracy."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class GenerationFailureError(AdvstError):
    """Music generator produced a non-finite latent mid-chain."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step
