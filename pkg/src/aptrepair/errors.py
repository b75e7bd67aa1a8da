"""Exception types raised across the package."""


class DomainError(ValueError):
    """Input outside the domain an operation accepts."""


class ConfigurationError(ValueError):
    """A parameter combination that cannot produce a meaningful result."""


class ConfigError(ValueError):
    """Scenario file failed schema validation.

    ``path`` is the dotted location of the offending field.
    """

    def __init__(self, path, message):
        self.path = path
        super().__init__(f"{path}: {message}")


class GenerationError(RuntimeError):
    """Random graph generation gave up after its retry budget."""


class IntegrationError(RuntimeError):
    """Forward integration produced a non-finite state."""

    def __init__(self, message, step=None):
        self.step = step
        super().__init__(message)
