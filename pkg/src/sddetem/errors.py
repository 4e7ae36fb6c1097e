"""Exception types shared across the package."""


class SddeError(Exception):
    """Base class for all package-specific errors."""


class NumericRangeError(SddeError):
    """A coefficient evaluation or scheme step produced a non-finite value.

    Carries the offending input so the failure can be reproduced.
    """

    def __init__(self, message, offending_input=None):
        super().__init__(message)
        self.offending_input = offending_input


class ConfigError(SddeError):
    """Experiment configuration failed validation.

    ``violations`` lists one human-readable message per violated field so a
    single run reports every problem at once.
    """

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__(
            "invalid configuration:\n" + "\n".join(f"  - {v}" for v in self.violations)
        )
