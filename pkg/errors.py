"""
Exception types shared across the framework
"""


class ConfigurationError(ValueError):
    """Shapes, sizes or variant/input combinations that cannot work together"""


class UsageError(RuntimeError):
    """An API called out of order (backward before forward, step after done, ...)"""


class NonFiniteGradientError(FloatingPointError):
    """Raised by the optimizer when a gradient or an updated value holds NaN or Inf"""

    def __init__(self, block_name: str, bad_count: int, stage: str = "gradient"):
        self.block_name = block_name
        self.bad_count = bad_count
        self.stage = stage
        super().__init__(
            f"Non-finite {stage} in parameter block '{block_name}' "
            f"({bad_count} bad entries); aborting update"
        )


class RemainderBoundViolation(AssertionError):
    """A mean-field remainder exceeded its smoothness bound"""

    def __init__(self, message: str, configuration: dict):
        self.configuration = configuration
        super().__init__(f"{message} | configuration={configuration}")
