"""Exception types shared across the library."""


class ShapeError(ValueError):
    """Raised when tensor shapes are incompatible for an operation.

    The message always names the offending dimensions so failures in deep
    call stacks remain diagnosable.
    """


class DegenerateInputError(ValueError):
    """Raised when an input is structurally valid but too small to operate on
    (e.g. pooling a 1-pixel-high map, normalizing a single-element batch)."""


class NonFiniteGradientError(FloatingPointError):
    """Raised when an optimizer step encounters a NaN or infinite gradient."""

    def __init__(self, param_name, max_abs):
        self.param_name = param_name
        self.max_abs = max_abs
        super().__init__(
            f"non-finite gradient for parameter '{param_name}' (max |g| = {max_abs})"
        )


class UndefinedMetricError(ValueError):
    """Raised when a metric is requested from an empty accumulator or for a
    class with an empty union."""


class DatasetError(ValueError):
    """Raised for on-disk dataset problems: unmatched image/label pairs,
    out-of-range label indices, missing directories."""


class CheckpointError(ValueError):
    """Raised when a checkpoint file is malformed or inconsistent."""


class ConfigError(ValueError):
    """Raised for malformed run-configuration files; carries line context."""
