"""Domain errors shared across modules."""


class PackbertError(Exception):
    """Base class for all packbert errors."""


class ShapeError(PackbertError, ValueError):
    """Operand shapes are inconsistent with an operation's contract."""


class ConfigError(PackbertError, ValueError):
    """Model or benchmark configuration is invalid."""


class WeightFormatError(PackbertError, ValueError):
    """A weight file is corrupt or does not match the expected model shape."""
