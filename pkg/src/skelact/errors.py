"""Exception hierarchy shared across the package."""


class SkelactError(Exception):
    """Base class for all package errors."""


class ConfigError(SkelactError, ValueError):
    """Invalid configuration value or unknown configuration key."""

    def __init__(self, message, key=None):
        super().__init__(message if key is None else f"{key}: {message}")
        self.key = key


class DataError(SkelactError, ValueError):
    """Malformed or inconsistent input data."""


class ParseError(DataError):
    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class JointSetMismatch(DataError):
    def __init__(self, expected, actual):
        super().__init__(f"joint set mismatch: expected {expected}, got {actual}")
        self.expected = expected
        self.actual = actual


class DegenerateSkeleton(DataError):
    """Skeleton geometry too degenerate to normalize."""


class ModelError(SkelactError, RuntimeError):
    """Numerical failure or shape mismatch inside the classifier."""

    def __init__(self, message, layer=None):
        super().__init__(message if layer is None else f"[{layer}] {message}")
        self.layer = layer
