"""Exception types shared across the package."""


class TempofuseError(Exception):
    """Base class for package errors."""


class ShapeError(TempofuseError):
    """Operand shapes do not satisfy an op's contract."""


class ConfigError(TempofuseError):
    """Invalid or inconsistent configuration."""


class DataError(TempofuseError):
    """Missing, corrupt, or inconsistent input data."""


class NumericError(TempofuseError):
    """Non-finite values where finite ones are required."""
