"""Exception hierarchy shared by all emitterkit modules."""


class EmitterKitError(Exception):
    """Base class for every error raised by emitterkit."""


class ModelDomainError(EmitterKitError, ValueError):
    """Physical inputs outside the domain of the rate model."""


class OscillatoryRegimeError(ModelDomainError):
    """The rate matrix has complex eigenvalues (A**2 - 4B < 0)."""


class DegenerateRootsError(ModelDomainError):
    """The two decay constants coincide, so the bunching amplitude is undefined."""


class ConfigError(EmitterKitError, ValueError):
    """Invalid simulation or run configuration."""


class DataError(EmitterKitError, ValueError):
    """Malformed, unsorted or inconsistent input data."""


class NormalizationError(DataError):
    """A histogram cannot be normalized with the requested mode."""


class StatisticsError(DataError):
    """Not enough data to form the requested estimate."""


class SchemaError(DataError):
    """A file does not follow the expected on-disk schema."""


class ParseError(DataError):
    """A row in a data file could not be parsed."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line
