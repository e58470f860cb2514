"""Exception types shared across the package."""


class GamlaError(Exception):
    """Base class for all errors raised by this package."""


class DimensionMismatchError(GamlaError):
    """An input's shape does not match the contract of the operation."""


class SchemaError(GamlaError):
    """A serialized artifact is corrupt or does not match the expected schema."""


class PhaseError(GamlaError):
    """A model is in the wrong training phase for the requested operation."""


class SingularPointError(GamlaError):
    """The constraint gradient vanishes; normals/curvature are undefined here."""


class DegenerateChartError(GamlaError):
    """The implicit function cannot be solved as a graph over the chosen chart."""


class ConfigError(GamlaError):
    """A run configuration cannot be parsed or contains invalid values."""
