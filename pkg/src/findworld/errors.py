"""Exception hierarchy shared by all findworld modules."""


class FindWorldError(Exception):
    """Base class for every error raised by findworld."""


class SchemaError(FindWorldError, ValueError):
    """Schema definition or CSV header does not match expectations."""


class DataError(FindWorldError, ValueError):
    """A cell or a whole dataset cannot be ingested."""


class DagError(FindWorldError, ValueError):
    """Causal graph is malformed (cycle, dangling edge, bad roles)."""


class GlmError(FindWorldError, ValueError):
    """GLM cannot be fitted or evaluated."""


class RankDeficientError(GlmError):
    """Design matrix is rank deficient.

    Attributes
    ----------
    columns : list of str
        Names of the columns found to be linearly dependent on the others.
    """

    def __init__(self, message, columns):
        super().__init__(message)
        self.columns = list(columns)


class WarpError(FindWorldError, ValueError):
    """Warping models cannot be fitted or applied."""


class ConfigError(FindWorldError, ValueError):
    """Run configuration is invalid or incomplete."""
