"""Exception types shared across the package."""


class CensImputeError(Exception):
    """Base class for errors raised by this package."""


class ConfigError(CensImputeError):
    """Invalid or inconsistent run configuration."""


class DataError(CensImputeError):
    """Input data violates a structural requirement (missing column, missing censor rule)."""


class FitError(CensImputeError):
    """An estimator could not produce a usable fit (non-convergence, degenerate input)."""


class InfeasibleQuantileError(FitError):
    """Requested quantile is not identified under the cell's censoring."""
