"""Imputation of right-censored wages in longitudinal panel data.

The package fits several censored-regression models per imputation cell
(right-censored Tobit, doubly-censored Tobit, censored quantile regression
with an at-limit and an extrapolated variant), draws stochastic imputations
above the censoring limit, and picks the best method per cell by the
smoothness of the resulting wage density around the limit.
"""

__version__ = "0.1.0"

from censimpute.errors import CensImputeError, ConfigError, FitError, InfeasibleQuantileError

__all__ = [
    "CensImputeError",
    "ConfigError",
    "FitError",
    "InfeasibleQuantileError",
    "__version__",
]
