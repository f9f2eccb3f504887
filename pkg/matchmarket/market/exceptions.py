"""
Error types raised by the market services.

Every error derives from ``MarketError`` (itself a ``ValueError``) so callers
can catch the whole family; management commands turn them into
``CommandError`` for a nonzero exit status.
"""
from typing import Optional


class MarketError(ValueError):
    """Base class for all matchmarket errors"""


class NonPositiveRate(MarketError):
    """An arrival rate was zero or negative"""


class ProbabilityOutOfRange(MarketError):
    """The edge probability is outside the open interval (0, 1)"""


class HorizonNonPositive(MarketError):
    """A simulation horizon (or sampling time) was not strictly positive"""


class TimeOutOfRange(MarketError):
    """A requested sample time falls outside [0, horizon]"""


class GridTooSmall(MarketError):
    """Too much stationary mass sits on the truncation boundary"""

    def __init__(self, message: str, leak: float, suggested_grid: Optional[tuple[int, int]] = None):
        super().__init__(message)
        self.leak = leak
        self.suggested_grid = suggested_grid


class SolverDiverged(MarketError):
    """The stationary solve did not reach the configured residual"""


class PolicyMismatch(MarketError):
    """A distribution was solved for a different policy than requested"""


class GridMismatch(MarketError):
    """Two distributions are defined on different truncation grids"""


class NotConvergedWithinBudget(MarketError):
    """No sampled time reached the requested distance to stationarity"""


class ConfigInvalid(MarketError):
    """A run configuration failed validation"""
