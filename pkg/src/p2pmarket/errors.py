"""Exception hierarchy shared across the package."""


class MarketError(Exception):
    """Base class for all errors raised by p2pmarket."""


class ConfigurationError(MarketError, ValueError):
    """Market data is inconsistent (missing characteristics, empty neighborhoods, ...)."""


class ValidationError(ConfigurationError):
    """An agent or scenario violates a model invariant."""


class ContractViolation(MarketError, ValueError):
    """A function was called with arguments outside its contract."""


class InfeasibleError(MarketError):
    """No dispatch satisfies the bounds, sign and balance constraints."""


class ProtocolError(MarketError):
    """An agent did not receive the messages a negotiation round requires."""


class AuditError(MarketError):
    """A message crossing an agent boundary carried more than the allowed payload."""


class UnsupportedMetricError(MarketError):
    """The requested metric is not defined for this scenario layout."""
