"""Exception hierarchy shared across the package.

Every failure mode callers are expected to handle gets its own class so the
CLI can map them onto stable exit codes.
"""


class PdmpError(Exception):
    """Base class for all package errors."""


class NumericFailureError(PdmpError):
    """A vector field or flow produced a non-finite value."""

    def __init__(self, message, time=None, state=None):
        super().__init__(message)
        self.time = time
        self.state = state


class RateBoundViolationError(PdmpError):
    """The jump rate exceeded its declared bound, or the state left the
    validated box. Aborting is mandatory: clamping would bias the thinning
    law."""

    def __init__(self, message, time=None, state=None, rate=None):
        super().__init__(message)
        self.time = time
        self.state = state
        self.rate = rate


class MeasureSingularityError(PdmpError):
    """A coarse rejection factor was <= 0, so the coarse law is not
    absolutely continuous with respect to the sampled one."""


class FilterCollapseError(PdmpError):
    """Every particle weight underflowed to zero."""


class ContractViolationError(PdmpError):
    """An argument violated a documented precondition (mismatched lengths,
    query outside the path domain, missing level, ...)."""


class DegenerateWeightsError(ContractViolationError):
    """A weight vector had no positive mass."""


class InsufficientDataError(PdmpError):
    """A regression was requested with too few usable points."""


class BudgetError(PdmpError):
    """A particle allocation exceeded the configured budget."""

    def __init__(self, message, level=None, requested=None, budget=None):
        super().__init__(message)
        self.level = level
        self.requested = requested
        self.budget = budget


class ConfigError(PdmpError):
    """Bad configuration value, unknown parameter key, unreadable file."""
