"""Exception taxonomy shared across the toolkit."""


class SpadcalError(Exception):
    """Base class for all toolkit errors."""


class ParameterError(SpadcalError, ValueError):
    """A spec, model or argument field violates its invariants.

    Messages name the offending field so CLI validation output is actionable.
    """


class EmptyStreamError(SpadcalError):
    """Requested duration is too short to hold a single trigger period."""


class SignalDomainError(SpadcalError):
    """A quantity is undefined for these inputs (zero emission, empty window,
    out-of-range result)."""


class SignalBelowBackgroundError(SpadcalError):
    """LNPD reading does not exceed its zero-flux reference level."""


class FitConvergenceError(SpadcalError):
    """Iterative fit did not converge; carries the last iterate for diagnosis."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class SingularFitError(SpadcalError):
    """Normal matrix is rank deficient; the fit parameters are not identifiable."""
