"""Exception hierarchy shared by all riskbias modules."""


class RiskBiasError(Exception):
    """Base class for every error raised by the package."""


class DomainError(RiskBiasError, ValueError):
    """An argument lies outside the domain of the operation."""


class UnsupportedLawError(RiskBiasError, TypeError):
    pass


class ConfigurationError(RiskBiasError, ValueError):
    pass


class DegenerateSampleError(RiskBiasError, ValueError):
    pass


class IllPosedFitError(RiskBiasError):
    pass


class FitFailureError(RiskBiasError):
    pass


class InfiniteRiskError(RiskBiasError):
    """Risk is +inf (e.g. GPD expected shortfall with shape >= 1)."""


class InfiniteMomentError(RiskBiasError):
    pass


class EmptyTailError(RiskBiasError):
    pass


class BracketError(RiskBiasError):
    """No sign change of the bias objective inside the search bracket."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class UnreliableBiasError(RiskBiasError):
    pass
