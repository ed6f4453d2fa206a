"""Risk-unbiased capital estimation and backtesting."""

__version__ = "0.1.0"

from .distributions import Garch11, GpdLeftTail, Normal, RandomStream, Sample, StudentT  # noqa: E402
from .risk_measures import RiskSpec  # noqa: E402

__all__ = ["Garch11", "GpdLeftTail", "Normal", "RandomStream", "Sample", "StudentT", "RiskSpec", "__version__"]
