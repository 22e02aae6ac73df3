"""Discrete hedge-error theory and Monte Carlo variance reduction for Black-Scholes books."""

from hedgelab.analytics import (
    BsQuote,
    OptionSpec,
    PricingInputs,
    bs_quote,
    log_space_derivative,
    norm_cdf,
    norm_inv_cdf,
)
from hedgelab.errors import HedgeLabError

__version__ = "0.1.0"

__all__ = [
    "BsQuote",
    "HedgeLabError",
    "OptionSpec",
    "PricingInputs",
    "__version__",
    "bs_quote",
    "log_space_derivative",
    "norm_cdf",
    "norm_inv_cdf",
]
