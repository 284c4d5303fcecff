"""Joint stochastic block models for collections of networks."""

__version__ = "0.1.0"

from .model import (  # noqa: F401
    ColSbmParams,
    Network,
    NetworkCollection,
    SufficientStats,
    VariationalState,
    count_params,
    full_support,
    validate_params,
    validate_support,
)
from .likelihood import elbo, entropy, exact_loglik_oracle, log_emission  # noqa: F401
