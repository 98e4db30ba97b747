"""Truth-telling contingent contracts for QoS and reservations."""

from .errors import (
    ConfigError,
    ConsistencyError,
    DomainError,
    EvaluationError,
    ParameterError,
    QosMechError,
    StateError,
)
from .mechanisms import (
    LOG_EPS,
    LinearQosScheme,
    LogQosScheme,
    MarketParams,
    Quote,
    ReservationScheme,
    ValidationReport,
    linear_quote,
    log_quote,
    provider_expected_utility,
    provider_income,
    qos_ic_lower_bound,
    reservation_expected_cost,
    reservation_quote,
    reservation_w,
    user_expected_utility,
    validate,
)

__version__ = "0.1.0"
