"""Closed-form contingent-contract pricing schemes.

Three schemes are provided:

* :class:`LinearQosScheme` -- premium ``-k q^2 + 2k q + c1``, compensation ``2k q``.
* :class:`LogQosScheme` -- premium ``k q + c1``, compensation ``-k ln(1 - q)``.
* :class:`ReservationScheme` -- two-period option priced on the reported usage
  probability ``p'`` and the reported QoS ``q'``.

Every evaluation function accepts scalars or numpy arrays.  Probabilities are
plain floats validated at the boundary by :func:`check_probability`; money is
float throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .errors import ConsistencyError, DomainError, ParameterError

ArrayLike = Union[float, np.ndarray]

#: The logarithmic scheme is evaluated on ``[0, 1 - LOG_EPS]``.
LOG_EPS = 1e-12

#: Relative tolerance for agreement between independent closed-form routes.
CLOSED_FORM_RTOL = 1e-9


def check_probability(x, name="q", upper=1.0):
    """Return ``x`` (float or float array) if it lies in ``[0, upper]``.

    Raises :class:`DomainError` otherwise, including for NaN.
    """
    arr = np.asarray(x, dtype=float)
    bad = ~((arr >= 0.0) & (arr <= upper))
    if bad.any():
        worst = arr[bad].flat[0] if arr.ndim else float(arr)
        if upper < 1.0 and 0.0 <= worst <= 1.0:
            raise DomainError(
                f"{name}={worst!r} exceeds 1 - eps_log "
                f"(eps_log={LOG_EPS:g}); compensation diverges at 1"
            )
        raise DomainError(f"probability out of range: {name}={worst!r}")
    return float(arr) if arr.ndim == 0 else arr


def _out(x):
    return float(x) if np.ndim(x) == 0 else x


@dataclass(frozen=True)
class MarketParams:
    """User value ``v`` per satisfied service and provider cost ``c``."""

    v: float
    c: float = 0.0

    def __post_init__(self):
        if not (self.v > 0):
            raise ParameterError(f"market value v must be positive, got {self.v}")
        if not (self.c >= 0):
            raise ParameterError(f"market cost c must be nonnegative, got {self.c}")
        if not (self.c < self.v):
            raise ParameterError(f"need c < v for trade, got c={self.c}, v={self.v}")


@dataclass(frozen=True)
class Quote:
    premium: float
    compensation: float
    usage_price: float | None = None

    def __post_init__(self):
        if self.premium < 0 or self.compensation < 0:
            raise ParameterError(f"negative quote: {self}")
        if self.usage_price is not None and self.usage_price < 0:
            raise ParameterError(f"negative usage price: {self}")


@dataclass(frozen=True)
class Violation:
    constraint: str
    source: str

    def __str__(self):
        return f"{self.constraint} fails [{self.source}]"


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __bool__(self):
        return self.ok

    def messages(self) -> list[str]:
        return [str(v) for v in self.violations]


class _QosScheme:
    """Shared behaviour of the single-period QoS schemes."""

    kind = ""
    source = ""
    domain_upper = 1.0

    def premium(self, q):
        raise NotImplementedError

    def compensation(self, q):
        raise NotImplementedError

    def truthful_income(self, q):
        """Closed-form provider income ``w(q)`` at a truthful report."""
        raise NotImplementedError

    def ic_lower_bound(self, market: MarketParams) -> float:
        raise NotImplementedError

    def check(self, q, name="q"):
        return check_probability(q, name, self.domain_upper)

    def quote(self, q_reported) -> Quote:
        q = self.check(q_reported, "q_reported")
        return Quote(float(self.premium(q)), float(self.compensation(q)))

    def income(self, q_true, q_reported):
        """Provider's expected receipt ``g(q') - (1 - q) h(q')``."""
        q_rep = self.check(q_reported, "q_reported")
        q = check_probability(q_true, "q_true")
        return provider_income(self.premium(q_rep), self.compensation(q_rep), q)

    def _common_violations(self, market):
        src, k, c1 = self.source, self.k, self.c1
        out = []
        if not k > 0:
            out.append(Violation("k > 0", src))
        if not c1 > 0:
            out.append(Violation("c1 > 0", src))
        if not market.c <= c1:
            out.append(Violation("c ≤ c1", src))
        if not c1 <= market.v - k:
            out.append(Violation("c1 ≤ v − k", src))
        return out


@dataclass(frozen=True)
class LinearQosScheme(_QosScheme):
    """Linear compensation: truth-telling on [0, 1], IC on ``[q0, 1]``."""

    k: float
    c1: float

    kind = "linear"
    source = "linear compensation"

    def premium(self, q):
        return -self.k * q * q + 2.0 * self.k * q + self.c1

    def compensation(self, q):
        return 2.0 * self.k * q

    def truthful_income(self, q):
        return self.k * q * q + self.c1

    def discriminant(self, market: MarketParams) -> float:
        return market.v * market.v - 4.0 * self.k * self.c1

    def ic_lower_bound(self, market: MarketParams) -> float:
        disc = self.discriminant(market)
        if disc < 0:
            raise ParameterError(
                f"v² − 4·k·c1 = {disc:g} < 0: no incentive-compatible interval"
            )
        # rationalised root: no cancellation for large v
        return 2.0 * self.c1 / (market.v + math.sqrt(disc))

    def violations(self, market: MarketParams) -> list[Violation]:
        out = self._common_violations(market)
        disc = self.discriminant(market)
        if disc < 0:
            out.append(Violation("v² − 4·k·c1 ≥ 0", self.source))
        elif self.k > 0 and self.c1 > 0:
            q0 = self.ic_lower_bound(market)
            if not 0.0 <= q0 <= 1.0:
                out.append(Violation("0 ≤ q0 ≤ 1", self.source))
        return out


@dataclass(frozen=True)
class LogQosScheme(_QosScheme):
    """Logarithmic compensation, suited to "number of nines" QoS levels.

    Evaluated on ``[0, 1 - LOG_EPS]``; IC on ``[q0, 1)`` with ``q0 = (c1 + k)/v``.
    """

    k: float
    c1: float

    kind = "log"
    source = "logarithmic compensation"
    domain_upper = 1.0 - LOG_EPS

    def premium(self, q):
        return self.k * q + self.c1

    def compensation(self, q):
        return -self.k * np.log1p(-np.asarray(q, dtype=float)) + 0.0

    def truthful_income(self, q):
        q = np.asarray(q, dtype=float)
        return _out(self.k * (1.0 - q) * np.log1p(-q) + self.k * q + self.c1)

    def ic_lower_bound(self, market: MarketParams) -> float:
        return (self.c1 + self.k) / market.v

    def violations(self, market: MarketParams) -> list[Violation]:
        out = self._common_violations(market)
        q0 = self.ic_lower_bound(market)
        if not 0.0 < q0 <= 1.0:
            out.append(Violation("0 < q0 ≤ 1", self.source))
        return out


QosScheme = Union[LinearQosScheme, LogQosScheme]


@dataclass(frozen=True)
class ReservationScheme:
    """Two-period reservation option.

    premium ``g(p', q') = k1 p'^2 - k2 q'^2 + 2 k2 q' + c1``,
    usage price ``f(p') = -2 k1 p' + c2``,
    compensation ``h(p', q') = k1 p'^2 + 2 k2 q' + c3``.
    """

    k1: float
    k2: float
    c1: float
    c2: float
    c3: float

    kind = "reservation"
    source = "reservation"

    def premium(self, p, q):
        return self.k1 * p * p - self.k2 * q * q + 2.0 * self.k2 * q + self.c1

    def usage_price(self, p):
        return -2.0 * self.k1 * p + self.c2

    def compensation(self, p, q):
        return self.k1 * p * p + 2.0 * self.k2 * q + self.c3

    def truthful_cost(self, p, q):
        """Closed-form ``w(p, q)``: the user's expected payment under truth."""
        return (
            -self.k1 * p * p * q
            + self.k2 * q * q
            + self.c3 * q
            + self.c2 * p * q
            + self.c1
            - self.c3
        )

    def dw_dq(self, p, q):
        return self.c2 * p - self.k1 * p * p + 2.0 * self.k2 * q + self.c3

    def corner_cost(self) -> float:
        """``w(1, 1) = c1 + c2 - k1 + k2``."""
        return self.c1 + self.c2 - self.k1 + self.k2

    def quote(self, p_reported, q_reported) -> Quote:
        p = check_probability(p_reported, "p_reported")
        q = check_probability(q_reported, "q_reported")
        return Quote(
            float(self.premium(p, q)),
            float(self.compensation(p, q)),
            float(self.usage_price(p)),
        )

    def violations(self, market: MarketParams) -> list[Violation]:
        src = self.source
        out = [
            Violation(f"{name} > 0", src)
            for name in ("k1", "k2", "c1", "c2", "c3")
            if not getattr(self, name) > 0
        ]
        if not self.c2 >= 2.0 * self.k1:
            out.append(Violation("c2 ≥ 2k1", src))
        if not self.c1 - self.c3 >= market.c:
            out.append(Violation("c1 − c3 ≥ c", src))
        corner = self.corner_cost()
        if not market.c < corner:
            out.append(Violation("c < c1 + c2 − k1 + k2", src))
        if not corner < market.v:
            out.append(Violation("c1 + c2 − k1 + k2 < v", src))
        return out


# ---------------------------------------------------------------------------
# module-level operations


def validate(scheme, market: MarketParams) -> ValidationReport:
    """Check every hypothesis the scheme's guarantees rest on."""
    return ValidationReport(list(scheme.violations(market)))


def linear_quote(scheme: LinearQosScheme, q_reported: float) -> Quote:
    return scheme.quote(q_reported)


def log_quote(scheme: LogQosScheme, q_reported: float) -> Quote:
    return scheme.quote(q_reported)


def provider_income(g_of_report, h_of_report, q_true):
    """``g(q') - (1 - q) h(q')``; equals ``w(q)`` when ``q' = q``."""
    return g_of_report - (1.0 - q_true) * h_of_report


def user_expected_utility(q_true, q_reported, v, scheme):
    q = check_probability(q_true, "q_true")
    q_rep = scheme.check(q_reported, "q_reported")
    return q * v - scheme.premium(q_rep) + (1.0 - q) * scheme.compensation(q_rep)


def provider_expected_utility(q_true, q_reported, market: MarketParams, scheme):
    return scheme.income(q_true, q_reported) - market.c


def qos_ic_lower_bound(scheme, market: MarketParams) -> float:
    return scheme.ic_lower_bound(market)


def reservation_quote(scheme: ReservationScheme, p_reported, q_reported) -> Quote:
    return scheme.quote(p_reported, q_reported)


def expected_cost_protocol(scheme: ReservationScheme, p, q, p_rep, q_rep):
    """User's expected cost summed over the protocol's period-2 branches."""
    return (
        scheme.premium(p_rep, q_rep)
        + p * q * scheme.usage_price(p_rep)
        - (1.0 - q) * scheme.compensation(p_rep, q_rep)
    )


def expected_cost_expanded(scheme: ReservationScheme, p, q, p_rep, q_rep):
    """Completed-square form exhibiting the saddle point at ``(p, q)``."""
    s = scheme
    return (
        s.k1 * q * (p_rep - p) ** 2
        - s.k2 * (q_rep - q) ** 2
        - s.k1 * p * p * q
        + s.k2 * q * q
        + s.c3 * q
        + s.c2 * p * q
        + s.c1
        - s.c3
    )


def reservation_expected_cost(scheme: ReservationScheme, p_true, q_true,
                              p_reported, q_reported):
    """Expected cost to the user, cross-checked against the expanded form.

    Raises :class:`ConsistencyError` if the two routes differ by more than
    ``CLOSED_FORM_RTOL`` relative.
    """
    p = check_probability(p_true, "p_true")
    q = check_probability(q_true, "q_true")
    p_rep = check_probability(p_reported, "p_reported")
    q_rep = check_probability(q_reported, "q_reported")
    a = expected_cost_protocol(scheme, p, q, p_rep, q_rep)
    b = expected_cost_expanded(scheme, p, q, p_rep, q_rep)
    if not np.allclose(a, b, rtol=CLOSED_FORM_RTOL, atol=1e-12):
        raise ConsistencyError(
            f"expected-cost routes disagree: protocol={a!r}, expanded={b!r}"
        )
    return _out(a)


def reservation_w(scheme: ReservationScheme, p, q):
    p = check_probability(p, "p")
    q = check_probability(q, "q")
    return _out(scheme.truthful_cost(p, q))


def reservation_user_utility(scheme, market, p_true, q_true, p_reported, q_reported):
    ec = reservation_expected_cost(scheme, p_true, q_true, p_reported, q_reported)
    return p_true * q_true * market.v - ec


def reservation_provider_utility(scheme, market, p_true, q_true, p_reported,
                                 q_reported, cost_basis="true"):
    """``EC - c p``; ``cost_basis="reported"`` charges ``c p'`` instead."""
    ec = reservation_expected_cost(scheme, p_true, q_true, p_reported, q_reported)
    if cost_basis == "true":
        return ec - market.c * p_true
    if cost_basis == "reported":
        return ec - market.c * p_reported
    raise ValueError(f"unknown cost basis {cost_basis!r}")


def make_scheme(mechanism: str, params: dict):
    """Build a scheme from a mechanism selector and a parameter mapping."""
    try:
        if mechanism == "linear":
            return LinearQosScheme(float(params["k"]), float(params["c1"]))
        if mechanism == "log":
            return LogQosScheme(float(params["k"]), float(params["c1"]))
        if mechanism == "reservation":
            return ReservationScheme(
                *(float(params[n]) for n in ("k1", "k2", "c1", "c2", "c3"))
            )
    except KeyError as exc:
        raise ParameterError(f"missing scheme parameter {exc.args[0]!r}") from None
    raise ParameterError(f"unknown mechanism {mechanism!r}")
