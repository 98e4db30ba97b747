"""Finite-capacity sequential reservations.

Users arrive one at a time, report a usage probability and buy a reservation
option.  The first ``m`` users are certain to be served and get a ``q = 1``
option.  User ``k > m`` is served only if fewer than ``m`` earlier users
claim, so the coordinator quotes

    q_k = P(X_{k-1} <= m - 1),   X_{k-1} = sum of Bernoulli(p_i), i < k,

which for ``k = m + 1`` is ``1 - p_1 ... p_m``.  Period 2 serves claimants in
arrival order until capacity runs out; denied claimants are compensated.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigError, StateError
from .mechanisms import Quote, ReservationScheme, check_probability

#: Sigma of the normal approximation used to flag miscalibrated quotes.
CALIBRATION_SIGMAS = 4.0


class PoissonBinomialTable:
    """Distribution of the number of successes among independent Bernoullis.

    ``pmf[j] = P(X_n = j)``; :meth:`append` extends the table by one trial.
    """

    def __init__(self, probabilities=()):
        self.probabilities: list[float] = []
        self.pmf = np.ones(1)
        for p in probabilities:
            self.append(p)

    def append(self, p: float) -> None:
        p = check_probability(p, "p")
        row = np.zeros(len(self.pmf) + 1)
        row[:-1] = self.pmf * (1.0 - p)
        row[1:] += self.pmf * p
        self.pmf = row
        self.probabilities.append(p)

    def cdf(self, j: int) -> float:
        """``P(X_n <= j)``."""
        if j < 0:
            return 0.0
        return float(self.pmf[: j + 1].sum())

    def __len__(self):
        return len(self.probabilities)


def _truncated_step(row, p):
    """Advance ``P(X = j), j < len(row)`` by one trial, dropping mass at the top."""
    out = row * (1.0 - p)
    out[1:] += row[:-1] * p
    return out


def qos_for_arrival(k: int, reported, capacity: int) -> float:
    """Quoted QoS for the ``k``-th arrival (1-based), in ``O(k m)``."""
    if k < 1:
        raise ConfigError(f"arrival index must be >= 1, got {k}")
    if capacity < 1:
        raise ConfigError(f"capacity must be >= 1, got {capacity}")
    earlier = list(reported)[: k - 1]
    if len(earlier) < k - 1:
        raise ConfigError(f"need {k - 1} earlier reports, got {len(earlier)}")
    check_probability(np.asarray(earlier, dtype=float), "p_reported")
    if k <= capacity:
        return 1.0
    row = np.zeros(capacity)
    row[0] = 1.0
    for p in earlier:
        row = _truncated_step(row, p)
    return float(row.sum())


@dataclass(frozen=True)
class Arrival:
    index: int
    p_reported: float
    q_quoted: float
    quote: Quote


@dataclass(frozen=True)
class Settlement:
    index: int
    claimed: bool
    served: bool
    premium: float
    usage_payment: float
    compensation: float

    @property
    def net_paid(self) -> float:
        """User-to-provider transfer over both periods."""
        return self.premium + self.usage_payment - self.compensation


@dataclass
class CapacityLedger:
    capacity: int
    scheme: ReservationScheme
    arrivals: list[Arrival] = field(default_factory=list)
    settlement: list[Settlement] | None = None

    def __post_init__(self):
        if int(self.capacity) < 1:
            raise ConfigError(f"capacity must be >= 1, got {self.capacity}")
        self.capacity = int(self.capacity)
        # P(j earlier claimants), j < capacity; updated per arrival
        self._row = np.zeros(self.capacity)
        self._row[0] = 1.0

    def next_q(self) -> float:
        if len(self.arrivals) < self.capacity:
            return 1.0
        return float(self._row.sum())

    @property
    def quoted(self) -> list[float]:
        return [a.q_quoted for a in self.arrivals]


def sequential_quote(ledger: CapacityLedger, p_reported: float,
                     index: int | None = None) -> tuple[float, Quote]:
    """Quote the next arrival and append it to the ledger."""
    if ledger.settlement is not None:
        raise StateError("ledger already settled")
    expected = len(ledger.arrivals) + 1
    if index is not None and index != expected:
        raise StateError(f"arrival index {index} out of order; expected {expected}")
    p = check_probability(p_reported, "p_reported")
    q = ledger.next_q()
    quote = ledger.scheme.quote(p, q)
    ledger.arrivals.append(Arrival(expected, p, q, quote))
    ledger._row = _truncated_step(ledger._row, p)
    return q, quote


def build_ledger(scheme: ReservationScheme, capacity: int, reports) -> CapacityLedger:
    ledger = CapacityLedger(capacity, scheme)
    for p in reports:
        sequential_quote(ledger, p)
    return ledger


def settle_period2(ledger: CapacityLedger, needs) -> list[Settlement]:
    """Serve claimants in arrival order while capacity remains."""
    needs = [bool(x) for x in needs]
    if len(needs) != len(ledger.arrivals):
        raise StateError(f"{len(needs)} needs for {len(ledger.arrivals)} arrivals")
    used = 0
    out = []
    for arrival, claims in zip(ledger.arrivals, needs):
        quote = arrival.quote
        served = claims and used < ledger.capacity
        used += served
        out.append(Settlement(
            arrival.index, claims, served, quote.premium,
            quote.usage_price if served else 0.0,
            quote.compensation if claims and not served else 0.0,
        ))
    ledger.settlement = out
    return out


@dataclass(frozen=True)
class UserRow:
    user_index: int
    p_true: float
    p_reported: float
    q_quoted: float
    claims: int
    served: int
    mean_transfers: float  # mean user-to-provider payment per trial

    @property
    def empirical_served_given_claim(self) -> float:
        return self.served / self.claims if self.claims else float("nan")

    @property
    def se(self) -> float:
        """Standard error of the served rate if the quote were exact."""
        if not self.claims:
            return float("nan")
        return float(np.sqrt(self.q_quoted * (1.0 - self.q_quoted) / self.claims))

    @property
    def flagged(self) -> bool:
        if not self.claims:
            return False
        gap = abs(self.empirical_served_given_claim - self.q_quoted)
        return gap > CALIBRATION_SIGMAS * self.se


@dataclass
class OverbookingReport:
    capacity: int
    trials: int
    users: list[UserRow]
    premiums_total: float
    revenue: np.ndarray = field(repr=False)  # per-trial net provider revenue
    mean_compensation: float = 0.0
    mean_usage_revenue: float = 0.0

    @property
    def flagged_users(self) -> list[int]:
        return [u.user_index for u in self.users if u.flagged]

    def revenue_summary(self) -> dict:
        r = self.revenue
        q05, q50, q95 = np.quantile(r, [0.05, 0.5, 0.95])
        return {
            "mean": float(r.mean()),
            "std": float(r.std(ddof=1)) if len(r) > 1 else 0.0,
            "min": float(r.min()),
            "p05": float(q05),
            "median": float(q50),
            "p95": float(q95),
            "max": float(r.max()),
        }


def overbooking_campaign(p_true, capacity: int, scheme: ReservationScheme,
                         trials: int, seed: int, p_reported=None,
                         stream: int = 0) -> OverbookingReport:
    """Quote every user once, then settle ``trials`` seeded claim patterns.

    Reports default to the truth; pass ``p_reported`` to study deviations.
    """
    p_true = [check_probability(p, "p_true") for p in p_true]
    if not p_true:
        raise ConfigError("need at least one user")
    if int(capacity) < 1:
        raise ConfigError(f"capacity must be >= 1, got {capacity}")
    if int(trials) < 1:
        raise ConfigError(f"trials must be >= 1, got {trials}")
    if seed is None:
        raise ConfigError("a seed is required for stochastic runs")
    reports = list(p_true) if p_reported is None else list(p_reported)
    if len(reports) != len(p_true):
        raise ConfigError("p_reported and p_true differ in length")
    ledger = build_ledger(scheme, capacity, reports)
    premium = np.array([a.quote.premium for a in ledger.arrivals])
    usage = np.array([a.quote.usage_price for a in ledger.arrivals])
    comp = np.array([a.quote.compensation for a in ledger.arrivals])

    key = kernels.derive_key(int(seed), stream)
    claims, served, period2 = kernels.overbook(key, int(trials), p_true, capacity, usage, comp)
    premiums_total = float(premium.sum())
    denied = claims - served
    users = [
        UserRow(
            a.index, p_true[i], a.p_reported, a.q_quoted, int(claims[i]), int(served[i]),
            float(premium[i] + (served[i] * usage[i] - denied[i] * comp[i]) / trials),
        )
        for i, a in enumerate(ledger.arrivals)
    ]
    return OverbookingReport(
        int(capacity), int(trials), users, premiums_total, premiums_total + period2,
        float(np.dot(denied, comp) / trials), float(np.dot(served, usage) / trials),
    )
