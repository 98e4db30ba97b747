"""Seeded Monte Carlo of single QoS exchanges and two-period reservations.

A campaign never materialises per-trial utilities.  Each trial falls into
one of a handful of outcome cells (delivered or not, needed or not), the
kernels count the cells, and means and variances follow exactly from the
counts and the per-cell utilities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConfigError
from .mechanisms import (
    MarketParams,
    ReservationScheme,
    check_probability,
    expected_cost_protocol,
    provider_income,
    reservation_expected_cost,
)
from .verification import GridSpec, best_response_report

Z95 = 1.96


@dataclass(frozen=True)
class ReportStrategy:
    kind: str = "truthful"  # truthful | fixed | best_response
    value: float | None = None

    def __post_init__(self):
        if self.kind not in ("truthful", "fixed", "best_response"):
            raise ConfigError(f"unknown strategy {self.kind!r}")
        if self.kind == "fixed":
            if self.value is None:
                raise ConfigError("fixed strategy needs a report value")
            check_probability(self.value, "fixed report")

    @classmethod
    def parse(cls, spec) -> "ReportStrategy":
        """Accepts ``"truthful"``, ``"best_response"``, ``{"fixed": x}`` or ``"fixed:x"``."""
        if spec is None:
            return cls()
        if isinstance(spec, ReportStrategy):
            return spec
        if isinstance(spec, dict):
            if set(spec) != {"fixed"}:
                raise ConfigError(f"bad strategy {spec!r}")
            return cls("fixed", float(spec["fixed"]))
        if isinstance(spec, str) and spec.startswith("fixed:"):
            return cls("fixed", float(spec.split(":", 1)[1]))
        if isinstance(spec, str):
            return cls(spec)
        raise ConfigError(f"bad strategy {spec!r}")

    @property
    def label(self) -> str:
        return f"fixed({self.value:g})" if self.kind == "fixed" else self.kind


TRUTHFUL = ReportStrategy()


@dataclass(frozen=True)
class ProviderAgent:
    q_true: float
    cost_c: float = 0.0
    strategy: ReportStrategy = TRUTHFUL

    def __post_init__(self):
        check_probability(self.q_true, "q_true")
        if self.cost_c < 0:
            raise ConfigError(f"provider cost must be nonnegative, got {self.cost_c}")


@dataclass(frozen=True)
class UserAgent:
    p_true: float
    value_v: float
    strategy: ReportStrategy = TRUTHFUL

    def __post_init__(self):
        check_probability(self.p_true, "p_true")
        if not self.value_v > 0:
            raise ConfigError(f"user value must be positive, got {self.value_v}")


class RngStream:
    """Counter-based stream: trial ``t``, draw ``d`` is a pure function of the seed."""

    def __init__(self, seed: int, label: int = 0):
        self.seed = int(seed)
        self.label = int(label)
        self.key = kernels.derive_key(self.seed, self.label)

    def uniform(self, trial: int, draw: int) -> float:
        return float(kernels.uniforms_np(self.key, np.array([trial]), draw)[0])


@dataclass(frozen=True)
class TrialOutcome:
    q_reported: float
    p_reported: float | None
    service_available: bool
    user_needs: bool
    premium: float
    usage_payment: float
    compensation: float
    u_user: float
    u_provider: float

    @property
    def paid_by_user(self) -> float:
        return self.premium + self.usage_payment - self.compensation

    @property
    def received_by_provider(self) -> float:
        return self.premium + self.usage_payment - self.compensation


# ---------------------------------------------------------------------------
# report resolution


def _grid_for(scheme) -> GridSpec:
    return GridSpec(0.0, getattr(scheme, "domain_upper", 1.0))


def qos_report(scheme, provider: ProviderAgent) -> float:
    s = provider.strategy
    if s.kind == "truthful":
        return scheme.check(provider.q_true, "q_true")
    if s.kind == "fixed":
        return scheme.check(s.value, "q_reported")
    q = provider.q_true

    def income(q_rep):
        return provider_income(scheme.premium(q_rep), scheme.compensation(q_rep), q)

    return best_response_report(income, _grid_for(scheme))


def reservation_reports(scheme: ReservationScheme, provider: ProviderAgent,
                        user: UserAgent) -> tuple[float, float]:
    """``(p', q')``.  A best-responding provider answers the user's
    non-strategic report (or the truth), then a best-responding user
    answers the provider's final report."""
    p, q = user.p_true, provider.q_true
    p_rep = user.strategy.value if user.strategy.kind == "fixed" else p
    if provider.strategy.kind == "best_response":
        q_rep = best_response_report(
            lambda qr: expected_cost_protocol(scheme, p, q, p_rep, qr), GridSpec()
        )
    else:
        q_rep = provider.strategy.value if provider.strategy.kind == "fixed" else q
    if user.strategy.kind == "best_response":
        p_rep = best_response_report(
            lambda pr: -expected_cost_protocol(scheme, p, q, pr, q_rep), GridSpec()
        )
    return float(p_rep), float(q_rep)


# ---------------------------------------------------------------------------
# single trials


def _qos_cells(scheme, q_rep, v, c):
    """Per-cell ``(u_user, u_provider)`` for failure (0) and delivery (1)."""
    g = float(scheme.premium(q_rep))
    h = float(scheme.compensation(q_rep))
    return g, h, ((-g + h, g - h - c), (v - g, g - c))


def simulate_qos_exchange(scheme, provider: ProviderAgent, user_value: float,
                          rng_stream: RngStream, trial: int = 0) -> TrialOutcome:
    q_rep = qos_report(scheme, provider)
    g, h, cells = _qos_cells(scheme, q_rep, user_value, provider.cost_c)
    avail = rng_stream.uniform(trial, 0) < provider.q_true
    comp = 0.0 if avail else h
    u_user, u_prov = cells[int(avail)]
    return TrialOutcome(q_rep, None, avail, True, g, 0.0, comp, u_user, u_prov)


def _reservation_cells(scheme, p_rep, q_rep, v, c):
    """Per-cell utilities indexed by ``2 * need + available``.

    The provider is charged ``c p'`` for preparing what was reported.
    """
    g = float(scheme.premium(p_rep, q_rep))
    f = float(scheme.usage_price(p_rep))
    h = float(scheme.compensation(p_rep, q_rep))
    cost = c * p_rep
    fail = (-g + h, g - h - cost)
    idle = (-g, g - cost)
    used = (v - g - f, g + f - cost)
    return g, f, h, (fail, idle, fail, used)


def simulate_reservation(scheme: ReservationScheme, provider: ProviderAgent,
                         user: UserAgent, rng_stream: RngStream,
                         trial: int = 0) -> TrialOutcome:
    p_rep, q_rep = reservation_reports(scheme, provider, user)
    g, f, h, cells = _reservation_cells(scheme, p_rep, q_rep, user.value_v, provider.cost_c)
    need = rng_stream.uniform(trial, 0) < user.p_true
    avail = rng_stream.uniform(trial, 1) < provider.q_true
    u_user, u_prov = cells[2 * need + avail]
    return TrialOutcome(
        q_rep, p_rep, avail, need, g,
        f if (avail and need) else 0.0,
        0.0 if avail else h,
        u_user, u_prov,
    )


# ---------------------------------------------------------------------------
# campaigns


@dataclass
class CampaignConfig:
    mechanism: str
    scheme: object
    market: MarketParams
    q_true: float
    p_true: float | None = None
    provider_strategy: ReportStrategy = TRUTHFUL
    user_strategy: ReportStrategy = TRUTHFUL
    trials: int = 100_000
    seed: int | None = None
    stream: int = 0


def _cell_stats(counts, values):
    n = int(sum(counts))
    mean = math.fsum(k * u for k, u in zip(counts, values)) / n
    if n < 2:
        return mean, 0.0
    ss = math.fsum(k * (u - mean) ** 2 for k, u in zip(counts, values))
    return mean, ss / (n - 1)


@dataclass
class CampaignStats:
    mechanism: str
    p_true: float | None
    q_true: float
    p_reported: float | None
    q_reported: float
    strategy_user: str
    strategy_provider: str
    trials: int
    mean_u_user: float
    var_u_user: float
    mean_u_provider: float
    var_u_provider: float
    mean_u_total: float
    var_u_total: float
    analytic_u_user: float
    analytic_u_provider: float  # cost c p (true usage probability)
    analytic_u_provider_prepared: float  # cost c p' (what the simulator charges)
    analytic_cost_user: float
    analytic_u_total: float  # report-independent: q v - c  or  p q v - c p
    counts: tuple = field(default=(), repr=False)
    cell_values: tuple = field(default=(), repr=False)

    def se(self, which: str) -> float:
        return math.sqrt(getattr(self, f"var_u_{which}") / self.trials)

    def ci(self, which: str) -> float:
        """95% half-width for ``which`` in {user, provider, total}."""
        return Z95 * self.se(which)

    @property
    def ci_user(self) -> float:
        return self.ci("user")

    @property
    def ci_provider(self) -> float:
        return self.ci("provider")


def run_campaign(config: CampaignConfig) -> CampaignStats:
    if config.trials is None or int(config.trials) < 1:
        raise ConfigError(f"trials must be >= 1, got {config.trials}")
    if config.seed is None:
        raise ConfigError("a seed is required for stochastic runs")
    trials = int(config.trials)
    key = kernels.derive_key(int(config.seed), config.stream)
    m = config.market
    provider = ProviderAgent(config.q_true, m.c, config.provider_strategy)
    q = config.q_true

    if config.mechanism in ("linear", "log"):
        q_rep = qos_report(config.scheme, provider)
        _, _, cells = _qos_cells(config.scheme, q_rep, m.v, m.c)
        avail = kernels.qos_available_count(key, trials, q)
        counts = (trials - avail, avail)
        p_true = p_rep = None
        ec = float(config.scheme.income(q, q_rep))
        a_user = q * m.v - ec
        a_prov = a_prov_prep = ec - m.c
        a_total = q * m.v - m.c
    elif config.mechanism == "reservation":
        if config.p_true is None:
            raise ConfigError("reservation campaign needs p_true")
        user = UserAgent(config.p_true, m.v, config.user_strategy)
        p_true = config.p_true
        p_rep, q_rep = reservation_reports(config.scheme, provider, user)
        _, _, _, cells = _reservation_cells(config.scheme, p_rep, q_rep, m.v, m.c)
        counts = tuple(int(x) for x in kernels.reservation_counts(key, trials, p_true, q))
        ec = float(reservation_expected_cost(config.scheme, p_true, q, p_rep, q_rep))
        a_user = p_true * q * m.v - ec
        a_prov = ec - m.c * p_true
        a_prov_prep = ec - m.c * p_rep
        a_total = p_true * q * m.v - m.c * p_true
    else:
        raise ConfigError(f"unknown mechanism {config.mechanism!r}")

    mu_u, var_u = _cell_stats(counts, [c[0] for c in cells])
    mu_p, var_p = _cell_stats(counts, [c[1] for c in cells])
    mu_t, var_t = _cell_stats(counts, [c[0] + c[1] for c in cells])
    return CampaignStats(
        config.mechanism, p_true, q, p_rep, q_rep,
        config.user_strategy.label if config.mechanism == "reservation" else "",
        config.provider_strategy.label, trials,
        mu_u, var_u, mu_p, var_p, mu_t, var_t,
        a_user, a_prov, a_prov_prep, ec, a_total,
        counts, tuple(cells),
    )


def paired_gap(a: CampaignStats, b: CampaignStats, party: int) -> tuple[float, float]:
    """Mean and standard error of ``u_a - u_b`` under common random numbers.

    ``party`` is 0 for the user, 1 for the provider.  Both campaigns must have
    drawn the same outcome cells (same seed, stream and true probabilities).
    """
    if a.counts != b.counts:
        raise ConfigError("paired comparison needs campaigns on common random numbers")
    diffs = [ca[party] - cb[party] for ca, cb in zip(a.cell_values, b.cell_values)]
    mean, var = _cell_stats(a.counts, diffs)
    return mean, math.sqrt(var / a.trials)
