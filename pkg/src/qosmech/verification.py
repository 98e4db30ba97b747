"""Numerical oracles for truth-telling and incentive compatibility.

Nothing here uses the closed-form ``w`` or ``q0`` expressions from
:mod:`qosmech.mechanisms`; every check evaluates the raw premium,
compensation and usage-price functions and searches over reports.
The analytic values appear only as comparison columns in the reports.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import EvaluationError, ParameterError
from .mechanisms import (
    MarketParams,
    ReservationScheme,
    check_probability,
    expected_cost_protocol,
    provider_income,
)

DEFAULT_STEPS = 101
ACCEPTANCE_STEPS = 1001

_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class GridSpec:
    lower: float = 0.0
    upper: float = 1.0
    steps: int = DEFAULT_STEPS

    def __post_init__(self):
        check_probability(self.lower, "grid.lower")
        check_probability(self.upper, "grid.upper")
        if not self.lower < self.upper:
            raise ParameterError(f"grid needs lower < upper, got {self.lower}, {self.upper}")
        if int(self.steps) != self.steps or self.steps < 3:
            raise ParameterError(f"grid needs an integer steps >= 3, got {self.steps}")

    @property
    def step(self) -> float:
        return (self.upper - self.lower) / (self.steps - 1)

    def points(self) -> np.ndarray:
        return np.linspace(self.lower, self.upper, int(self.steps))


def _evaluate(fn, xs):
    ys = np.asarray(fn(xs), dtype=float)
    if ys.shape != xs.shape:
        ys = np.array([float(fn(float(x))) for x in xs])
    bad = ~np.isfinite(ys)
    if bad.any():
        where = float(xs[np.argmax(bad)])
        raise EvaluationError(f"non-finite income at q'={where!r}", where=where)
    return ys


def _scalar(fn, x):
    y = float(fn(x))
    if not math.isfinite(y):
        raise EvaluationError(f"non-finite income at q'={x!r}", where=x)
    return y


def golden_section_max(fn, a, b, tol=1e-10, max_iter=200):
    """Maximise a unimodal ``fn`` on ``[a, b]``; returns ``(x, fn(x))``."""
    x1 = b - _INV_PHI * (b - a)
    x2 = a + _INV_PHI * (b - a)
    f1, f2 = _scalar(fn, x1), _scalar(fn, x2)
    for _ in range(max_iter):
        if b - a <= tol:
            break
        if f1 >= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - _INV_PHI * (b - a)
            f1 = _scalar(fn, x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + _INV_PHI * (b - a)
            f2 = _scalar(fn, x2)
    x = 0.5 * (a + b)
    return x, _scalar(fn, x)


@dataclass(frozen=True)
class BestResponse:
    argmax: float
    value: float
    grid_index: int
    ambiguous: bool  # two non-adjacent grid cells tie for the maximum


def best_response_search(income: Callable, grid: GridSpec) -> BestResponse:
    """Coarse grid scan, then golden-section refinement in the best bracket.

    ``income`` should accept an ndarray of reports; scalar-only callables
    are tolerated.  Exact ties resolve to the smallest report.
    """
    xs = grid.points()
    ys = _evaluate(income, xs)
    i = int(np.argmax(ys))
    best = float(ys[i])
    tied = np.flatnonzero(ys >= best - 1e-12 * max(1.0, abs(best)))
    ambiguous = bool(np.any(np.abs(tied - i) > 1))

    lo = xs[max(i - 1, 0)]
    hi = xs[min(i + 1, len(xs) - 1)]
    x, fx = golden_section_max(income, lo, hi)
    if fx > best:
        return BestResponse(float(x), fx, i, ambiguous)
    return BestResponse(float(xs[i]), best, i, ambiguous)


def best_response_report(income: Callable, grid: GridSpec) -> float:
    """The maximising report of ``income`` over ``grid``, to within 1e-6."""
    return best_response_search(income, grid).argmax


# ---------------------------------------------------------------------------
# QoS truth-telling


@dataclass(frozen=True)
class TruthRecord:
    q_true: float
    q_best_response: float
    income_gap: float  # truthful income minus best off-truth grid income


@dataclass
class TruthTellingReport:
    records: list[TruthRecord]
    grid_step: float
    passed: bool
    max_deviation: float

    def failures(self) -> list[TruthRecord]:
        return [
            r for r in self.records
            if abs(r.q_best_response - r.q_true) > self.grid_step or r.income_gap <= 0
        ]


@dataclass(frozen=True)
class TabulatedScheme:
    """Arbitrary premium/compensation tables, linearly interpolated.

    Lets the oracles be pointed at schemes that are not truth-telling.
    """

    q: tuple
    g: tuple
    h: tuple

    kind = "tabulated"
    domain_upper = 1.0

    def __post_init__(self):
        if not (len(self.q) == len(self.g) == len(self.h) >= 2):
            raise ParameterError("tabulated scheme needs equal-length q, g, h (>= 2 rows)")
        if np.any(np.diff(self.q) <= 0):
            raise ParameterError("tabulated q must be strictly increasing")

    def premium(self, q):
        return np.interp(q, self.q, self.g)

    def compensation(self, q):
        return np.interp(q, self.q, self.h)

    def check(self, q, name="q"):
        return check_probability(q, name)

    def ic_lower_bound(self, market):
        raise ParameterError("tabulated scheme has no closed-form q0")

    def violations(self, market):
        return []


def _default_grid(scheme) -> GridSpec:
    return GridSpec(0.0, scheme.domain_upper, DEFAULT_STEPS)


def check_truth_telling_qos(scheme, market: MarketParams | None = None,
                            grid: GridSpec | None = None) -> TruthTellingReport:
    """Best response of the provider at every true QoS on the grid."""
    grid = grid or _default_grid(scheme)
    xs = grid.points()
    g_grid = scheme.premium(xs)
    h_grid = scheme.compensation(xs)
    records = []
    for j, q in enumerate(xs):
        q = float(q)

        def income(q_rep, q=q):
            return provider_income(scheme.premium(q_rep), scheme.compensation(q_rep), q)

        br = best_response_report(income, grid)
        incomes = provider_income(g_grid, h_grid, q)
        others = np.delete(incomes, j)
        records.append(TruthRecord(q, br, float(incomes[j] - others.max())))
    max_dev = max(abs(r.q_best_response - r.q_true) for r in records)
    passed = all(
        abs(r.q_best_response - r.q_true) <= grid.step and r.income_gap > 0
        for r in records
    )
    return TruthTellingReport(records, grid.step, passed, max_dev)


# ---------------------------------------------------------------------------
# incentive-compatible regions


def _runs(mask):
    """Index ranges ``(start, stop_inclusive)`` of consecutive True cells."""
    out = []
    start = None
    for i, m in enumerate(mask):
        if m and start is None:
            start = i
        elif not m and start is not None:
            out.append((start, i - 1))
            start = None
    if start is not None:
        out.append((start, len(mask) - 1))
    return out


def _bisect_edge(pred, bad, good, iters=80):
    """Boundary between a failing point ``bad`` and a passing point ``good``."""
    for _ in range(iters):
        mid = 0.5 * (bad + good)
        if mid in (bad, good):
            break
        if pred(mid):
            good = mid
        else:
            bad = mid
    return good


@dataclass
class IcIntervalReport:
    grid: np.ndarray
    mask: np.ndarray
    intervals: list[tuple[float, float]]  # grid endpoints of maximal runs
    refined: list[tuple[float, float]]  # same runs, interior edges bisected
    grid_step: float
    scanned_q0: float | None  # refined lower edge of the run reaching the top
    analytic_q0: float | None

    @property
    def endpoint_gap(self) -> float | None:
        if self.scanned_q0 is None or self.analytic_q0 is None:
            return None
        return self.analytic_q0 - self.scanned_q0

    @property
    def contains_analytic(self) -> bool:
        """Whether the analytic ``[q0, upper]`` lies inside the scanned run."""
        if self.analytic_q0 is None:
            return True
        if self.scanned_q0 is None:
            return self.analytic_q0 > self.grid[-1]
        return self.scanned_q0 <= self.analytic_q0 + self.grid_step


def scan_ic_interval(scheme, market: MarketParams,
                     grid: GridSpec | None = None) -> IcIntervalReport:
    """Where ``c <= w(q) <= q v`` holds, with ``w`` taken from truthful play."""
    grid = grid or _default_grid(scheme)
    xs = grid.points()

    def ok(q):
        w = provider_income(scheme.premium(q), scheme.compensation(q), q)
        return (market.c <= w) & (w <= q * market.v)

    mask = np.asarray(ok(xs), dtype=bool)
    intervals, refined = [], []
    for s, e in _runs(mask):
        intervals.append((float(xs[s]), float(xs[e])))
        lo = _bisect_edge(ok, xs[s - 1], xs[s]) if s > 0 else xs[s]
        hi = _bisect_edge(ok, xs[e + 1], xs[e]) if e < len(xs) - 1 else xs[e]
        refined.append((float(lo), float(hi)))
    scanned = refined[-1][0] if mask[-1] else None
    try:
        analytic = float(scheme.ic_lower_bound(market))
    except ParameterError:
        analytic = None
    return IcIntervalReport(xs, mask, intervals, refined, grid.step, scanned, analytic)


@dataclass
class IcRegionReport:
    grid: np.ndarray
    mask: np.ndarray  # mask[i, j] is the cell (p = grid[i], q = grid[j])
    p0: float | None
    q0: float | None

    @property
    def empty(self) -> bool:
        return self.p0 is None

    @property
    def area_cells(self) -> int:
        if self.empty:
            return 0
        n = len(self.grid)
        i0 = int(np.searchsorted(self.grid, self.p0))
        j0 = int(np.searchsorted(self.grid, self.q0))
        return (n - i0) * (n - j0)


def _grow_corner(mask, p_first):
    n_p, n_q = mask.shape
    i0, j0 = n_p - 1, n_q - 1
    axes = ("p", "q") if p_first else ("q", "p")
    stuck = 0
    turn = 0
    while stuck < 2:
        axis = axes[turn % 2]
        turn += 1
        if axis == "p" and i0 > 0 and mask[i0 - 1, j0:].all():
            i0 -= 1
            stuck = 0
        elif axis == "q" and j0 > 0 and mask[i0:, j0 - 1].all():
            j0 -= 1
            stuck = 0
        else:
            stuck += 1
    return i0, j0


def corner_rectangle(mask) -> tuple[int, int] | None:
    """Largest of the two greedy rectangles anchored at the top corner.

    Returns start indices ``(i0, j0)`` or ``None`` if the corner cell fails.
    """
    if not mask[-1, -1]:
        return None
    n_p, n_q = mask.shape
    best = None
    for p_first in (True, False):
        i0, j0 = _grow_corner(mask, p_first)
        area = (n_p - i0) * (n_q - j0)
        if best is None or area > best[0]:
            best = (area, i0, j0)
    return best[1], best[2]


def scan_ic_region(scheme: ReservationScheme, market: MarketParams,
                   grid: GridSpec | None = None) -> IcRegionReport:
    """Mask of ``c p <= w(p, q) <= v p q`` and the corner rectangle inside it."""
    grid = grid or GridSpec()
    xs = grid.points()
    P, Q = np.meshgrid(xs, xs, indexing="ij")
    w = expected_cost_protocol(scheme, P, Q, P, Q)
    mask = (market.c * P <= w) & (w <= market.v * P * Q)
    rect = corner_rectangle(mask)
    if rect is None:
        return IcRegionReport(xs, mask, None, None)
    return IcRegionReport(xs, mask, float(xs[rect[0]]), float(xs[rect[1]]))


# ---------------------------------------------------------------------------
# reservation saddle point


@dataclass
class SaddleReport:
    passed: bool
    p_true: float
    q_true: float
    cost_at_truth: float
    max_gain_q: float  # worst EC(p, q') - EC(p, q); must be <= 0
    max_gain_p: float  # worst EC(p, q) - EC(p', q); must be <= 0
    witness_axis: str | None = None
    witness_report: float | None = None
    witness_gap: float | None = None


def check_saddle(scheme: ReservationScheme, market: MarketParams | None,
                 p_true: float, q_true: float,
                 grid: GridSpec | None = None) -> SaddleReport:
    """``EC(p, q') <= EC(p, q) <= EC(p', q)`` over every grid report."""
    grid = grid or GridSpec()
    p = check_probability(p_true, "p_true")
    q = check_probability(q_true, "q_true")
    xs = grid.points()
    ec0 = float(expected_cost_protocol(scheme, p, q, p, q))
    gain_q = expected_cost_protocol(scheme, p, q, p, xs) - ec0
    gain_p = ec0 - expected_cost_protocol(scheme, p, q, xs, q)
    tol = 1e-10 * (1.0 + abs(ec0))
    iq, ip = int(np.argmax(gain_q)), int(np.argmax(gain_p))
    report = SaddleReport(True, p, q, ec0, float(gain_q[iq]), float(gain_p[ip]))
    if gain_q[iq] > tol and gain_q[iq] >= gain_p[ip]:
        report.passed = False
        report.witness_axis, report.witness_report, report.witness_gap = "q", float(xs[iq]), float(gain_q[iq])
    elif gain_p[ip] > tol:
        report.passed = False
        report.witness_axis, report.witness_report, report.witness_gap = "p", float(xs[ip]), float(gain_p[ip])
    return report
