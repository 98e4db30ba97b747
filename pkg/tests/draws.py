"""Random valid parameter draws shared by property and acceptance tests."""

import numpy as np

from qosmech.mechanisms import (
    LinearQosScheme,
    LogQosScheme,
    MarketParams,
    ReservationScheme,
    validate,
)


def qos_draw(rng, kind):
    """A (scheme, market) pair satisfying c <= c1 <= v - k."""
    v = rng.uniform(1.0, 20.0)
    c = rng.uniform(0.0, 0.5 * v)
    k = rng.uniform(0.05, 1.0) * (v - c)
    lo, hi = max(c, 1e-3), v - k
    c1 = rng.uniform(lo, hi) if hi > lo else hi
    cls = LinearQosScheme if kind == "linear" else LogQosScheme
    scheme, market = cls(k, c1), MarketParams(v, c)
    if not validate(scheme, market).ok:
        return qos_draw(rng, kind)
    return scheme, market


def reservation_draw(rng):
    c = rng.uniform(0.0, 1.0)
    k1, k2, c3 = rng.uniform(0.1, 2.0, size=3)
    c1 = c3 + c + rng.uniform(0.01, 2.0)
    c2 = 2.0 * k1 + rng.uniform(0.0, 2.0)
    scheme = ReservationScheme(k1, k2, c1, c2, c3)
    market = MarketParams(scheme.corner_cost() + rng.uniform(0.1, 10.0), c)
    assert validate(scheme, market).ok
    return scheme, market


def rng_for(seed):
    return np.random.default_rng(seed)
