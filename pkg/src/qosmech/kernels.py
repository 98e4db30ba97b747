"""Monte Carlo inner loops, compiled with numba or run as plain numpy.

The backend is picked at import from ``QOSMECH_BACKEND`` (``numba`` or
``numpy``; default ``numba`` when it imports) and can be switched later with
:func:`set_backend`.  Both backends draw from the same counter-based stream,
so they return bit-identical results, and so do any thread counts: every
uniform is a pure function of ``(key, trial, draw)`` and all cross-trial
reductions are integer counts or fixed-order sums.

Stream: SplitMix64.  ``u(key, trial, draw) = mix(mix(key + (trial+1) G) +
(draw+1) G) >> 11`` scaled to [0, 1), with ``G`` the 64-bit golden gamma.
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba
    from numba import njit, prange

    HAVE_NUMBA = True
    if "NUMBA_THREADING_LAYER" not in os.environ:
        # the bundled TBB is often too old and warns on every first launch
        numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

_MASK = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB

#: Trials per work unit.  Fixed, so partial counts never depend on threads.
CHUNK = 1 << 14

_U_GAMMA = np.uint64(_GAMMA)
_U_M1 = np.uint64(_M1)
_U_M2 = np.uint64(_M2)
_S30, _S27, _S31, _S11 = (np.uint64(s) for s in (30, 27, 31, 11))
_ONE = np.uint64(1)
_TO_UNIT = 2.0 ** -53


def _mix_int(z: int) -> int:
    z &= _MASK
    z = ((z ^ (z >> 30)) * _M1) & _MASK
    z = ((z ^ (z >> 27)) * _M2) & _MASK
    return z ^ (z >> 31)


def derive_key(seed: int, *labels: int) -> int:
    """64-bit stream key for ``seed``, optionally split by integer labels."""
    if seed < 0:
        raise ValueError(f"seed must be nonnegative, got {seed}")
    z = _mix_int(seed + _GAMMA)
    for label in labels:
        z = _mix_int(z ^ _mix_int(label + 2 * _GAMMA))
    return z


# ---------------------------------------------------------------------------
# numpy backend


def _mix_np(z):
    z = (z ^ (z >> _S30)) * _U_M1
    z = (z ^ (z >> _S27)) * _U_M2
    return z ^ (z >> _S31)


def uniforms_np(key: int, trials, draw: int) -> np.ndarray:
    """Uniforms for the given trial indices at a fixed draw slot."""
    t = np.asarray(trials, dtype=np.uint64)
    s = _mix_np(np.uint64(key) + (t + _ONE) * _U_GAMMA)
    z = _mix_np(s + np.uint64(((draw + 1) * _GAMMA) & _MASK))
    return (z >> _S11).astype(np.float64) * _TO_UNIT


def _chunks(trials):
    for start in range(0, trials, CHUNK):
        yield np.arange(start, min(start + CHUNK, trials), dtype=np.uint64)


def qos_available_count_np(key, trials, q):
    return int(sum(np.count_nonzero(uniforms_np(key, t, 0) < q) for t in _chunks(trials)))


def reservation_counts_np(key, trials, p, q):
    counts = np.zeros(4, dtype=np.int64)
    for t in _chunks(trials):
        need = uniforms_np(key, t, 0) < p
        avail = uniforms_np(key, t, 1) < q
        counts += np.bincount(2 * need + avail, minlength=4)
    return counts


def overbook_np(key, trials, p_true, capacity, usage_price, compensation):
    n = len(p_true)
    claims = np.zeros(n, dtype=np.int64)
    served = np.zeros(n, dtype=np.int64)
    revenue = np.empty(trials, dtype=np.float64)
    for t in _chunks(trials):
        used = np.zeros(len(t), dtype=np.int64)
        rev = np.zeros(len(t), dtype=np.float64)
        for i in range(n):
            claim = uniforms_np(key, t, i) < p_true[i]
            serve = claim & (used < capacity)
            deny = claim & ~serve
            used += serve
            rev = rev + np.where(serve, usage_price[i], 0.0)
            rev = rev - np.where(deny, compensation[i], 0.0)
            claims[i] += np.count_nonzero(claim)
            served[i] += np.count_nonzero(serve)
        revenue[int(t[0]):int(t[0]) + len(t)] = rev
    return claims, served, revenue


# ---------------------------------------------------------------------------
# numba backend

if HAVE_NUMBA:

    @njit(cache=True, inline="always")
    def _mix_nb(z):
        z = (z ^ (z >> _S30)) * _U_M1
        z = (z ^ (z >> _S27)) * _U_M2
        return z ^ (z >> _S31)

    @njit(cache=True, inline="always")
    def _uniform_nb(key, trial, draw):
        s = _mix_nb(key + np.uint64(trial + 1) * _U_GAMMA)
        z = _mix_nb(s + np.uint64(draw + 1) * _U_GAMMA)
        return np.float64(z >> _S11) * _TO_UNIT

    @njit(cache=True)
    def uniforms_nb(key, trials, draw):
        k = np.uint64(key)
        out = np.empty(trials.size, dtype=np.float64)
        for i in range(trials.size):
            out[i] = _uniform_nb(k, trials[i], draw)
        return out

    @njit(cache=True, parallel=True)
    def _qos_count_nb(key, trials, q):
        k = np.uint64(key)
        n_chunks = (trials + CHUNK - 1) // CHUNK
        part = np.zeros(n_chunks, dtype=np.int64)
        for c in prange(n_chunks):
            hits = 0
            for t in range(c * CHUNK, min((c + 1) * CHUNK, trials)):
                if _uniform_nb(k, t, 0) < q:
                    hits += 1
            part[c] = hits
        return part.sum()

    @njit(cache=True, parallel=True)
    def _reservation_counts_nb(key, trials, p, q):
        k = np.uint64(key)
        n_chunks = (trials + CHUNK - 1) // CHUNK
        part = np.zeros((n_chunks, 4), dtype=np.int64)
        for c in prange(n_chunks):
            for t in range(c * CHUNK, min((c + 1) * CHUNK, trials)):
                need = 1 if _uniform_nb(k, t, 0) < p else 0
                avail = 1 if _uniform_nb(k, t, 1) < q else 0
                part[c, 2 * need + avail] += 1
        return part.sum(axis=0)

    @njit(cache=True, parallel=True)
    def _overbook_nb(key, trials, p_true, capacity, usage_price, compensation):
        k = np.uint64(key)
        n = p_true.size
        n_chunks = (trials + CHUNK - 1) // CHUNK
        claims = np.zeros((n_chunks, n), dtype=np.int64)
        served = np.zeros((n_chunks, n), dtype=np.int64)
        revenue = np.empty(trials, dtype=np.float64)
        for c in prange(n_chunks):
            for t in range(c * CHUNK, min((c + 1) * CHUNK, trials)):
                used = 0
                rev = 0.0
                for i in range(n):
                    if _uniform_nb(k, t, i) < p_true[i]:
                        claims[c, i] += 1
                        if used < capacity:
                            used += 1
                            served[c, i] += 1
                            rev = rev + usage_price[i]
                        else:
                            rev = rev - compensation[i]
                revenue[t] = rev
        return claims.sum(axis=0), served.sum(axis=0), revenue


# ---------------------------------------------------------------------------
# dispatch

_BACKEND = "numpy"


def set_backend(name: str) -> None:
    global _BACKEND
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba backend requested but numba is not importable")
    _BACKEND = name


def get_backend() -> str:
    return _BACKEND


def set_threads(n: int | None) -> None:
    """Numba worker threads; ``None`` leaves the current setting."""
    if n is not None and HAVE_NUMBA:
        numba.set_num_threads(int(n))


def get_threads() -> int:
    return numba.get_num_threads() if HAVE_NUMBA else 1


set_backend(os.environ.get("QOSMECH_BACKEND", "numba" if HAVE_NUMBA else "numpy"))


def uniforms(key, trials, draw):
    if _BACKEND == "numba":
        return uniforms_nb(key, np.asarray(trials, dtype=np.int64), draw)
    return uniforms_np(key, trials, draw)


def qos_available_count(key: int, trials: int, q: float) -> int:
    """Number of trials in which the service is delivered (``u < q``)."""
    if _BACKEND == "numba":
        return int(_qos_count_nb(np.uint64(key), trials, q))
    return qos_available_count_np(key, trials, q)


def reservation_counts(key: int, trials: int, p: float, q: float) -> np.ndarray:
    """Trial counts indexed by ``2 * need + available``."""
    if _BACKEND == "numba":
        return _reservation_counts_nb(np.uint64(key), trials, p, q)
    return reservation_counts_np(key, trials, p, q)


def overbook(key, trials, p_true, capacity, usage_price, compensation):
    """Arrival-order settlement of ``trials`` independent claim patterns.

    Returns per-user claim counts, per-user served counts and each trial's
    period-2 revenue (usage payments received minus compensation paid).
    """
    args = (
        np.ascontiguousarray(p_true, dtype=np.float64),
        int(capacity),
        np.ascontiguousarray(usage_price, dtype=np.float64),
        np.ascontiguousarray(compensation, dtype=np.float64),
    )
    if _BACKEND == "numba":
        return _overbook_nb(np.uint64(key), trials, *args)
    return overbook_np(key, trials, *args)
