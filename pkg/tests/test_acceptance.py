"""End-to-end acceptance criteria.

Each test prints one ``[PASS]``/``[FAIL]`` line; the lines are repeated in
the pytest terminal summary.  Run with ``pytest tests/test_acceptance.py -s``.
"""

import itertools
import math
import os
import subprocess
import sys
import time

import numpy as np
import pytest

from qosmech.mechanisms import (
    LinearQosScheme,
    LogQosScheme,
    MarketParams,
    ReservationScheme,
    expected_cost_expanded,
    expected_cost_protocol,
    provider_income,
)
from qosmech.overbooking import overbooking_campaign, qos_for_arrival
from qosmech.simulation import CampaignConfig, run_campaign
from qosmech.verification import (
    ACCEPTANCE_STEPS,
    GridSpec,
    check_saddle,
    check_truth_telling_qos,
    scan_ic_interval,
    scan_ic_region,
)

from draws import qos_draw, reservation_draw, rng_for

pytestmark = pytest.mark.acceptance

MC_TRIALS = 1_000_000
MC_SEED = 20240601


def test_criterion_1_ic_intervals(acceptance_log, linear_fig1, log_fig1, fig1_market):
    t0 = time.perf_counter()
    lin = scan_ic_interval(linear_fig1, fig1_market, GridSpec(0, 1, ACCEPTANCE_STEPS))
    log = scan_ic_interval(log_fig1, fig1_market,
                           GridSpec(0, log_fig1.domain_upper, ACCEPTANCE_STEPS))
    elapsed = time.perf_counter() - t0
    checks = {
        "linear closed form": abs(lin.analytic_q0 - 0.219) <= 1e-3,
        "linear scan": abs(lin.scanned_q0 - 0.219) <= 1e-3 and lin.refined[-1][1] == 1.0,
        "log closed form": abs(log.analytic_q0 - 0.6) <= 1e-3,
        "log scan": abs(log.scanned_q0 - 0.6) <= 1e-3
        and log.refined[-1][1] == log_fig1.domain_upper,
        "runtime": elapsed < 1.0,
    }
    passed = all(checks.values())
    acceptance_log(1, passed,
                   f"linear q0 closed={lin.analytic_q0:.6f} scanned={lin.scanned_q0:.6f}; "
                   f"log q0 closed={log.analytic_q0:.6f} scanned={log.scanned_q0:.6f}; "
                   f"failed={[k for k, ok in checks.items() if not ok]}; {elapsed:.3f}s")
    assert passed, checks


def test_criterion_2_truth_telling(acceptance_log):
    rng = rng_for(2)
    t0 = time.perf_counter()
    worst = {}
    for kind in ("linear", "log"):
        worst[kind] = 0.0
        for _ in range(100):
            scheme, market = qos_draw(rng, kind)
            grid = GridSpec(0, scheme.domain_upper, 101)
            rep = check_truth_telling_qos(scheme, market, grid)
            worst[kind] = max(worst[kind], rep.max_deviation)
    elapsed = time.perf_counter() - t0
    passed = max(worst.values()) <= 1e-4 and elapsed < 10.0
    acceptance_log(2, passed, f"max |q_br - q_true| linear={worst['linear']:.2e} "
                              f"log={worst['log']:.2e}; {elapsed:.2f}s")
    assert passed


def test_criterion_3_saddle(acceptance_log):
    rng = rng_for(3)
    grid = GridSpec(0, 1, 101)
    t0 = time.perf_counter()
    failures = []
    for _ in range(50):
        scheme, market = reservation_draw(rng)
        for p, q in rng.uniform(0, 1, size=(5, 2)):
            rep = check_saddle(scheme, market, p, q, grid)
            if not rep.passed:
                failures.append((scheme, p, q, rep.witness_axis, rep.witness_gap))
    elapsed = time.perf_counter() - t0
    passed = not failures and elapsed < 30.0
    acceptance_log(3, passed, f"250 points, {len(failures)} failures; {elapsed:.2f}s")
    assert passed, failures[:3]


def test_criterion_4_closed_forms(acceptance_log):
    rng = rng_for(4)
    worst_income = 0.0
    for kind in ("linear", "log"):
        scheme, _ = qos_draw(rng, kind)
        qs = np.linspace(0, scheme.domain_upper, 1001)
        got = provider_income(scheme.premium(qs), scheme.compensation(qs), qs)
        k, c1 = scheme.k, scheme.c1
        if kind == "linear":
            want = k * qs**2 + c1
        else:
            want = k * (1 - qs) * np.log1p(-qs) + k * qs + c1
        worst_income = max(worst_income, float(np.max(np.abs(got - want) / np.abs(want))))
    worst_ec = 0.0
    xs = np.linspace(0, 1, 101)
    P, Q = np.meshgrid(xs, xs, indexing="ij")
    for _ in range(5):
        scheme, _ = reservation_draw(rng)
        p, q = rng.uniform(0, 1, size=2)
        a = expected_cost_protocol(scheme, p, q, P, Q)
        b = expected_cost_expanded(scheme, p, q, P, Q)
        worst_ec = max(worst_ec, float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(a)))))
    passed = worst_income <= 1e-9 and worst_ec <= 1e-9
    acceptance_log(4, passed, f"max rel error income={worst_income:.1e} EC paths={worst_ec:.1e}")
    assert passed


@pytest.fixture(scope="module")
def mc_campaigns():
    market = MarketParams(5.0, 1.0)
    res = ReservationScheme(1.0, 1.0, 2.0, 2.0, 1.0)
    res_market = MarketParams(10.0, 1.0)
    cases = (
        [("linear", LinearQosScheme(2.0, 1.0), market, None, q) for q in (0.3, 0.5, 0.9)]
        + [("log", LogQosScheme(2.0, 1.0), market, None, q) for q in (0.7, 0.99)]
        + [("reservation", res, res_market, p, q) for p, q in ((0.5, 0.5), (0.8, 0.9))]
    )
    t0 = time.perf_counter()
    stats = [
        run_campaign(CampaignConfig(mech, scheme, mkt, q, p, trials=MC_TRIALS, seed=MC_SEED))
        for mech, scheme, mkt, p, q in cases
    ]
    return stats, time.perf_counter() - t0


def test_criterion_5_monte_carlo(acceptance_log, mc_campaigns):
    stats, elapsed = mc_campaigns
    details, ok = [], True
    for s in stats:
        z_user = abs(s.mean_u_user - s.analytic_u_user) / s.se("user")
        z_prov = abs(s.mean_u_provider - s.analytic_u_provider) / s.se("provider")
        ok &= z_user <= 4 and z_prov <= 4
        where = f"q={s.q_true}" if s.p_true is None else f"(p,q)=({s.p_true},{s.q_true})"
        details.append(f"{s.mechanism} {where} z={max(z_user, z_prov):.2f}")
    passed = ok and elapsed < 60.0
    acceptance_log(5, passed, "; ".join(details) + f"; {elapsed:.2f}s")
    assert passed


def test_criterion_6_constant_sum(acceptance_log, mc_campaigns):
    stats, _ = mc_campaigns
    zs = []
    for s in stats:
        if s.mechanism != "reservation":
            continue
        v = 10.0
        target = s.p_true * s.q_true * v - 1.0 * s.p_true
        zs.append(abs(s.mean_u_total - target) / s.se("total"))
    passed = len(zs) == 2 and max(zs) <= 4
    acceptance_log(6, passed, "z = " + ", ".join(f"{z:.2f}" for z in zs))
    assert passed


def _enumerated_tail(probs, m):
    total = 0.0
    for bits in itertools.product((0, 1), repeat=len(probs)):
        if sum(bits) <= m - 1:
            total += math.prod(p if b else 1 - p for p, b in zip(probs, bits))
    return total


def test_criterion_7_overbooking_exact(acceptance_log):
    rng = rng_for(7)
    worst_dp = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 13))
        probs = rng.uniform(0, 1, size=n).tolist()
        for m in range(1, n + 1):
            got = qos_for_arrival(n + 1, probs, m)
            worst_dp = max(worst_dp, abs(got - _enumerated_tail(probs, m)))
    worst_first = 0.0
    for _ in range(100):
        m = int(rng.integers(1, 13))
        probs = rng.uniform(0, 1, size=m).tolist()
        got = qos_for_arrival(m + 1, probs, m)
        worst_first = max(worst_first, abs(got - (1 - math.prod(probs))))
    passed = worst_dp <= 1e-12 and worst_first <= 1e-12
    acceptance_log(7, passed, f"max |DP - enumeration|={worst_dp:.1e}; "
                              f"max |q_(m+1) - (1 - prod p)|={worst_first:.1e}")
    assert passed


def test_criterion_8_overbooking_calibration(acceptance_log, res_scheme):
    rep = overbooking_campaign([0.5] * 4, 2, res_scheme, MC_TRIALS, seed=MC_SEED)
    target = (1.0, 1.0, 0.75, 0.5)
    zs = []
    for u, t in zip(rep.users, target):
        se = math.sqrt(t * (1 - t) / u.claims)
        gap = abs(u.empirical_served_given_claim - t)
        zs.append(gap / se if se > 0 else (0.0 if gap == 0 else math.inf))
    passed = max(zs) <= 4 and [u.q_quoted for u in rep.users] == pytest.approx(list(target))
    acceptance_log(8, passed, "served|claim = " + ", ".join(
        f"{u.empirical_served_given_claim:.4f}" for u in rep.users)
        + "; z = " + ", ".join(f"{z:.2f}" for z in zs))
    assert passed


def test_criterion_9_asymptotics(acceptance_log, res_scheme):
    vs = (10.0, 100.0, 1000.0)
    lin = [LinearQosScheme(2.0, 1.0).ic_lower_bound(MarketParams(v, 1.0)) for v in vs]
    log = [LogQosScheme(2.0, 1.0).ic_lower_bound(MarketParams(v, 1.0)) for v in vs]
    regions = [scan_ic_region(res_scheme, MarketParams(v, 1.0)) for v in vs]
    corners = [(r.p0, r.q0) for r in regions]

    def decreasing(xs):
        return all(a > b for a, b in zip(xs, xs[1:]))

    passed = (
        decreasing(lin) and decreasing(log) and log[1] < 0.05
        and not any(r.empty for r in regions)
        and decreasing([c[0] for c in corners]) and decreasing([c[1] for c in corners])
    )
    acceptance_log(9, passed, f"linear q0={[round(x, 4) for x in lin]} "
                              f"log q0={[round(x, 4) for x in log]} (p0,q0)={corners}")
    assert passed


CLI_RES = ["--mechanism", "reservation", "--k1", "1", "--k2", "1", "--c1", "2", "--c2", "2",
           "--c3", "1", "--v", "10", "--c", "1", "--seed", "99", "--trials", "200000"]


def _cli(args, threads, backend):
    env = dict(os.environ, NUMBA_NUM_THREADS="4", QOSMECH_BACKEND=backend)
    proc = subprocess.run([sys.executable, "-m", "qosmech", *args, "--threads", str(threads)],
                          env=env, capture_output=True, check=True)
    return proc.stdout + b"\0" + proc.stderr


def test_criterion_10_determinism(acceptance_log):
    commands = {
        "simulate": ["simulate", *CLI_RES, "--p-true", "0.6", "--q-true", "0.7",
                     "--user-strategy", "best_response"],
        "overbook": ["overbook", *CLI_RES, "--capacity", "2", "--p-true", "0.5,0.6,0.7,0.8,0.9"],
    }
    settings = [(1, "numba"), (1, "numba"), (4, "numba"), (2, "numba"), (1, "numpy")]
    results = {}
    for name, args in commands.items():
        outputs = {_cli(args, t, b) for t, b in settings}
        results[name] = len(outputs) == 1
    passed = all(results.values())
    acceptance_log(10, passed, f"byte-identical across reruns, threads 1/2/4 and backends: "
                               f"{results}")
    assert passed
