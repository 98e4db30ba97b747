"""Command-line front end.

    qosmech quote       --mechanism linear --k 2 --c1 1 --v 5 --c 1 --q 0.5
    qosmech verify      --config run.json
    qosmech simulate    --config run.json --seed 7
    qosmech overbook    --capacity 2 --p-true 0.5,0.5,0.5,0.5 --seed 7 ...
    qosmech figure-data --mechanism log --k 2 --c1 1 --v 5 --c 1

Exit codes: 0 success, 1 configuration or validation error, 2 a verified
property was violated.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from decimal import ROUND_HALF_EVEN, Decimal
from pathlib import Path

import numpy as np

from . import kernels
from .errors import ConfigError, QosMechError
from .mechanisms import MarketParams, expected_cost_protocol, make_scheme, validate
from .overbooking import overbooking_campaign
from .simulation import CampaignConfig, ReportStrategy, run_campaign
from .verification import (
    GridSpec,
    TabulatedScheme,
    check_saddle,
    check_truth_telling_qos,
    scan_ic_interval,
    scan_ic_region,
)

CONFIG_VERSION = 1
FIGURE_SAMPLES = 1001
_SIX = Decimal("0.000001")

EXIT_OK, EXIT_CONFIG, EXIT_VIOLATION = 0, 1, 2

SCHEME_FLAGS = ("k", "c1", "k1", "k2", "c2", "c3")

SIMULATE_COLUMNS = [
    "mechanism", "p_true", "q_true", "strategy_user", "strategy_provider", "trials",
    "mean_u_user", "ci_user", "mean_u_provider", "ci_provider",
    "analytic_u_user", "analytic_u_provider",
    "analytic_cost_user", "analytic_u_provider_prepared",
]
OVERBOOK_COLUMNS = [
    "user_index", "p_true", "p_reported", "q_quoted",
    "empirical_served_given_claim", "mean_transfers",
]


def fmt(x) -> str:
    """Six decimals, round half to even on the shortest decimal repr."""
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if not math.isfinite(x):
        return "nan" if math.isnan(x) else ("inf" if x > 0 else "-inf")
    out = str(Decimal(repr(x)).quantize(_SIX, rounding=ROUND_HALF_EVEN))
    return "0.000000" if out == "-0.000000" else out


def jnum(x):
    """JSON-safe number rounded like :func:`fmt`."""
    if x is None:
        return None
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    x = float(x)
    return float(fmt(x)) if math.isfinite(x) else None


# ---------------------------------------------------------------------------
# configuration


def _parse_floats(text):
    return [float(t) for t in str(text).split(",") if t.strip()]


def load_config(args) -> dict:
    cfg: dict = {}
    if args.config:
        try:
            cfg = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(cfg, dict):
            raise ConfigError("config root must be an object")
    version = cfg.get("version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {version!r}")

    if args.mechanism:
        cfg["mechanism"] = args.mechanism
    scheme = dict(cfg.get("scheme", {}))
    for name in SCHEME_FLAGS:
        if getattr(args, name, None) is not None:
            scheme[name] = getattr(args, name)
    cfg["scheme"] = scheme
    market = dict(cfg.get("market", {}))
    for name in ("v", "c"):
        if getattr(args, name, None) is not None:
            market[name] = getattr(args, name)
    cfg["market"] = market
    for name in ("seed", "trials", "steps", "output", "format", "q", "p",
                 "capacity", "summary", "threads"):
        value = getattr(args, name, None)
        if value is not None:
            cfg[name] = value
    if getattr(args, "p_true", None) is not None:
        cfg["p_true"] = _parse_floats(args.p_true)
    if getattr(args, "p_reported", None) is not None:
        cfg["p_reported"] = _parse_floats(args.p_reported)
    if getattr(args, "q_true", None) is not None:
        cfg["q_true"] = float(args.q_true)
    for name in ("provider_strategy", "user_strategy"):
        if getattr(args, name, None) is not None:
            cfg[name] = getattr(args, name)
    if "mechanism" not in cfg:
        raise ConfigError("no mechanism given (linear | log | reservation)")
    return cfg


def build_market(cfg) -> MarketParams:
    m = cfg.get("market", {})
    if "v" not in m:
        raise ConfigError("market value v is required")
    return MarketParams(float(m["v"]), float(m.get("c", 0.0)))


def build_scheme(cfg, market, allow_tabulated=False):
    mechanism = cfg["mechanism"]
    if mechanism == "tabulated":
        if not allow_tabulated:
            raise ConfigError("tabulated schemes are only supported by verify")
        s = cfg["scheme"]
        try:
            return TabulatedScheme(tuple(s["q"]), tuple(s["g"]), tuple(s["h"]))
        except KeyError as exc:
            raise ConfigError(f"tabulated scheme needs {exc.args[0]!r}") from None
    scheme = make_scheme(mechanism, cfg["scheme"])
    report = validate(scheme, market)
    if not report.ok:
        raise ConfigError(
            "invalid scheme for this market:\n  " + "\n  ".join(report.messages())
        )
    return scheme


def _grid(cfg, upper=1.0, default=None):
    g = cfg.get("grid", {})
    steps = int(cfg.get("steps", g.get("steps", default or 101)))
    return GridSpec(float(g.get("lower", 0.0)), min(float(g.get("upper", upper)), upper), steps)


def _seed(cfg) -> int:
    seed = cfg.get("seed")
    if seed is None:
        raise ConfigError("a seed is required for stochastic commands (--seed)")
    seed = int(seed)
    if seed < 0:
        raise ConfigError("seed must be nonnegative")
    return seed


def _apply_threads(cfg):
    threads = cfg.get("threads")
    if threads is not None:
        try:
            kernels.set_threads(int(threads))
        except ValueError as exc:
            raise ConfigError(f"bad thread count: {exc}") from None


# ---------------------------------------------------------------------------
# output


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(x) if not isinstance(x, str) else x for x in row])
    return buf.getvalue()


def _json_text(obj) -> str:
    return json.dumps(obj, indent=2, ensure_ascii=False) + "\n"


def _emit(text, path=None):
    if path:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------------------
# commands


def cmd_quote(cfg) -> int:
    market = build_market(cfg)
    scheme = build_scheme(cfg, market)
    if cfg["mechanism"] == "reservation":
        if "p" not in cfg or "q" not in cfg:
            raise ConfigError("reservation quote needs --p and --q")
        quote = scheme.quote(float(cfg["p"]), float(cfg["q"]))
    else:
        if "q" not in cfg:
            raise ConfigError("quote needs --q")
        quote = scheme.quote(float(cfg["q"]))
    if cfg.get("format", "csv") == "json":
        _emit(_json_text({
            "premium": jnum(quote.premium),
            "compensation": jnum(quote.compensation),
            "usage_price": jnum(quote.usage_price),
        }), cfg.get("output"))
    else:
        _emit(_csv_text(["premium", "compensation", "usage_price"],
                        [[quote.premium, quote.compensation, quote.usage_price]]),
              cfg.get("output"))
    return EXIT_OK


def _verify_qos(cfg, scheme, market):
    grid = _grid(cfg, scheme.domain_upper)
    truth = check_truth_telling_qos(scheme, market, grid)
    ic = scan_ic_interval(scheme, market, grid)
    witness = None
    fails = truth.failures()
    if fails:
        r = fails[0]
        witness = {"q_true": jnum(r.q_true), "q_best_response": jnum(r.q_best_response),
                   "income_gap": jnum(r.income_gap)}
    report = {
        "mechanism": cfg["mechanism"],
        "grid_steps": grid.steps,
        "truth_telling": {
            "passed": truth.passed,
            "max_deviation": jnum(truth.max_deviation),
            "failures": len(fails),
            "witness": witness,
        },
        "ic_interval": {
            "intervals": [[jnum(a), jnum(b)] for a, b in ic.intervals],
            "refined_intervals": [[jnum(a), jnum(b)] for a, b in ic.refined],
            "scanned_q0": jnum(ic.scanned_q0),
            "analytic_q0": jnum(ic.analytic_q0),
            "endpoint_gap": jnum(ic.endpoint_gap),
            "contains_analytic": ic.contains_analytic,
        },
    }
    ok = truth.passed and (cfg["mechanism"] == "tabulated" or ic.contains_analytic)
    return ok, report


def _verify_reservation(cfg, scheme, market):
    grid = _grid(cfg)
    points = cfg.get("points")
    if points is None:
        lattice = np.linspace(0.0, 1.0, 11)
        points = [(float(p), float(q)) for p in lattice for q in lattice]
    saddles = [check_saddle(scheme, market, p, q, grid) for p, q in points]
    bad = [s for s in saddles if not s.passed]
    region = scan_ic_region(scheme, market, grid)
    xs = grid.points()
    P, Q = np.meshgrid(xs[1:], xs, indexing="ij")
    w = expected_cost_protocol(scheme, P, Q, P, Q)
    monotone = bool(np.all(np.diff(w, axis=1) > 0))
    witness = None
    if bad:
        s = bad[0]
        witness = {"p_true": jnum(s.p_true), "q_true": jnum(s.q_true), "axis": s.witness_axis,
                   "report": jnum(s.witness_report), "gap": jnum(s.witness_gap)}
    report = {
        "mechanism": "reservation",
        "grid_steps": grid.steps,
        "saddle": {"points": len(saddles), "passed": not bad, "failures": len(bad),
                   "witness": witness},
        "w_increasing_in_q": monotone,
        "ic_region": {"p0": jnum(region.p0), "q0": jnum(region.q0), "empty": region.empty,
                      "cells_true": int(region.mask.sum())},
    }
    return (not bad) and monotone and not region.empty, report


def cmd_verify(cfg) -> int:
    market = build_market(cfg)
    scheme = build_scheme(cfg, market, allow_tabulated=True)
    if cfg["mechanism"] == "reservation":
        ok, report = _verify_reservation(cfg, scheme, market)
    else:
        ok, report = _verify_qos(cfg, scheme, market)
    report["passed"] = ok
    _emit(_json_text(report), cfg.get("output"))
    return EXIT_OK if ok else EXIT_VIOLATION


def _simulate_cases(cfg):
    cases = cfg.get("cases")
    if "q_true" in cfg or not cases:
        case = {"q_true": cfg.get("q_true")}
        if cfg.get("p_true") is not None:
            p = cfg["p_true"]
            case["p_true"] = p[0] if isinstance(p, list) else p
        cases = [case]
    for case in cases:
        case = dict(case)
        for name in ("provider_strategy", "user_strategy"):
            if name in cfg:
                case[name] = cfg[name]
        if case.get("q_true") is None:
            raise ConfigError("simulate needs q_true (--q-true or cases[])")
        yield case


def cmd_simulate(cfg) -> int:
    market = build_market(cfg)
    scheme = build_scheme(cfg, market)
    seed = _seed(cfg)
    _apply_threads(cfg)
    trials = int(cfg.get("trials", 100_000))
    rows = []
    for case in _simulate_cases(cfg):
        stats = run_campaign(CampaignConfig(
            cfg["mechanism"], scheme, market, float(case["q_true"]),
            None if case.get("p_true") is None else float(case["p_true"]),
            ReportStrategy.parse(case.get("provider_strategy")),
            ReportStrategy.parse(case.get("user_strategy")),
            trials, seed,
        ))
        rows.append([
            stats.mechanism, stats.p_true, stats.q_true, stats.strategy_user,
            stats.strategy_provider, stats.trials,
            stats.mean_u_user, stats.ci_user, stats.mean_u_provider, stats.ci_provider,
            stats.analytic_u_user, stats.analytic_u_provider,
            stats.analytic_cost_user, stats.analytic_u_provider_prepared,
        ])
    if cfg.get("format", "csv") == "json":
        text = _json_text([
            {k: (v if isinstance(v, str) else jnum(v)) for k, v in zip(SIMULATE_COLUMNS, r)}
            for r in rows
        ])
    else:
        text = _csv_text(SIMULATE_COLUMNS, rows)
    _emit(text, cfg.get("output"))
    return EXIT_OK


def cmd_overbook(cfg) -> int:
    market = build_market(cfg)
    if cfg["mechanism"] != "reservation":
        raise ConfigError("overbook needs the reservation mechanism")
    scheme = build_scheme(cfg, market)
    capacity = int(cfg.get("capacity", 0))
    p_true = cfg.get("p_true") or []
    if capacity < 1:
        raise ConfigError("capacity m must be >= 1")
    if len(p_true) < 1:
        raise ConfigError("need at least one user (--p-true)")
    seed = _seed(cfg)
    _apply_threads(cfg)
    report = overbooking_campaign(
        p_true, capacity, scheme, int(cfg.get("trials", 100_000)), seed,
        cfg.get("p_reported"),
    )
    rows = [[u.user_index, u.p_true, u.p_reported, u.q_quoted,
             u.empirical_served_given_claim, u.mean_transfers] for u in report.users]
    summary = {
        "capacity": report.capacity,
        "users": len(report.users),
        "trials": report.trials,
        "premiums_total": jnum(report.premiums_total),
        "mean_compensation_paid": jnum(report.mean_compensation),
        "mean_usage_revenue": jnum(report.mean_usage_revenue),
        "revenue": {k: jnum(v) for k, v in report.revenue_summary().items()},
        "calibration": [
            {"user_index": u.user_index, "q_quoted": jnum(u.q_quoted),
             "empirical": jnum(u.empirical_served_given_claim), "claims": u.claims,
             "se": jnum(u.se), "flagged": u.flagged}
            for u in report.users
        ],
        "flagged_users": report.flagged_users,
    }
    output = cfg.get("output")
    if cfg.get("format", "csv") == "json":
        users = [dict(zip(OVERBOOK_COLUMNS, map(jnum, r))) for r in rows]
        _emit(_json_text({"users": users, "summary": summary}), output)
        return EXIT_OK
    _emit(_csv_text(OVERBOOK_COLUMNS, rows), output)
    summary_path = cfg.get("summary")
    if summary_path is None and output:
        summary_path = str(Path(output).with_suffix(".summary.json"))
    if summary_path:
        _emit(_json_text(summary), summary_path)
    else:
        sys.stderr.write(_json_text(summary))
    return EXIT_OK


def cmd_figure_data(cfg) -> int:
    market = build_market(cfg)
    if cfg["mechanism"] not in ("linear", "log"):
        raise ConfigError("figure-data supports the linear and log schemes")
    scheme = build_scheme(cfg, market)
    qs = np.linspace(0.0, scheme.domain_upper, FIGURE_SAMPLES)
    g, h = scheme.premium(qs), scheme.compensation(qs)
    q0 = scheme.ic_lower_bound(market)
    rows = [["sample", q, gi, hi] for q, gi, hi in zip(qs, g, h)]
    rows.append(["q0", q0, float(scheme.premium(q0)), float(scheme.compensation(q0))])
    if cfg.get("format", "csv") == "json":
        text = _json_text({
            "samples": [{"q": jnum(r[1]), "g": jnum(r[2]), "h": jnum(r[3])} for r in rows[:-1]],
            "q0": jnum(q0),
        })
    else:
        text = _csv_text(["kind", "q", "g", "h"], rows)
    _emit(text, cfg.get("output"))
    return EXIT_OK


COMMANDS = {
    "quote": cmd_quote,
    "verify": cmd_verify,
    "simulate": cmd_simulate,
    "overbook": cmd_overbook,
    "figure-data": cmd_figure_data,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qosmech", description="Truth-telling QoS and reservation pricing.")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration (flags override it)")
    common.add_argument("--mechanism", choices=["linear", "log", "reservation", "tabulated"])
    for name in SCHEME_FLAGS:
        common.add_argument(f"--{name}", type=float)
    common.add_argument("--v", type=float, help="user value per satisfied service")
    common.add_argument("--c", type=float, help="provider cost")
    common.add_argument("--format", choices=["csv", "json"])
    common.add_argument("--output", help="output path (default stdout)")

    stochastic = argparse.ArgumentParser(add_help=False)
    stochastic.add_argument("--seed", type=int)
    stochastic.add_argument("--trials", type=int)
    stochastic.add_argument("--threads", type=int, help="numba worker threads")

    p = sub.add_parser("quote", parents=[common], help="price one contract")
    p.add_argument("--q", type=float, help="reported QoS")
    p.add_argument("--p", type=float, help="reported usage probability")

    p = sub.add_parser("verify", parents=[common], help="numerical truth-telling/IC checks")
    p.add_argument("--steps", type=int, help="grid points per axis")

    p = sub.add_parser("simulate", parents=[common, stochastic], help="Monte Carlo campaign")
    p.add_argument("--q-true", type=float)
    p.add_argument("--p-true")
    p.add_argument("--provider-strategy", help="truthful | best_response | fixed:<q>")
    p.add_argument("--user-strategy", help="truthful | best_response | fixed:<p>")

    p = sub.add_parser("overbook", parents=[common, stochastic], help="finite-capacity campaign")
    p.add_argument("--capacity", type=int, help="units available (m)")
    p.add_argument("--p-true", help="comma-separated true usage probabilities, arrival order")
    p.add_argument("--p-reported", help="comma-separated reports (default: truthful)")
    p.add_argument("--summary", help="summary JSON path")

    sub.add_parser("figure-data", parents=[common], help="premium/compensation samples")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args)
        return COMMANDS[args.command](cfg)
    except (QosMechError, ValueError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
