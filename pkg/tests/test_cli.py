import csv
import io
import json

import pytest

from qosmech.cli import OVERBOOK_COLUMNS, SIMULATE_COLUMNS, fmt, main

LINEAR = ["--mechanism", "linear", "--k", "2", "--c1", "1", "--v", "5", "--c", "1"]
LOG = ["--mechanism", "log", "--k", "2", "--c1", "1", "--v", "5", "--c", "1"]
RES = ["--mechanism", "reservation", "--k1", "1", "--k2", "1", "--c1", "2", "--c2", "2",
       "--c3", "1", "--v", "10", "--c", "1"]


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def write_config(tmp_path, obj, name="run.json"):
    path = tmp_path / name
    path.write_text(json.dumps(obj), encoding="utf-8")
    return str(path)


def test_fmt_rounds_half_even():
    assert fmt(2.5) == "2.500000"
    assert fmt(0.0000005) == "0.000000"
    assert fmt(0.0000015) == "0.000002"
    assert fmt(None) == ""


def test_quote_linear(capsys):
    code, out, _ = run(capsys, "quote", *LINEAR, "--q", "0.5")
    assert code == 0
    assert out == "premium,compensation,usage_price\n2.500000,2.000000,\n"


def test_quote_log(capsys):
    code, out, _ = run(capsys, "quote", *LOG, "--q", "0.6")
    assert code == 0
    row = rows(out)[0]
    assert (row["premium"], row["compensation"]) == ("2.200000", "1.832581")


def test_quote_reservation_json(capsys):
    code, out, _ = run(capsys, "quote", *RES, "--p", "0.5", "--q", "0.8", "--format", "json")
    assert code == 0
    q = json.loads(out)
    # g = k1 p^2 - k2 q^2 + 2 k2 q + c1, f = c2 - 2 k1 p, h = k1 p^2 + 2 k2 q + c3
    assert q["premium"] == pytest.approx(0.25 - 0.64 + 1.6 + 2)
    assert q["usage_price"] == pytest.approx(1.0)
    assert q["compensation"] == pytest.approx(0.25 + 1.6 + 1)


def test_quote_out_of_range(capsys):
    code, out, err = run(capsys, "quote", *LINEAR, "--q", "1.2")
    assert code == 1 and out == ""
    assert "q_reported=1.2" in err


def test_invalid_scheme_lists_violations(capsys):
    code, _, err = run(capsys, "quote", "--mechanism", "linear", "--k", "5", "--c1", "1",
                       "--v", "5", "--c", "1", "--q", "0.5")
    assert code == 1
    assert "c1 ≤ v − k" in err


def test_verify_passes_for_valid_schemes(capsys):
    for flags in (LINEAR, LOG):
        code, out, _ = run(capsys, "verify", *flags)
        report = json.loads(out)
        assert code == 0 and report["passed"]
        assert report["truth_telling"]["failures"] == 0
    code, out, _ = run(capsys, "verify", *RES)
    report = json.loads(out)
    assert code == 0 and report["saddle"]["points"] == 121
    assert report["w_increasing_in_q"]


def test_verify_linear_interval(capsys):
    _, out, _ = run(capsys, "verify", *LINEAR, "--steps", "1001")
    ic = json.loads(out)["ic_interval"]
    assert ic["scanned_q0"] == pytest.approx(0.219224, abs=1e-6)
    assert ic["intervals"][-1][1] == 1.0


def test_verify_adversarial_table_exits_2(capsys, tmp_path):
    cfg = write_config(tmp_path, {
        "version": 1, "mechanism": "tabulated", "market": {"v": 5, "c": 1},
        "scheme": {"q": [0, 1], "g": [0, 1], "h": [0, 0]},
    })
    code, out, _ = run(capsys, "verify", "--config", cfg)
    report = json.loads(out)
    assert code == 2 and not report["passed"]
    assert report["truth_telling"]["witness"]["q_best_response"] == 1.0


def test_tabulated_rejected_outside_verify(capsys, tmp_path):
    cfg = write_config(tmp_path, {
        "mechanism": "tabulated", "market": {"v": 5},
        "scheme": {"q": [0, 1], "g": [0, 1], "h": [0, 0]},
    })
    assert run(capsys, "figure-data", "--config", cfg)[0] == 1


def test_config_errors(capsys, tmp_path):
    assert run(capsys, "quote", "--config", str(tmp_path / "missing.json"))[0] == 1
    cfg = write_config(tmp_path, {"version": 2, "mechanism": "linear"})
    code, _, err = run(capsys, "quote", "--config", cfg, "--q", "0.5")
    assert code == 1 and "version" in err
    assert run(capsys, "quote", "--k", "2", "--v", "5", "--q", "0.5")[0] == 1


def test_flags_override_config(capsys, tmp_path):
    cfg = write_config(tmp_path, {
        "version": 1, "mechanism": "linear",
        "scheme": {"k": 2, "c1": 1}, "market": {"v": 5, "c": 1}, "q": 0.1,
    })
    _, out, _ = run(capsys, "quote", "--config", cfg, "--q", "0.5")
    assert rows(out)[0]["premium"] == "2.500000"
    _, out, _ = run(capsys, "quote", "--config", cfg, "--c1", "2")
    assert rows(out)[0]["premium"] == fmt(-2 * 0.01 + 2 * 2 * 0.1 + 2)


def test_simulate_requires_seed(capsys):
    code, out, err = run(capsys, "simulate", *LINEAR, "--q-true", "0.5", "--trials", "100")
    assert code == 1 and out == "" and "seed" in err


def test_simulate_rejects_zero_trials(capsys):
    assert run(capsys, "simulate", *LINEAR, "--q-true", "0.5", "--trials", "0",
               "--seed", "1")[0] == 1


def test_simulate_output(capsys):
    args = ("simulate", *RES, "--p-true", "0.5", "--q-true", "0.5", "--trials", "50000",
            "--seed", "17", "--user-strategy", "best_response")
    code, first, _ = run(capsys, *args)
    assert code == 0
    _, second, _ = run(capsys, *args)
    assert first == second
    (row,) = rows(first)
    assert list(row) == SIMULATE_COLUMNS
    assert row["strategy_user"] == "best_response"
    assert row["strategy_provider"] == "truthful"
    assert abs(float(row["mean_u_user"]) - float(row["analytic_u_user"])) <= 2.1 * float(row["ci_user"])


def test_simulate_cases_from_config(capsys, tmp_path):
    cfg = write_config(tmp_path, {
        "version": 1, "mechanism": "linear", "scheme": {"k": 2, "c1": 1},
        "market": {"v": 5, "c": 1}, "seed": 3, "trials": 1000,
        "cases": [{"q_true": 0.3}, {"q_true": 0.9, "provider_strategy": {"fixed": 0.5}}],
    })
    code, out, _ = run(capsys, "simulate", "--config", cfg)
    assert code == 0
    table = rows(out)
    assert [r["q_true"] for r in table] == ["0.300000", "0.900000"]
    assert table[1]["strategy_provider"] == "fixed(0.5)"


def test_overbook_csv_and_summary(capsys, tmp_path):
    out_path = tmp_path / "ob.csv"
    code, _, _ = run(capsys, "overbook", *RES, "--capacity", "2",
                     "--p-true", "0.5,0.5,0.5,0.5", "--trials", "20000", "--seed", "4",
                     "--output", str(out_path))
    assert code == 0
    table = rows(out_path.read_text(encoding="utf-8"))
    assert list(table[0]) == OVERBOOK_COLUMNS
    assert [r["q_quoted"] for r in table] == ["1.000000", "1.000000", "0.750000", "0.500000"]
    summary = json.loads((tmp_path / "ob.summary.json").read_text(encoding="utf-8"))
    assert summary["capacity"] == 2 and summary["flagged_users"] == []
    assert set(summary["revenue"]) >= {"mean", "p05", "p95"}


def test_overbook_summary_to_stderr(capsys):
    code, out, err = run(capsys, "overbook", *RES, "--capacity", "1", "--p-true", "0.9,0.9",
                         "--trials", "1000", "--seed", "1")
    assert code == 0
    assert rows(out)[1]["q_quoted"] == "0.100000"
    assert json.loads(err)["users"] == 2


def test_overbook_validation(capsys):
    base = ("overbook", *RES, "--p-true", "0.5", "--trials", "10", "--seed", "1")
    assert run(capsys, *base, "--capacity", "0")[0] == 1
    assert run(capsys, "overbook", *LINEAR, "--capacity", "1", "--p-true", "0.5",
               "--seed", "1")[0] == 1


def test_figure_data(capsys):
    code, out, _ = run(capsys, "figure-data", *LINEAR)
    assert code == 0
    table = rows(out)
    assert len(table) == 1002
    first, last, q0 = table[0], table[-2], table[-1]
    assert (first["q"], first["g"], first["h"]) == ("0.000000", "1.000000", "0.000000")
    assert (last["g"], last["h"]) == ("3.000000", "4.000000")
    assert q0["kind"] == "q0" and q0["q"] == "0.219224"
    _, out, _ = run(capsys, "figure-data", *LOG, "--format", "json")
    assert json.loads(out)["q0"] == pytest.approx(0.6)


def test_simulate_analytic_columns(capsys):
    _, out, _ = run(capsys, "simulate", *LINEAR, "--q-true", "0.5", "--trials", "1000",
                    "--seed", "1")
    assert rows(out)[0]["analytic_u_provider"] == "0.500000"
    _, out, _ = run(capsys, "simulate", *RES, "--p-true", "0.8", "--q-true", "0.9",
                    "--trials", "1000", "--seed", "1")
    w = -1 * 0.64 * 0.9 + 0.81 + 1 * 0.9 + 2 * 0.8 * 0.9 + 2 - 1
    assert rows(out)[0]["analytic_cost_user"] == fmt(w)


def test_figure_data_log_domain_clamp(capsys):
    _, out, _ = run(capsys, "figure-data", *LOG)
    table = rows(out)
    last = table[-2]
    assert float(last["q"]) == pytest.approx(1.0)
    h = float(last["h"])
    assert 50 < h < 60  # -2 ln(1e-12)
    assert table[-1]["q"] == "0.600000"


def test_overbook_no_overbooking_column(capsys):
    _, out, _ = run(capsys, "overbook", *RES, "--capacity", "3", "--p-true", "0.9,0.2,0.7",
                    "--trials", "1000", "--seed", "1")
    assert [r["q_quoted"] for r in rows(out)] == ["1.000000"] * 3
