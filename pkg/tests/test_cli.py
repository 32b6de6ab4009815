import csv
import io
import json
import subprocess
import sys

import pytest

from tibs.cli import EXIT_FAIL, EXIT_OK, EXIT_SOURCE, EXIT_USAGE, main

BASE = ["--alpha", "0.1", "--beta", "0.5", "--delta", "0.1"]


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


class TestPlan:
    def test_simplified(self, capsys):
        code, out, _ = run(capsys, "plan", *BASE, "--variant", "simplified", "--format", "json")
        rec = json.loads(out)
        assert code == EXIT_OK
        assert rec["n_max"] == 139 and rec["k_threshold"] == 42
        assert rec["chernoff_hoeffding_n"] == 150
        for key in ("A", "B", "L", "W", "clt_approx_n", "gain_ratio"):
            assert key in rec

    def test_gain_ratio(self, capsys):
        code, out, _ = run(capsys, "plan", "--alpha", "1e-6", "--beta", "1e-2", "--delta", "1e-3", "--format", "json")
        assert code == EXIT_OK
        assert json.loads(out)["gain_ratio"] == pytest.approx(2500, rel=0.05)

    def test_alpha_not_below_beta(self, capsys):
        code, _, err = run(capsys, "plan", "--alpha", "0.5", "--beta", "0.4", "--delta", "0.1")
        assert code == EXIT_USAGE
        assert "alpha < beta" in err

    def test_missing_flag(self, capsys):
        code, _, err = run(capsys, "plan", "--alpha", "0.1")
        assert code == EXIT_USAGE and "--beta" in err

    def test_bad_choice_is_usage_error(self, capsys):
        with pytest.raises(SystemExit) as info:
            main(["plan", *BASE, "--variant", "bogus"])
        assert info.value.code == EXIT_USAGE

    def test_json_round_trip(self, capsys):
        from tibs.bounds import ErrorSpec, make_plan

        code, out, _ = run(capsys, "plan", *BASE, "--format", "json")
        rec = json.loads(out)
        plan = make_plan(ErrorSpec(0.1, 0.5, 0.1))
        assert rec["L"] == plan.length and rec["W"] == plan.width

    def test_human_and_csv(self, capsys):
        _, out, _ = run(capsys, "plan", "--alpha", "1e-6", "--beta", "1e-2", "--delta", "1e-3")
        assert "3,800,451,229,772" in out
        _, out, _ = run(capsys, "plan", "--alpha", "1e-6", "--beta", "1e-2", "--delta", "1e-3", "--format", "csv")
        row = next(csv.DictReader(io.StringIO(out)))
        assert row["chernoff_hoeffding_n"] == "3800451229772"


class TestTable:
    EXPECTED = [3_800_452, 380_045_123, 38_004_512_298, 3_800_451_229_772, 380_045_122_977_105]

    def test_json(self, capsys):
        code, out, _ = run(capsys, "table", "--delta", "1e-3", "--format", "json")
        assert code == EXIT_OK
        assert [r["n_ch"] for r in json.loads(out)] == self.EXPECTED

    def test_human_separators(self, capsys):
        _, out, _ = run(capsys, "table", "--delta", "1e-3")
        for n in self.EXPECTED:
            assert f"{n:,}" in out

    def test_csv_raw_digits(self, capsys):
        _, out, _ = run(capsys, "table", "--format", "csv")
        assert [int(r["n_ch"]) for r in csv.DictReader(io.StringIO(out))] == self.EXPECTED

    def test_repeatable(self, capsys):
        _, a, _ = run(capsys, "table", "--delta", "1e-3")
        _, b, _ = run(capsys, "table", "--delta", "1e-3")
        assert a == b

    def test_bad_delta(self, capsys):
        code, _, _ = run(capsys, "table", "--delta", "2")
        assert code == EXIT_USAGE


class TestEstimate:
    def test_synthetic_tibs(self, capsys):
        code, out, _ = run(capsys, "estimate", *BASE, "--p-true", "0.3", "--seed", "42", "--format", "json")
        rec = json.loads(out)
        assert code == EXIT_OK
        assert rec["rule"] == "tibs" and rec["m"] <= 139 and rec["seed"] == 42
        assert rec["p_hat"] == rec["successes"] / rec["m"]

    def test_fixed(self, capsys):
        code, out, _ = run(capsys, "estimate", "--rule", "fixed", "--n", "107", "--p-true", "0.3", "--seed", "1", "--format", "json")
        assert code == EXIT_OK and json.loads(out)["m"] == 107

    def test_ibs(self, capsys):
        code, out, _ = run(
            capsys, "estimate", "--rule", "ibs", "--beta", "0.5", "--delta", "0.1",
            "--cap", "100000", "--p-true", "0.5", "--seed", "7", "--format", "json",
        )
        assert code == EXIT_OK and json.loads(out)["successes"] == 42

    def test_ibs_truncation_warning(self, capsys):
        code, out, err = run(
            capsys, "estimate", "--rule", "ibs", "--beta", "0.5", "--delta", "0.1",
            "--cap", "10", "--p-true", "0.01", "--seed", "7", "--format", "json",
        )
        assert code == EXIT_OK and json.loads(out)["truncated"] is True
        assert "truncated" in err

    def test_needs_source(self, capsys):
        code, _, _ = run(capsys, "estimate", *BASE)
        assert code == EXIT_USAGE

    def test_two_sources(self, capsys):
        code, _, _ = run(capsys, "estimate", *BASE, "--p-true", "0.3", "--seed", "1", "--cmd", "true")
        assert code == EXIT_USAGE

    def test_external(self, capsys):
        cmd = f"{sys.executable} -u -c \"import itertools\nfor i in itertools.count(): print(i % 2, flush=True)\""
        code, out, _ = run(capsys, "estimate", "--rule", "fixed", "--n", "100", "--cmd", cmd, "--format", "json")
        assert code == EXIT_OK
        assert json.loads(out)["p_hat"] == 0.5

    def test_external_failure_exit_code(self, capsys):
        cmd = f"{sys.executable} -c \"print(1); print(0); print(1)\""
        code, _, err = run(capsys, "estimate", *BASE, "--cmd", cmd)
        assert code == EXIT_SOURCE
        assert "trials_consumed: 3" in err

    def test_spawn_failure_exit_code(self, capsys):
        code, _, _ = run(capsys, "estimate", *BASE, "--cmd", "/nonexistent/sim")
        assert code == EXIT_SOURCE

    def test_csv_and_human(self, capsys):
        _, out, _ = run(capsys, "estimate", *BASE, "--p-true", "0.3", "--seed", "42", "--format", "csv")
        row = next(csv.DictReader(io.StringIO(out)))
        assert row["plan.n_max"] == "139"
        _, out, _ = run(capsys, "estimate", *BASE, "--p-true", "0.3", "--seed", "42")
        assert "stop_reason" in out


class TestVerify:
    def test_exact_pass(self, capsys):
        code, out, _ = run(capsys, "verify", *BASE, "--format", "json")
        rec = json.loads(out)
        assert code == EXIT_OK
        assert rec["summary"]["verdict"] == "PASS"
        assert rec["summary"]["min_coverage"] > 0.9
        assert len(rec["reports"]) == 99

    def test_empirical_pass(self, capsys):
        code, out, _ = run(
            capsys, "verify", *BASE, "--mode", "empirical", "--replications", "10000",
            "--master-seed", "1", "--grid", "0.05:0.95:0.15", "--format", "json",
        )
        rec = json.loads(out)
        assert code == EXIT_OK
        assert all(r["ci_low"] <= r["coverage"] <= r["ci_high"] for r in rec["reports"])

    def test_detects_violation(self, capsys):
        # a box at 0.3 L is small enough to break coverage near p = 0.2
        code, out, err = run(capsys, "verify", *BASE, "--override-length", str(0.3 * 138.43793912394216))
        assert code == EXIT_FAIL
        assert "FAIL" in out and "WARNING" in err

    def test_state_budget_is_usage_error(self, capsys, monkeypatch):
        monkeypatch.setenv("TIBS_STATE_BUDGET", "100")
        code, _, _ = run(capsys, "verify", *BASE, "--grid", "0.5")
        assert code == EXIT_USAGE

    def test_csv(self, capsys):
        code, out, err = run(capsys, "verify", *BASE, "--grid", "0.1,0.2", "--format", "csv")
        rows = list(csv.DictReader(io.StringIO(out)))
        assert code == EXIT_OK and len(rows) == 2
        assert "PASS" in err


def test_module_entry_point():
    proc = subprocess.run(
        [sys.executable, "-m", "tibs", "table", "--format", "json"],
        capture_output=True, text=True, check=True,
    )
    assert json.loads(proc.stdout)[-1]["n_ch"] == 380_045_122_977_105
