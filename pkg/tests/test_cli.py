import json
import os
import subprocess
import sys
from pathlib import Path

import pytest

FIXTURES = Path(__file__).parent / "fixtures"


def cli(*args, cwd=None):
    return subprocess.run([sys.executable, "-m", "uncoresim.cli", *args],
                          capture_output=True, text=True, cwd=cwd)


def strip_wall(path):
    rows = []
    for line in open(path):
        obj = json.loads(line)
        obj.pop("wall_time_s")
        rows.append(json.dumps(obj, sort_keys=True))
    return rows


BASE = ("--workload", "checksum_stream", "--workload-size", "256", "--seed", "7",
        "--target", "l2c:0")


def test_plan_reports_sample_size_and_registry(tmp_path):
    reg_path = tmp_path / "reg.tsv"
    r = cli("plan", "--rate", "0.01", "--half-width", "0.001",
            "--dump-registry", str(reg_path), *BASE)
    assert r.returncode == 0
    assert "38031 runs" in r.stdout
    lines = reg_path.read_text().splitlines()
    assert len(lines) > 40000
    assert "\t" in lines[0]


def test_plan_zero_rate(tmp_path):
    r = cli("plan", "--rate", "0", "--half-width", "0.001", *BASE)
    assert r.returncode == 0 and "0 runs" in r.stdout


def test_plan_calibration_estimates_wall_time():
    r = cli("plan", "--rate", "0.05", "--half-width", "0.01",
            "--calibrate", "3", *BASE)
    assert r.returncode == 0, r.stderr
    assert "ms/run" in r.stdout and "projected" in r.stdout


def test_run_deterministic_and_resumable(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        r = cli("run", "--runs", "40", "--out", str(d), *BASE)
        assert r.returncode == 0, r.stderr
    assert strip_wall(a / "records.jsonl") == strip_wall(b / "records.jsonl")
    # kill-and-resume: truncate then continue
    lines = (a / "records.jsonl").read_text().splitlines(keepends=True)
    (a / "records.jsonl").write_text("".join(lines[:25]))
    r = cli("run", "--runs", "40", "--out", str(a), "--resume", *BASE)
    assert r.returncode == 0 and "resumed at 25" in r.stdout
    assert strip_wall(a / "records.jsonl") == strip_wall(b / "records.jsonl")
    # resume under a different config is refused
    r = cli("run", "--runs", "41", "--out", str(a), "--resume", "--workload",
            "checksum_stream", "--workload-size", "128", "--seed", "7",
            "--target", "l2c:0")
    assert r.returncode == 2
    # outputs include the delimited reports and their figure renderings
    names = set(os.listdir(b))
    assert {"records.jsonl", "rates.csv", "rates.png",
            "propagation_latency_cdf.csv", "propagation_latency_cdf.png"} <= names


def test_run_respects_target_restriction(tmp_path):
    d = tmp_path / "t"
    r = cli("run", "--runs", "12", "--out", str(d), "--workload", "checksum_stream",
            "--workload-size", "256", "--seed", "3", "--target", "l2c:2")
    assert r.returncode == 0, r.stderr
    for line in open(d / "records.jsonl"):
        obj = json.loads(line)
        assert obj["flipflop"].startswith("l2c:2.")


def test_config_errors_exit_2(tmp_path):
    r = cli("run", "--workload", "nope", "--runs", "1", "--out", str(tmp_path / "x"))
    assert r.returncode == 2
    assert "configuration error" in r.stderr
    r = cli("run", "--target", "l2c:9", "--runs", "1", "--out", str(tmp_path / "y"))
    assert r.returncode == 2
    bad = tmp_path / "bad.toml"
    bad.write_text("unknown_key = 3\n")
    r = cli("run", "--config", str(bad), "--runs", "1", "--out", str(tmp_path / "z"))
    assert r.returncode == 2


def test_toml_config_with_flag_overrides(tmp_path):
    conf = tmp_path / "c.toml"
    conf.write_text('workload = "checksum_stream"\nworkload_size = 256\n'
                    'master_seed = 7\ntarget = "l2c:0"\nn_runs = 5\n')
    d = tmp_path / "out"
    r = cli("run", "--config", str(conf), "--runs", "3", "--out", str(d))
    assert r.returncode == 0, r.stderr
    assert len(strip_wall(d / "records.jsonl")) == 3


def test_report_matches_committed_fixture(tmp_path):
    r = cli("report", "--records", str(FIXTURES / "campaign100.jsonl"),
            "--out", str(tmp_path))
    assert r.returncode == 0, r.stderr
    for name in ("rates.csv", "propagation_latency_cdf.csv",
                 "rollback_distance_cdf.csv"):
        got = (tmp_path / name).read_bytes()
        want = (FIXTURES / "expected" / name).read_bytes()
        assert got == want, name
    assert (tmp_path / "rates.png").exists()
    # rerun is idempotent
    before = (tmp_path / "rates.csv").read_bytes()
    r = cli("report", "--records", str(FIXTURES / "campaign100.jsonl"),
            "--out", str(tmp_path))
    assert r.returncode == 0
    assert (tmp_path / "rates.csv").read_bytes() == before


def test_report_empty_records(tmp_path):
    empty = tmp_path / "empty.jsonl"
    empty.write_text("")
    r = cli("report", "--records", str(empty), "--out", str(tmp_path / "rep"))
    assert r.returncode == 0
    rates = (tmp_path / "rep" / "rates.csv").read_text()
    assert rates == "workload,component,outcome,count,total,rate,ci_halfwidth\n"
    cdf = (tmp_path / "rep" / "propagation_latency_cdf.csv").read_text()
    assert cdf == "x,cum_fraction\n"


def test_report_rejects_unknown_schema(tmp_path):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"schema_version": "9.0", "run_id": 0}\n')
    r = cli("report", "--records", str(bad), "--out", str(tmp_path / "rep"))
    assert r.returncode == 2


def test_qrr_verify_refuses_without_qrr(tmp_path):
    r = cli("qrr-verify", "--runs", "2", "--out", str(tmp_path / "q"), *BASE)
    assert r.returncode == 2
    assert "qrr_enabled" in r.stderr


def test_qrr_verify_small_campaign(tmp_path):
    conf = tmp_path / "q.toml"
    conf.write_text('workload = "checksum_stream"\nworkload_size = 256\n'
                    'master_seed = 11\ntarget = "l2c:0"\nqrr_enabled = true\n'
                    'snapshot_interval = 5000\n')
    r = cli("qrr-verify", "--config", str(conf), "--runs", "25",
            "--out", str(tmp_path / "q"))
    assert r.returncode == 0, r.stdout + r.stderr
    assert "recovered 25/25 (100.00%)" in r.stdout
    assert (tmp_path / "q" / "recovery_cycles_cdf.csv").exists()


def test_validate_small(tmp_path):
    r = cli("validate", "--warmup-runs", "8", "--accuracy-runs", "40",
            "--zero-runs", "2", "--out", str(tmp_path / "v"), *BASE)
    assert r.returncode == 0, r.stdout + r.stderr
    assert "validation: PASS" in r.stdout
    assert (tmp_path / "v" / "warmup_divergence.png").exists()
    assert (tmp_path / "v" / "rates_mixed.csv").exists()


def test_jobs_parallel_matches_serial(tmp_path):
    a, b = tmp_path / "ser", tmp_path / "par"
    r = cli("run", "--runs", "16", "--out", str(a), *BASE)
    assert r.returncode == 0, r.stderr
    r = cli("run", "--runs", "16", "--jobs", "2", "--out", str(b), *BASE)
    assert r.returncode == 0, r.stderr
    assert strip_wall(a / "records.jsonl") == strip_wall(b / "records.jsonl")
