"""Tests for scan configs, the scan driver, exports, and the CLI commands."""

import csv
import dataclasses
import hashlib
import json
import math
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from staircase_lab import __version__
from staircase_lab import scan as sc
from staircase_lab.cli import main
from staircase_lab.errors import ConfigError, NoConvergence
from staircase_lab.scan import parse_scan_config, run_scan

K0_TEXT = """
[model]
family = frenkel-kontorova
k = 0.0

[scan]
q_max = 6
c_grid = 41
seed = 0
"""

FULL_TEXT = """
# comment line
[model]
family = frenkel-kontorova
k = 0.75

[scan]
q_max = 8
h_lo = 0.0
h_hi = 1.0
nu = 0.5, 0.75
theta = 0.5
estimator_q = 12
c_grid = 101
derivative_depth = 4
workers = 2
seed = 7
cache_dir = /tmp/some-cache
out_dir = /tmp/some-out

[flatness]
p = 0
q = 1
t_grid = 1, 2, 3

[probe]
cf = 0, 1, 1, 1, 1, 1, 1, 1
delta = 0.25
rho_lo = 0.5
rho_hi = 0.7
"""


def digest_dir(d):
    return {f.name: hashlib.sha256(f.read_bytes()).hexdigest()
            for f in Path(d).iterdir() if f.is_file()}


def read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


@pytest.fixture(scope="module")
def k0_scan(tmp_path_factory):
    out = tmp_path_factory.mktemp("k0scan")
    config = dataclasses.replace(parse_scan_config(K0_TEXT), out_dir=str(out))
    code, report = run_scan(config)
    assert code == 0
    return out, report, config


# ---- config parsing -----------------------------------------------------------


def test_parse_full_config():
    cfg = parse_scan_config(FULL_TEXT)
    assert cfg.model.k == 0.75
    assert cfg.q_max == 8
    assert cfg.nus == (0.5, 0.75)
    assert cfg.thetas == (0.5,)
    assert cfg.estimator_q == 12
    assert cfg.c_grid == 101
    assert cfg.workers == 2 and cfg.seed == 7
    assert cfg.cache_dir == "/tmp/some-cache"
    assert cfg.out_dir == "/tmp/some-out"
    assert cfg.flatness_targets == (sc.FlatnessTarget(0, 1, (1, 2, 3)),)
    assert cfg.probes == (sc.ProbeTarget((0, 1, 1, 1, 1, 1, 1, 1), 0.25, (0.5, 0.7)),)
    assert cfg.config_digest == hashlib.sha256(FULL_TEXT.encode()).hexdigest()


def test_parse_defaults():
    cfg = parse_scan_config("[model]\nfamily = frenkel-kontorova\nk = 1.0\n"
                            "[scan]\nq_max = 3\n")
    assert cfg.h_lo == 0.0 and cfg.h_hi == 1.0
    assert cfg.c_lo is None and cfg.c_hi is None
    assert cfg.nus == () and cfg.thetas == ()
    assert cfg.workers == 1 and cfg.seed == 0
    assert cfg.cache_dir is None and cfg.out_dir is None


@pytest.mark.parametrize("text", [
    "[scan]\nq_max = 5\n",                                        # no model
    "[model]\nfamily = frenkel-kontorova\nk = 1.0\n",             # no scan
    "[model]\nfamily = frenkel-kontorova\nk = 1.0\n[scan]\nq_max = 0\n",
    "[model]\nfamily = frenkel-kontorova\nk = 1.0\n[scan]\nq_max = 4\nwibble = 1\n",
    "[model]\nfamily = frenkel-kontorova\nk = 1.0\n[scan]\nq_max = 4\n[mystery]\nx = 1\n",
    "[model]\nfamily = frenkel-kontorova\nk = 1.0\n[scan]\nq_max = 4\nh_lo = 1.0\nh_hi = 0.0\n",
    "[model]\nfamily = frenkel-kontorova\nk = 1.0\n[scan]\nq_max = 4\ntheta = 0.5\n",
    "[model]\nfamily = frenkel-kontorova\nk = 1.0\n[scan]\nq_max = 4\nnu = 1.5\n",
    "[model]\nfamily = frenkel-kontorova\nk = 1.0\n[scan]\nq_max = 4\nc_lo = 0.2\n",
    "[model]\nfamily = frenkel-kontorova\nk = 1.0\n[scan]\nq_max = 4\nworkers = 0\n",
    "[model]\nfamily = frenkel-kontorova\nk = 1.0\n[scan]\nq_max = 4\n"
    "[probe]\ndelta = 0.2\n",                                     # probe without cf
    "[model]\nfamily = frenkel-kontorova\nk = 1.0\n[scan]\nq_max = 4\n"
    "[probe]\ncf = 0,1,1\nrho_lo = 0.3\n",                        # half a window
    "[model]\nfamily = frenkel-kontorova\nk = 1.0\n[scan]\nq_max = 4\n"
    "[flatness]\np = 1\n",                                        # flatness without q
])
def test_parse_rejects_malformed(text):
    with pytest.raises(ConfigError):
        parse_scan_config(text)


def test_probe_kam_config_does_not_need_scan_section():
    cfg = parse_scan_config("[model]\nfamily = frenkel-kontorova\nk = 1.0\n",
                            require_scan=False)
    assert cfg.q_max == 16


def test_dyadic_ladder():
    assert sc._dyadic_ladder(16) == [4, 8, 16]
    assert sc._dyadic_ladder(10) == [4, 8, 10]
    assert sc._dyadic_ladder(4) == [4]
    assert sc._dyadic_ladder(3) == [3]


def test_scan_rationals_cover_base_and_chains():
    cfg = parse_scan_config("[model]\nfamily = frenkel-kontorova\nk = 1.0\n"
                            "[scan]\nq_max = 3\n")
    base = sc.base_rationals(cfg)
    tasks = sc.scan_rationals(cfg)
    assert set(base) <= set(tasks)
    assert (0, 1) in base and (1, 2) in base and (1, 3) in base
    for p, q in tasks:
        assert math.gcd(abs(p), q) == 1


# ---- the k=0 reference scan ------------------------------------------------------


def test_scan_writes_expected_layout(k0_scan):
    out, report, _ = k0_scan
    names = {f.name for f in out.iterdir()}
    assert {"beta.csv", "locking.csv", "staircase.csv", "estimators.csv",
            "report.json", "cache"} <= names
    assert report["results"]["failures"] == []


def test_k0_locking_widths_below_1e8(k0_scan):
    out, _, _ = k0_scan
    header, rows = read_csv(out / "locking.csv")
    assert header == ["(p,q)", "c_minus", "c_plus", "width"]
    assert rows, "locking table should not be empty"
    assert all(float(r[3]) < 1e-8 for r in rows)
    assert rows[0][0].count("/") == 1


def test_k0_staircase_is_identity(k0_scan):
    out, _, _ = k0_scan
    _, rows = read_csv(out / "staircase.csv")
    dev = max(abs(float(c) - float(d)) for c, d in rows)
    # resolution: half the largest Farey gap at q_max=6 plus the c step
    assert dev < 0.5 / 6 + 0.025


def test_k0_beta_matches_closed_form(k0_scan):
    out, _, _ = k0_scan
    _, rows = read_csv(out / "beta.csv")
    assert rows
    for p, q, rho, beta, *_ in rows:
        p, q = int(p), int(q)
        assert abs(float(beta) - p * p / (2.0 * q * q)) < 1e-10
        assert float(rho) == p / q


def test_report_json_shape(k0_scan):
    out, report, config = k0_scan
    on_disk = json.loads((out / "report.json").read_text())
    assert set(on_disk) == {"tool_version", "model", "config_digest", "results"}
    assert on_disk["tool_version"] == __version__
    assert on_disk["model"]["hash"] == config.model.model_hash
    assert on_disk["config_digest"] == config.config_digest
    results = on_disk["results"]
    assert results["failures"] == []
    assert [q for q, _ in results["L_of_Q"]] == [4, 6]
    assert all(val < 1e-8 for _, val in results["L_of_Q"])


def test_estimators_csv_has_l_rows(k0_scan):
    out, _, _ = k0_scan
    header, rows = read_csv(out / "estimators.csv")
    assert header == ["kind", "nu", "theta", "Q", "value"]
    l_rows = [r for r in rows if r[0] == "L"]
    assert [int(r[3]) for r in l_rows] == [4, 6]


def test_csv_floats_round_trip(k0_scan):
    out, report, _ = k0_scan
    _, rows = read_csv(out / "staircase.csv")
    # 17 significant digits reparse to the exact same float
    for c, d in rows[:5]:
        assert f"{float(c):.17g}" == c and f"{float(d):.17g}" == d
    for (q, val), row in zip(report["results"]["L_of_Q"],
                             [r for r in read_csv(out / "estimators.csv")[1] if r[0] == "L"]):
        assert float(row[4]) == val


def test_scan_determinism_byte_identical(k0_scan, tmp_path):
    out, _, config = k0_scan
    rerun = dataclasses.replace(config, out_dir=str(tmp_path / "rerun"))
    code, _ = run_scan(rerun)
    assert code == 0
    first = {k: v for k, v in digest_dir(out).items()}
    second = digest_dir(tmp_path / "rerun")
    assert first == second


def test_warm_cache_run_is_identical(k0_scan, tmp_path):
    out, _, config = k0_scan
    warm = dataclasses.replace(config, out_dir=str(tmp_path / "warm"),
                               cache_dir=str(out / "cache"))
    code, _ = run_scan(warm)
    assert code == 0
    assert digest_dir(out) == digest_dir(tmp_path / "warm")


def test_scan_requires_out_dir():
    cfg = parse_scan_config(K0_TEXT)
    with pytest.raises(ConfigError):
        run_scan(cfg)


# ---- failure isolation ------------------------------------------------------------


def test_failing_rational_is_recorded_and_isolated(tmp_path, monkeypatch):
    from staircase_lab import staircase as stair_mod
    real = stair_mod.beta_at

    def flaky(model, p, q, cache=None, options=None):
        if (p, q) == (1, 3):
            raise NoConvergence("injected failure at 1/3")
        return real(model, p, q, cache=cache, options=options)

    monkeypatch.setattr(stair_mod, "beta_at", flaky)
    cfg = dataclasses.replace(
        parse_scan_config("[model]\nfamily = frenkel-kontorova\nk = 0.0\n"
                          "[scan]\nq_max = 4\nc_grid = 21\n"),
        out_dir=str(tmp_path))
    code, report = run_scan(cfg)
    assert code == 0
    failures = report["results"]["failures"]
    assert any(f.get("p") == 1 and f.get("q") == 3 for f in failures)
    _, rows = read_csv(tmp_path / "beta.csv")
    good = {(int(r[0]), int(r[1])) for r in rows}
    assert (1, 2) in good and (1, 4) in good and (1, 3) not in good


# ---- export units -----------------------------------------------------------------


def test_write_csv_headers_only_when_empty(tmp_path):
    path = tmp_path / "empty.csv"
    sc.write_csv(path, ("p", "q", "rho", "beta"), [])
    assert path.read_text() == "p,q,rho,beta\n"


def test_write_csv_quotes_comma_cells(tmp_path):
    path = tmp_path / "locking.csv"
    sc.write_csv(path, ("(p,q)", "width"), [("1/2", 0.125)])
    header, rows = read_csv(path)
    assert header == ["(p,q)", "width"]
    assert rows == [["1/2", "0.125"]]


def test_report_reexport_is_byte_identical(k0_scan, tmp_path):
    out, report, _ = k0_scan
    again = tmp_path / "again.json"
    sc.write_report(again, report)
    assert again.read_bytes() == (out / "report.json").read_bytes()


# ---- command line -----------------------------------------------------------------


@pytest.fixture(scope="module")
def model_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("models") / "fk.model"
    path.write_text("[model]\nfamily = frenkel-kontorova\nk = 2.0\n")
    return str(path)


@pytest.fixture(scope="module")
def k0_model_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("models") / "fk0.model"
    path.write_text("[model]\nfamily = frenkel-kontorova\nk = 0.0\n")
    return str(path)


def test_cli_beta_prints_record(capsys, k0_model_file):
    rc = main(["beta", "-p", "1", "-q", "2", "--model", k0_model_file])
    assert rc == 0
    record = json.loads(capsys.readouterr().out)
    assert abs(record["beta"] - 0.125) < 1e-10
    assert record["p"] == 1 and record["q"] == 2
    # no locking at k=0: both one-sided derivatives equal rho
    assert abs(record["c_minus"] - 0.5) < 1e-8
    assert abs(record["c_plus"] - 0.5) < 1e-8


def test_cli_beta_requires_model(capsys):
    rc = main(["beta", "-p", "1", "-q", "2"])
    assert rc == 2
    assert "requires --model" in capsys.readouterr().err


def test_cli_scan_missing_model_section_exits_2(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("[scan]\nq_max = 4\n")
    rc = main(["scan", str(cfg), "--out-dir", str(tmp_path / "out")])
    assert rc == 2
    assert not (tmp_path / "out").exists()
    assert "missing [model] section" in capsys.readouterr().err


def test_cli_scan_missing_config_file_exits_2(tmp_path, capsys):
    rc = main(["scan", str(tmp_path / "absent.cfg")])
    assert rc == 2


def test_cli_scan_writes_artifacts(tmp_path, capsys):
    cfg = tmp_path / "scan.cfg"
    cfg.write_text("[model]\nfamily = frenkel-kontorova\nk = 0.0\n"
                   "[scan]\nq_max = 4\nc_grid = 21\n")
    out = tmp_path / "out"
    rc = main(["scan", str(cfg), "--out-dir", str(out)])
    assert rc == 0
    assert (out / "report.json").exists() and (out / "beta.csv").exists()


def test_cli_flatness_writes_csv_and_record(capsys, model_file, tmp_path):
    rc = main(["flatness", "-p", "0", "-q", "1", "--model", model_file,
               "--out-dir", str(tmp_path)])
    assert rc == 0
    record = json.loads(capsys.readouterr().out)
    assert record["p"] == 0 and record["q"] == 1
    assert abs(record["c_plus"] - 0.48779084496098024) < 1e-9
    assert abs(record["lambda_monodromy"] - 4.3937635006770046) < 1e-9
    header, rows = read_csv(tmp_path / "flatness_0_1.csv")
    assert header == ["T", "delta", "u", "zeta_upper", "bound_value"]
    assert len(rows) == 5


def test_cli_hyperbolicity_reports_monodromy(capsys, model_file):
    rc = main(["hyperbolicity", "-p", "0", "-q", "1", "--model", model_file])
    assert rc == 0
    record = json.loads(capsys.readouterr().out)
    k = 2.0
    assert abs(record["trace"] - (2 + 4 * math.pi**2 * k)) < 1e-9
    assert abs(record["phonon_gap"] - 4 * math.pi**2 * k) < 1e-9
    assert record["lyapunov"] > 0


def test_cli_pn_barrier_positive_at_k2(capsys, model_file):
    rc = main(["pn-barrier", "-p", "1", "-q", "2", "--model", model_file])
    assert rc == 0
    record = json.loads(capsys.readouterr().out)
    assert record["pn_barrier"] > 1.0


def test_cli_probe_kam(capsys, tmp_path):
    cfg = tmp_path / "probe.cfg"
    cfg.write_text("[model]\nfamily = frenkel-kontorova\nk = 0.0\n"
                   "[scan]\nq_max = 6\nc_grid = 21\n"
                   "[probe]\ncf = 0,1,1,1,1,1,1,1,1,1,1,1,1,1\n")
    rc = main(["probe-kam", str(cfg)])
    assert rc == 0
    record = json.loads(capsys.readouterr().out)
    probe = record["probes"][0]
    # k=0 has beta = rho^2/2, so the quadratic envelope hugs 1/2
    assert 0.4 < probe["c_low"] <= probe["C_high"] < 0.55
    assert record["failures"] == []


def test_cli_env_var_sets_cache_dir(tmp_path, monkeypatch, capsys, k0_model_file):
    env_cache = tmp_path / "envcache"
    monkeypatch.setenv("STAIRCASE_LAB_CACHE", str(env_cache))
    rc = main(["beta", "-p", "0", "-q", "1", "--model", k0_model_file])
    assert rc == 0
    assert env_cache.exists() and any(env_cache.iterdir())


def test_cli_flag_beats_env_var(tmp_path, monkeypatch, capsys, k0_model_file):
    env_cache = tmp_path / "env"
    flag_cache = tmp_path / "flag"
    monkeypatch.setenv("STAIRCASE_LAB_CACHE", str(env_cache))
    rc = main(["beta", "-p", "0", "-q", "1", "--model", k0_model_file,
               "--cache-dir", str(flag_cache)])
    assert rc == 0
    assert flag_cache.exists() and not env_cache.exists()


def test_console_script_entry_point(tmp_path):
    cfg = tmp_path / "scan.cfg"
    cfg.write_text("[model]\nfamily = frenkel-kontorova\nk = 0.0\n"
                   "[scan]\nq_max = 3\nc_grid = 11\n")
    out = tmp_path / "out"
    proc = subprocess.run(
        [sys.executable, "-m", "staircase_lab.cli", "scan", str(cfg),
         "--out-dir", str(out)],
        capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (out / "report.json").exists()
