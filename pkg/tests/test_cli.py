import json
import subprocess
import sys
import time

import pytest

from dynlate.cli import main
from dynlate.discrete import save_scm, scm_to_dict, scm_from_dict, table_dgp


def run(argv, capsys):
    code = main(argv)
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def panel(tmp_path, capsys):
    path = tmp_path / "panel.csv"
    code, _, _ = run(["simulate", "--n", "3000", "--seed", "5", "--out", str(path)], capsys)
    assert code == 0
    return path


def test_simulate_writes_the_panel(tmp_path, capsys):
    path = tmp_path / "d.csv"
    code, out, _ = run(["simulate", "--n", "10", "--seed", "1", "--out", str(path)], capsys)
    assert code == 0
    lines = path.read_text().splitlines()
    header = lines[0].split(",")
    assert header[:6] == ["s0_0", "s0_1", "s0_2", "s0_3", "s0_4", "s0_5"]
    assert [h for h in header if not h.startswith(("s0_", "s1_"))] == ["z1", "d1", "z2", "d2", "y"]
    assert len(lines) == 11
    payload = json.loads(out)
    assert payload["rows"] == 10 and payload["T"] == 2


def test_simulate_header_with_one_covariate(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"simulate": {"p": 1}}))
    path = tmp_path / "d.csv"
    assert run(["simulate", "--config", str(cfg), "--n", "10", "--out", str(path)], capsys)[0] == 0
    assert path.read_text().splitlines()[0] == "s0_0,z1,d1,s1_0,z2,d2,y"


def test_simulate_is_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    run(["simulate", "--n", "50", "--seed", "9", "--out", str(a)], capsys)
    run(["simulate", "--n", "50", "--seed", "9", "--out", str(b)], capsys)
    assert a.read_bytes() == b.read_bytes()


def test_zero_rows_is_a_config_error(tmp_path, capsys):
    code, out, err = run(["simulate", "--n", "0", "--out", str(tmp_path / "x.csv")], capsys)
    assert code == 2 and out == "" and "n must be ≥ 1" in err


def test_estimate_emits_json(panel, tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"estimate": {"estimands": ["when_to_treat(2)", "compliance_prob(00,00)"]}}))
    code, out, err = run(["estimate", "--config", str(cfg), "--data", str(panel)], capsys)
    assert code == 0
    est = {e["estimand"]: e for e in json.loads(out)["estimates"]}
    assert set(est) == {"when_to_treat(01)", "compliance_prob(00,00)"}
    assert est["when_to_treat(01)"]["ci"][0] < est["when_to_treat(01)"]["ci"][1]
    assert est["compliance_prob(00,00)"]["point"] == pytest.approx(1.0, abs=1e-2)
    assert "estimand" in err


def test_staggered_target_on_non_staggered_data(panel, tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"estimate": {"estimands": ["always_treat_staggered"]}}))
    code, out, err = run(["estimate", "--config", str(cfg), "--data", str(panel)], capsys)
    assert code == 4 and out == "" and "staggered compliance violated" in err


def test_missing_data_file(tmp_path, capsys):
    code, _, err = run(["estimate", "--data", str(tmp_path / "nope.csv")], capsys)
    assert code == 2 and "error" in err


def test_malformed_panel_is_a_data_error(tmp_path, capsys):
    path = tmp_path / "bad.csv"
    path.write_text("s0_0,z1,d1,s1_0,z2,d2,y\n0.1,2,0,0.3,1,1,0.5\n")
    assert run(["estimate", "--data", str(path)], capsys)[0] == 3


def test_verify_passes(capsys):
    code, out, err = run(["verify", "--n", "20"], capsys)
    assert code == 0 and json.loads(out)["passed"] is True
    assert err.count("[PASS]") == len(json.loads(out)["checks"])


def test_verify_catches_a_tampered_table(tmp_path, capsys):
    obj = scm_to_dict(table_dgp("T1_A"))
    obj["types"][0]["yd_map"]["11"] = "7"
    path = tmp_path / "t1a.json"
    save_scm(scm_from_dict(obj), path)
    code, out, err = run(["verify", "--n", "5", "--table", f"T1_A={path}"], capsys)
    assert code != 0
    checks = {c["name"]: c for c in json.loads(out)["checks"]}
    assert "laws_equal=False" in checks["nonidentifiability witness (monotonicity)"]["detail"]
    assert "[FAIL]" in err


def test_mc_rejects_unknown_estimand(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"mc": {"estimands": ["bogus"]}}))
    code, _, err = run(["mc", "--config", str(cfg), "--out", str(tmp_path / "o.csv")], capsys)
    assert code == 2 and "mc.estimands[0]" in err


def test_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"simulate": {"rows": 5}}))
    code, _, err = run(["simulate", "--config", str(cfg), "--out", str(tmp_path / "x.csv")], capsys)
    assert code == 2 and "simulate.rows" in err


def test_mc_smoke_via_entry_point(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"mc": {"n": 2000, "replications": 1, "n_mc": 100000}}))
    out = tmp_path / "table.csv"
    t0 = time.perf_counter()
    proc = subprocess.run(
        [sys.executable, "-m", "dynlate.cli", "mc", "--config", str(cfg), "--out", str(out), "--quiet"],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert time.perf_counter() - t0 < 60
    json.loads(proc.stdout)
    assert out.read_text().splitlines()[0] == "n,p,estimand,rmse,bias,coverage"
    assert (tmp_path / "table.json").exists()


@pytest.mark.parametrize("script", ["run_when_to_treat_study.py", "run_staggered_study.py"])
def test_study_scripts_run(tmp_path, script):
    from pathlib import Path

    path = Path(__file__).resolve().parents[1] / "scripts" / script
    out = tmp_path / "t.csv"
    proc = subprocess.run(
        [sys.executable, str(path), "--n", "400", "--replications", "1", "--out", str(out)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert proc.stdout.splitlines()[0] == "n,p,estimand,rmse,bias,coverage"
    assert out.exists() and out.with_suffix(".json").exists()
