import csv
import io
import subprocess
import sys

import pytest

from cowqkd import cli

HEADER = ("L_km,eta,N,mu,t_B,p_d1,p_d2,e_d,n_z,E_z,Ep_upper,leak_EC,"
          "key_length,rate_per_pulse,engine,aborted")


def run(argv, capsys):
    code = cli.main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


def test_rate_schema_and_order(capsys):
    code, out, _ = run(["rate", "--L", "0,50,20", "--N", "1e9,1e10", "--set", "mu=0.003",
                        "--set", "t_B=0.4"], capsys)
    assert code == 0
    assert out.splitlines()[0] == HEADER
    got = [(r["L_km"], r["N"]) for r in rows(out)]
    assert got == [("0", "1000000000"), ("50", "1000000000"), ("20", "1000000000"),
                   ("0", "10000000000"), ("50", "10000000000"), ("20", "10000000000")]


def test_config_file_and_flag_override(tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# settings\nL = 0:20:10\nN = 1e10\ne_d = 0.02  # misalignment\n"
                   "mu = 0.003\nt_B = 0.4\n", encoding="utf-8")
    code, out, _ = run(["rate", str(cfg), "--e-d", "0.03"], capsys)
    assert code == 0
    r = rows(out)
    assert [x["L_km"] for x in r] == ["0", "10", "20"]
    assert {x["e_d"] for x in r} == {"0.03"}
    assert {x["mu"] for x in r} == {"0.003"}


def test_output_file_and_reproducible(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for path in (a, b):
        assert cli.main(["sweep", "--L", "10,30", "--N", "1e10", "--seed", "3",
                         "--out", str(path)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert a.read_text().splitlines()[0] == HEADER


def test_workers_preserve_order(capsys):
    argv = ["rate", "--L", "0:60:10", "--N", "1e9"]
    _, serial, _ = run(argv, capsys)
    _, pooled, _ = run(argv + ["--workers", "3"], capsys)
    assert serial == pooled


def test_abort_everywhere_still_writes_csv(capsys):
    code, out, _ = run(["rate", "--L", "150,200", "--N", "1e9"], capsys)
    assert code == 1
    assert out.splitlines()[0] == HEADER
    assert all(r["aborted"] == "true" and r["key_length"] == "0" for r in rows(out))


def test_optimize_fixed_all_echoes_values(capsys):
    code, out, _ = run(["optimize", "--L", "20", "--N", "1e10", "--set", "free=",
                        "--set", "mu=0.003", "--set", "t_B=0.5", "--set", "p_d1=0.1",
                        "--set", "p_d2=0.2"], capsys)
    assert code == 0
    (r,) = rows(out)
    assert (r["mu"], r["t_B"], r["p_d1"], r["p_d2"]) == ("0.003", "0.5", "0.1", "0.2")


@pytest.mark.parametrize("text,line", [
    ("L = \n", 1),
    ("L = 10\nN = 1e9\nfoo\n", 3),
    ("L = 10\nbogus = 1\n", 2),
    ("L = 10\nmu = abc\n", 2),
    ("L = 10\nN = 1.5\n", 2),
    ("L = 10\nengine = chernoff\n", 2),
    ("L = 10:0:1\n", 1),
])
def test_config_errors_name_file_and_line(tmp_path, capsys, text, line):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text(text, encoding="utf-8")
    code, out, err = run(["rate", str(cfg)], capsys)
    assert code == 2
    assert f"{cfg}:{line}:" in err
    assert out == ""


def test_other_config_errors(tmp_path, capsys):
    assert run(["rate"], capsys)[0] == 2
    assert run(["rate", str(tmp_path / "missing.cfg")], capsys)[0] == 2
    assert run(["rate", "--L", "10", "--set", "p_d1=0.7", "--set", "p_d2=0.5"], capsys)[0] == 2
    assert run(["optimize", "--L", "10", "--set", "mu_bounds=0.5,0.1"], capsys)[0] == 2
    assert run(["montecarlo", "--L", "10", "--N", "1e9"], capsys)[0] == 2


def test_unwritable_output_checked_before_compute(tmp_path, capsys):
    code, _, err = run(["sweep", "--L", "0:130:1", "--out", str(tmp_path / "no" / "x.csv")], capsys)
    assert code == 2
    assert "not writable" in err


def test_numerical_assertion_exit_code(monkeypatch, capsys):
    def boom(*a, **k):
        raise AssertionError("box violated")
    monkeypatch.setattr(cli, "evaluate_point", boom)
    assert run(["rate", "--L", "10"], capsys)[0] == 3


def test_compare_bounds_identical_engines(capsys):
    code, out, _ = run(["compare-bounds", "--L", "0,40", "--N", "1e10",
                        "--set", "engines=kato,kato", "--set", "mu=0.003"], capsys)
    assert code == 0
    assert out.splitlines()[0] == ",".join(cli.COMPARE_FIELDS)
    for r in rows(out):
        assert r["rate_a"] == r["rate_b"]
        assert r["q00_M0_upper_a"] == r["q00_M0_upper_b"]


def test_compare_bounds_fixed_point(capsys):
    code, out, _ = run(["compare-bounds", "--L", "0:40:10", "--N", "1e11",
                        "--set", "mu=0.003", "--set", "t_B=0.4"], capsys)
    for r in rows(out):
        assert float(r["rate_a"]) >= float(r["rate_b"])
        assert float(r["q00_M0_upper_b"]) > float(r["q00_M0_upper_a"])


def test_montecarlo_report_is_byte_identical(tmp_path):
    cmd = [sys.executable, "-m", "cowqkd.cli", "montecarlo", "--L", "10", "--N", "1e6",
           "--seed", "7", "--set", "coverage_trials=20000"]
    a = subprocess.run(cmd, capture_output=True, check=False)
    b = subprocess.run(cmd, capture_output=True, check=False)
    assert a.returncode == 0, a.stderr
    assert a.stdout == b.stdout
    assert a.stdout.decode().splitlines()[-1] == "PASS"


def test_montecarlo_writes_file(tmp_path, capsys):
    out = tmp_path / "mc.txt"
    code = cli.main(["montecarlo", "--L", "10", "--N", "1e6", "--seed", "1",
                     "--set", "coverage_trials=5000", "--out", str(out)])
    assert code == 0
    assert out.read_text().endswith("PASS\n")
