from __future__ import annotations

import json

import pytest

from heatobs import cli, io

SMALL = """\
mesh:
  resolution: 101
solver:
  T: 0.2
  dt: 0.001
  store_every: 5
initial:
  kind: cosine
  modes: [[1, 1.0], [2, 0.3]]
probe:
  resolution: 24
  restarts: 2
  beta: [0.5]
sweep:
  t: [0.1, 0.2]
  a_norm: [0.0, 1.0]
  resolution: 24
  restarts: 2
output: run
"""


@pytest.fixture
def small(tmp_path):
    p = tmp_path / "small.yaml"
    p.write_text(SMALL)
    return p


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_pipeline_commands_and_report(small, tmp_path, capsys):
    out = tmp_path / "run"
    for cmd in ("mesh", "weights", "simulate", "commutator-check", "frequency", "observe", "sweep"):
        assert run(cmd, "--config", small) == cli.EXIT_OK, cmd
    assert run("interpolate", out / "frequency" / "trace.csv", out / "frequency" / "params.json",
               "--config", small) == cli.EXIT_OK
    man = io.verify_manifest(out)
    assert "solution/solution.json" in man["files"]
    assert man["commands"] == ["mesh", "weights", "simulate", "commutator-check", "frequency", "observe",
                               "sweep", "interpolate"]
    capsys.readouterr()
    assert run("report", "--config", small) == cli.EXIT_OK
    first = (out / "report.json").read_bytes()
    assert run("report", out) == cli.EXIT_OK
    assert (out / "report.json").read_bytes() == first
    text = capsys.readouterr().out
    assert "FAIL" not in text


def test_weights_verify_roundtrip(small, tmp_path):
    assert run("weights", "--config", small) == cli.EXIT_OK
    assert run("weights", "verify", tmp_path / "run" / "weights", "--config", small) == cli.EXIT_OK


def test_report_names_tampered_file(small, tmp_path, capsys):
    assert run("simulate", "--config", small) == cli.EXIT_OK
    norms = tmp_path / "run" / "solution" / "norms.csv"
    norms.write_bytes(norms.read_bytes().replace(b"0", b"1", 1))
    capsys.readouterr()
    assert run("report", tmp_path / "run") == cli.EXIT_FAIL
    assert "checksum mismatch in solution/norms.csv" in capsys.readouterr().err


def test_interpolate_fault_injection(small, tmp_path):
    assert run("simulate", "--config", small) == cli.EXIT_OK
    assert run("frequency", "--config", small) == cli.EXIT_OK
    d = tmp_path / "run" / "frequency"
    params = json.loads((d / "params.json").read_text())
    params["F2"] = 0.0
    params["F1"] = 0.0
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(params))
    cols = io.read_csv(d / "trace.csv")
    cols["N"] = cols["N"] + 100.0 * (cols["t"] > params["t2"])
    io.write_columns(tmp_path / "bad.csv", cols)
    assert run("interpolate", tmp_path / "bad.csv", bad, "--config", small) == cli.EXIT_FAIL


def test_usage_errors(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("mesh:\n  dimension: 1\n  resolutoin: 51\n")
    assert run("mesh", "--config", bad) == cli.EXIT_USAGE
    assert "bad.yaml:3: mesh.resolutoin: unknown key 'resolutoin'" in capsys.readouterr().err
    with pytest.raises(SystemExit) as exc:
        run("transmogrify")
    assert exc.value.code == cli.EXIT_USAGE
    assert run("commutator-check", "--out", tmp_path / "empty") == cli.EXIT_USAGE


def test_out_env_and_flag_precedence(small, tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "env"))
    assert run("mesh", "--config", small) == cli.EXIT_OK
    assert (tmp_path / "env" / "mesh" / "mesh.json").exists()
    assert run("mesh", "--config", small, "--out", tmp_path / "flag") == cli.EXIT_OK
    assert (tmp_path / "flag" / "mesh" / "mesh.json").exists()


def test_certify_default_is_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert run("certify", "--out", a) == cli.EXIT_OK
    assert run("certify", "--out", b) == cli.EXIT_OK
    assert (a / "certificate.json").read_bytes() == (b / "certificate.json").read_bytes()
    cert = io.read_json(a / "certificate.json")
    assert cert["passed"]
    assert all(s["margin"] is None or s["margin"] >= -(s["tolerance"] or 0.0) for s in cert["stages"])


def test_certify_zero_data_fails(tmp_path):
    p = tmp_path / "zero.yaml"
    p.write_text("initial:\n  kind: constant\n  value: 0.0\nmesh:\n  resolution: 51\n")
    assert run("certify", "--config", p) == cli.EXIT_FAIL
