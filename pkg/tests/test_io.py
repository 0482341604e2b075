from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from heatobs import heat, io
from heatobs.mesh import build_mesh


@settings(max_examples=200, deadline=None)
@given(st.floats(allow_nan=False))
def test_fmt_roundtrips_floats(x):
    assert float(io.fmt(x)) == x


def test_fmt_special_values():
    assert io.fmt(float("nan")) == "nan" and io.fmt(float("inf")) == "inf" and io.fmt(-np.inf) == "-inf"


def test_json_is_deterministic(tmp_path):
    obj = {"b": [1.0, 2.5], "a": {"z": np.float64(0.1), "y": np.arange(3)}, "c": None}
    p = io.write_json(tmp_path / "x.json", obj)
    q = io.write_json(tmp_path / "y.json", dict(obj))
    assert p.read_bytes() == q.read_bytes()
    data = io.read_json(p)
    assert next(iter(data)) == "schema_version"
    assert data["a"]["y"] == [0, 1, 2]
    json.loads(p.read_text())


def test_csv_roundtrip(tmp_path):
    cols = {"t": np.linspace(0, 1, 5), "v": np.array([1e-300, np.nan, -2.0, np.pi, 0.0]),
            "ok": np.array([True, False, True, True, False])}
    p = io.write_columns(tmp_path / "c.csv", cols)
    assert b"\r\n" in p.read_bytes()
    back = io.read_csv(p)
    assert np.array_equal(back["t"], cols["t"])
    assert np.array_equal(back["v"], cols["v"], equal_nan=True)
    assert np.array_equal(back["ok"], cols["ok"].astype(float))


def test_csv_bad_row(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("a,b\r\n1,2\r\n3\r\n")
    with pytest.raises(ValueError, match=r"bad\.csv:3: expected 2 fields"):
        io.read_csv(p)


def test_solution_roundtrip(tmp_path):
    m = build_mesh(1, 21)
    pot = heat.make_potential("separable", amplitude=1.0, k=2.0, omega=1.0)
    sol = heat.solve(m, pot, np.cos(np.pi * m.x), 0.1, 0.01)
    io.write_solution(tmp_path, sol)
    back = io.read_solution(tmp_path)
    assert np.array_equal(back.times, sol.times)
    assert np.array_equal(back.fields, sol.fields)
    assert back.potential.describe() == pot.describe()
    assert back.mesh.same_as(m)


def test_manifest_detects_tampering(tmp_path):
    m = build_mesh(1, 11)
    files = io.write_mesh(tmp_path, m)
    io.update_manifest(tmp_path, files, "abc", "mesh")
    man = io.verify_manifest(tmp_path)
    assert man["config_hash"] == "abc"
    assert set(man["files"]) == {"mesh.json", "mesh.csv"}
    (tmp_path / "mesh.csv").write_text("tampered")
    with pytest.raises(io.ChecksumError) as exc:
        io.verify_manifest(tmp_path)
    assert exc.value.path == "mesh.csv"
