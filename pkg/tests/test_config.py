from __future__ import annotations

import numpy as np
import pytest

from heatobs.config import ConfigError, default_config_text, load_config, load_config_text


def test_default_config_loads_and_builds():
    cfg = load_config()
    assert cfg.mesh == {"dimension": 1, "resolution": 201}
    m = cfg.build_mesh()
    assert cfg.build_omega(m).measure == pytest.approx(0.3)
    assert cfg.build_potential().sup_norm == 0.0
    assert np.allclose(cfg.initial_values(m), np.cos(np.pi * m.x))
    assert len(cfg.config_hash) == 64
    assert load_config_text(default_config_text()).config_hash == cfg.config_hash


def test_unknown_key_reports_line_and_path():
    text = "mesh:\n  dimension: 1\n  resolutoin: 51\n"
    with pytest.raises(ConfigError) as exc:
        load_config_text(text, "bad.yaml")
    assert str(exc.value) == "bad.yaml:3: mesh.resolutoin: unknown key 'resolutoin'"
    assert exc.value.line == 3


@pytest.mark.parametrize("text, path", [
    ("mesh:\n  resolution: 4\n", "mesh.resolution"),
    ("solver:\n  T: -1\n", "solver.T"),
    ("pipeline:\n  C0: 1.5\n", "pipeline.C0"),
    ("potential:\n  kind: constant\n  amplitude: 2\n", "potential.amplitude"),
    ("potential:\n  kind: tabulated\n", "potential"),
    ("initial:\n  kind: cosine\n  modes: [[1, 2, 3]]\n", "initial.modes.0"),
    ("omega:\n  - type: disk\n", "omega.0"),
    ("seed: -3\n", "seed"),
    ("weights:\n  d: 3\n  targets: [[0.5]]\n", "weights.targets"),
    ("colour: red\n", "colour"),
])
def test_invalid_values_name_the_key(text, path):
    with pytest.raises(ConfigError) as exc:
        load_config_text(text)
    assert exc.value.key_path == path


def test_malformed_yaml():
    with pytest.raises(ConfigError) as exc:
        load_config_text("mesh: [1, 2\n")
    assert "malformed YAML" in str(exc.value)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.yaml")


def test_output_dir_relative_to_config(tmp_path):
    p = tmp_path / "exp.yaml"
    p.write_text("output: results\nseed: 4\n")
    cfg = load_config(p)
    assert cfg.output_dir() == tmp_path / "results"
    assert str(cfg.output_dir("elsewhere")) == "elsewhere"
    assert cfg.seed == 4


def test_hash_tracks_content():
    a = load_config_text("seed: 1\n")
    b = load_config_text("seed: 1\nmesh:\n  resolution: 201\n")
    c = load_config_text("seed: 2\n")
    assert a.config_hash == b.config_hash != c.config_hash
    a.seed = 2
    assert a.rehashed().config_hash == c.config_hash


def test_initial_kinds():
    cfg = load_config_text("initial:\n  kind: random\n  count: 4\n  seed: 9\n")
    m = cfg.build_mesh()
    assert np.array_equal(cfg.initial_values(m), cfg.initial_values(m))
    cfg = load_config_text("mesh:\n  resolution: 11\ninitial:\n  kind: values\n  values: [1,2,3,4,5,6,7,8,9,10,11]\n")
    assert cfg.initial_values(cfg.build_mesh())[-1] == 11
    cfg = load_config_text("mesh:\n  dimension: 2\n  resolution: 9\ninitial:\n  modes: [[1, 0, 2.0]]\n")
    m = cfg.build_mesh()
    assert np.allclose(cfg.initial_values(m), 2 * np.cos(np.pi * m.coords[:, 0]))
