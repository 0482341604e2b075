from __future__ import annotations

import numpy as np
import pytest

from heatobs.mesh import build_mesh
from heatobs.morse import (
    CurveIntersectionError,
    MorseError,
    base_morse,
    base_morse_multibump,
    build_weight_family,
    interval,
    make_region,
    make_weight_family,
    mirrored,
    rebuild_family,
    relocate_criticals,
    verify_weight_bounds,
)

MULTIBUMP_TARGETS = [[0.4], [0.5], [0.6]]


@pytest.fixture(scope="module")
def mesh():
    return build_mesh(1, 201)


@pytest.fixture(scope="module")
def multibump(mesh):
    return build_weight_family(mesh, interval(mesh, 0.35, 0.65), MULTIBUMP_TARGETS)


def test_base_morse_is_sine_with_known_hessian(mesh):
    psi = base_morse(mesh)
    assert psi.d == 1
    assert psi.peak[0] == pytest.approx(0.5, abs=1e-10)
    assert psi.max_value == pytest.approx(1.0, abs=1e-10)
    assert psi.hessians[0, 0, 0] == pytest.approx(-np.pi**2, rel=1e-4)
    assert psi.hessian_signatures == ["max"]


def test_sine_family_constants_match_closed_form(mesh):
    # φ = sin(πx) - 1: |φ|/|φ'|² = 1/(π²(1 + sin πx)) ranges over [1/(2π²), 1/π²]
    fam = make_weight_family([base_morse(mesh)], interval(mesh, 0.3, 0.7))
    rep = verify_weight_bounds(fam)
    assert rep.c1 == pytest.approx(1 / (2 * np.pi**2), rel=0.01)
    assert rep.c2 == pytest.approx(1 / np.pi**2, rel=0.01)
    assert rep.passed
    assert rep.c3 is None


def test_multibump_structure(mesh):
    bump = base_morse_multibump(mesh, 2)
    assert bump.d == 3
    assert bump.hessian_signatures == ["max", "min", "max"]
    assert bump.max_value == pytest.approx(1.0)
    mir = mirrored(bump)
    assert np.allclose(mir.critical_points[:, 0], 1 - bump.critical_points[::-1, 0], atol=1e-9)


def test_multibump_family_satisfies_all_bounds(multibump):
    rep = verify_weight_bounds(multibump)
    assert rep.passed, rep.failures
    for name in ("c1", "c2", "c3", "c4", "c5", "c6", "mu"):
        assert getattr(rep, name) > 0, name
    for member, target in zip(multibump.psi, MULTIBUMP_TARGETS):
        assert np.linalg.norm(member.peak - target) <= 1e-3


def test_regions_partition_and_weight_identities(multibump):
    fam = multibump
    assert np.all(fam.B | fam.C | fam.D)
    assert not np.any(fam.B & fam.C) and not np.any(fam.B & fam.D) and not np.any(fam.C & fam.D)
    for i in range(fam.d):
        assert fam.phi1[i].max() == pytest.approx(0.0, abs=1e-12)
        assert np.allclose(fam.phi2[i] - fam.phi1[i], -2 * fam.psi[i].values)
        assert fam.omega.contains(fam.peaks[i:i + 1])[0]
    rep = verify_weight_bounds(fam)
    outside = ~fam.ball_mask(0)
    assert rep.per_member[0]["mu"] == pytest.approx(-fam.phi1[0][outside].max())


@pytest.mark.parametrize("target", [0.4, 0.45, 0.6])
def test_relocation_1d_hits_target(mesh, target):
    psi = relocate_criticals(base_morse(mesh), [[target]])
    assert abs(psi.peak[0] - target) <= 1e-3
    assert psi.max_value == pytest.approx(1.0, abs=1e-3)
    assert np.all(psi.values[mesh.boundary] == 0)


def test_relocation_2d_hits_target():
    m = build_mesh(2, 65)
    psi = relocate_criticals(base_morse(m), [[0.3, 0.7]])
    assert np.linalg.norm(psi.peak - [0.3, 0.7]) <= 1e-3
    assert psi.d == 1


def test_order_reversing_cycle_rejected(mesh):
    bump = base_morse_multibump(mesh, 2)
    with pytest.raises(CurveIntersectionError):
        relocate_criticals(bump, [[0.4], [0.5], [0.6]], cycle_index=2)


def test_errors(mesh):
    with pytest.raises(MorseError):
        base_morse_multibump(build_mesh(1, 20), 3)
    with pytest.raises(MorseError):
        make_weight_family([base_morse(mesh)], interval(mesh, 0.6, 0.8))
    with pytest.raises(ValueError):
        make_region(mesh, [{"type": "interval", "bounds": [0.2, 0.4]},
                           {"type": "interval", "bounds": [0.3, 0.5]}])
    with pytest.raises(MorseError):
        build_weight_family(mesh, interval(mesh, 0.35, 0.65), [[0.4], [0.6]])


def test_rebuild_on_finer_mesh(multibump):
    fine = build_mesh(1, 401)
    fam = rebuild_family(multibump, fine)
    assert fam.mesh is fine
    assert np.allclose(fam.peaks, multibump.peaks, atol=1e-3)
    assert np.allclose(fam.phi1[:, ::2], multibump.phi1, atol=1e-4)


def test_region_measure_and_depth(mesh):
    om = interval(mesh, 0.35, 0.65)
    assert om.measure == pytest.approx(0.3, abs=1e-14)
    assert om.depth(np.array([[0.5]]))[0] == pytest.approx(0.15)
    assert om.depth(np.array([[0.9]]))[0] == 0.0
    m2 = build_mesh(2, 33)
    box = make_region(m2, {"type": "box", "lower": [0.25, 0.25], "upper": [0.75, 0.5]})
    assert box.measure == pytest.approx(0.125, abs=1e-14)
