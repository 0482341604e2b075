from __future__ import annotations

import math

import numpy as np
import pytest

from heatobs import frequency as fq
from heatobs import heat
from heatobs import interpolation as ip
from heatobs import observation as ob
from heatobs.mesh import build_mesh
from heatobs.morse import interval, make_region


@pytest.fixture(scope="module")
def certificate():
    m = build_mesh(1, 201)
    return ob.certify(m, interval(m, 0.35, 0.65), heat.ZERO_POTENTIAL, np.cos(np.pi * m.x), 0.5)


def test_measure_constant_and_cosine():
    m = build_mesh(1, 101)
    sol = heat.solve(m, heat.ZERO_POTENTIAL, np.ones(m.size), 0.1, 1e-2)
    r = ob.measure(sol, interval(m, 0.4, 0.6), 0.1)
    assert r.norm_omega == pytest.approx(math.sqrt(0.2), abs=1e-12)
    assert r.norm_domain == pytest.approx(1.0) and r.norm_initial == pytest.approx(1.0)
    m = build_mesh(1, 2001)
    sol = heat.solve(m, heat.ZERO_POTENTIAL, np.cos(np.pi * m.x), 1e-2, 1e-2)
    r = ob.measure(sol, interval(m, 0.4, 0.6), 0.0)  # u(0): the stored initial datum
    exact = 0.1 + (math.sin(1.2 * math.pi) - math.sin(0.8 * math.pi)) / (4 * math.pi)
    assert r.norm_omega**2 == pytest.approx(exact, abs=1e-6)
    with pytest.raises(ValueError):
        ob.measure(sol, interval(build_mesh(1, 11), 0.4, 0.6), 0.0)


def test_choose_h():
    B = 3.0
    assert ob.choose_h(math.exp(10) * B / 2, B) == pytest.approx(0.1, rel=1e-12)
    A, B = 7.0, 0.01
    h = ob.choose_h(A, B)
    assert math.exp(-1 / h) * A == pytest.approx(B / 2, rel=1e-12)
    with pytest.raises(ob.DegenerateBranch):
        ob.choose_h(1.0, 2.0)
    assert ob.choose_h_log(0.0, -1.0) == pytest.approx(1 / (1 + math.log(2)))


def test_select_ell():
    ells = [ob.select_ell(0.5, 1.0, mu) for mu in (0.5, 1.0, 2.0, 4.0)]
    assert ells == sorted(ells, reverse=True)
    assert ob.select_ell(0.5, 1e-6, 100.0) == 2
    ell = ob.select_ell(0.5, 1.0, 1.0)
    assert (1 + ip.m_ell(ell, 0.5)[0]) / (ell + 1) <= 0.5
    assert (1 + ip.m_ell(ell - 1, 0.5)[0]) / ell > 0.5 or ell == 2
    with pytest.raises(ob.CertificationError):
        ob.select_ell(1.2, 1.0, 1.0)
    with pytest.raises(ob.CertificationError):
        ob.select_ell(0.5, 1.0, 1e-9, ell_max=50)


def test_window_grid():
    T, h, ell = 0.5, 0.01, 3
    t1, t2, _ = ip.window_times(T, ell, h)
    g = ob.window_grid(T, h, t1, t2, 5e-3, 0.05)
    assert g[0] == 0.0 and g[-1] == T and np.all(np.diff(g) > 0)
    assert t1 in g and t2 in g
    gam = T - g + h
    near = g[1:] > T - 0.05
    assert np.all(np.diff(g)[near] <= 0.05 * gam[:-1][near] * (1 + 1e-9) + 1e-15)


def test_certificate_passes_and_is_consistent(certificate):
    c = certificate
    assert c.passed, c.failed_stage
    k = c.constants
    assert k["M1"] == 2 * k["M_ell"] + 1
    assert c.beta == pytest.approx(1 / (1 + k["M1"]))
    assert c.K == pytest.approx(k["c1"] / 2)
    for s in c.stages:
        if s.margin is not None:
            assert s.margin >= -(s.tolerance or 0.0), s.name
    m = c.measurements
    lhs = (1 + k["M1"]) * math.log(m["int_uT_sq"])
    rhs = k["c1"] * k["P"] + math.log(m["int_omega_uT_sq"]) + k["M1"] * math.log(m["int_u0_sq"])
    assert lhs <= rhs
    assert c.as_dict()["schema_version"] == ob.SCHEMA_VERSION


def test_certificate_deterministic(certificate):
    m = build_mesh(1, 201)
    again = ob.certify(m, interval(m, 0.35, 0.65), heat.ZERO_POTENTIAL, np.cos(np.pi * m.x), 0.5)
    assert again.as_dict() == certificate.as_dict()


def test_certify_rejects_zero_data_and_2d():
    m = build_mesh(1, 101)
    with pytest.raises(fq.ZeroSolutionError):
        ob.certify(m, interval(m, 0.35, 0.65), heat.ZERO_POTENTIAL, np.zeros(m.size), 0.5)
    m2 = build_mesh(2, 17)
    box = make_region(m2, {"type": "box", "lower": [0.3, 0.3], "upper": [0.7, 0.7]})
    with pytest.raises(ob.CertificationError):
        ob.certify(m2, box, heat.ZERO_POTENTIAL, np.ones(m2.size), 0.5)
    with pytest.raises(ob.CertificationError):
        ob.certify(m, interval(m, 0.35, 0.65), heat.ZERO_POTENTIAL, np.ones(m.size), 0.5,
                   ob.CertifyOptions(C0=1.5))


@pytest.fixture(scope="module")
def operator():
    m = build_mesh(1, 48)
    return heat.build_solution_operator(m, heat.ZERO_POTENTIAL, 0.05, 1e-3), m


def test_adversarial_restarts_and_workers(operator):
    op, m = operator
    om = interval(m, 0.35, 0.65)
    r1 = ob.adversarial_search(op, om, 0.5, restarts=6, seed=3)
    r2 = ob.adversarial_search(op, om, 0.5, restarts=6, seed=3, workers=3)
    assert r1.log_required_K == r2.log_required_K
    assert r1.log_required_K == max(r1.restart_values)
    # the returned unit datum attains the reported value
    v = op(r1.u0)
    assert m.integrate(r1.u0**2) == pytest.approx(1.0)
    val = 0.5 / 0.5 * math.log(m.integrate(v**2)) - 0.5 * math.log(om.integrate(v**2))
    assert val == pytest.approx(r1.log_required_K, abs=1e-8)
    with pytest.raises(ValueError):
        ob.adversarial_search(op, om, 0.0)


def test_adversarial_monotone_in_observed_region(operator):
    op, m = operator
    wide = ob.adversarial_search(op, interval(m, 0.3, 0.7), 0.5, restarts=4)
    narrow = ob.adversarial_search(op, interval(m, 0.4, 0.6), 0.5, restarts=4)
    assert narrow.log_required_K >= wide.log_required_K


def test_small_sweep():
    out = ob.scaling_sweep([0.1, 0.3], [0.0, 2.0], resolution=24, restarts=2)
    assert len(out["rows"]) == 4
    assert set(out["coefficients"]) == {"k0", "k1", "k2", "k3"}
    assert all(v >= 0 for v in out["coefficients"].values())
    assert out["residual"] >= 0
