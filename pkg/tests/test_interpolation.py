from __future__ import annotations

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from heatobs import interpolation as ip
from heatobs.frequency import FrequencyTrace


def triple_from(rng, T, n):
    """Random admissible grid triple on ``linspace(0, T, n)``."""
    idx = np.sort(rng.choice(n, size=3, replace=False))
    ts = np.linspace(0.0, T, n)
    return tuple(float(ts[i]) for i in idx), tuple(int(i) for i in idx)


@settings(max_examples=150, deadline=None)
@given(
    ta=st.floats(0.0, 0.9), width=st.floats(1e-3, 1.0), T=st.floats(0.5, 3.0),
    h=st.floats(1e-3, 1.0), C0=st.one_of(st.just(0.0), st.floats(1e-3, 2.0)),
)
def test_weight_integral_matches_quadrature(ta, width, T, h, C0):
    a = ta * T
    b = min(a + width * T, T)
    assume(b - a > 1e-6)
    exact = ip.weight_integral(a, b, T, h, C0)
    quad = ip.weight_integral_quadrature(a, b, T, h, C0)
    assert exact == pytest.approx(quad, rel=1e-10)


def test_weight_integral_errors():
    with pytest.raises(ip.InterpolationError):
        ip.weight_integral(0.5, 0.2, 1.0, 0.1, 0.5)
    with pytest.raises(ip.InterpolationError):
        ip.weight_integral(0.0, 1.5, 1.0, 0.1, 0.5)
    with pytest.raises(ip.InterpolationError):
        ip.weight_integral(0.0, 0.5, 1.0, 0.1, -0.1)


@settings(max_examples=100, deadline=None)
@given(ell=st.integers(1, 500), C0=st.floats(0.01, 0.99), h=st.floats(1e-4, 1e-2), T=st.floats(1.0, 20.0))
def test_compute_M_at_window_geometry_is_m_ell(ell, C0, h, T):
    assume(2 * ell * h < T)
    t1, t2, t3 = ip.window_times(T, ell, h)
    val, bound = ip.m_ell(ell, C0)
    assert ip.compute_M(t1, t2, t3, T, h, C0) == pytest.approx(val, rel=1e-10)
    assert val <= bound


@settings(max_examples=100, deadline=None)
@given(M=st.floats(1.0, 1e3), F1=st.floats(0, 10), F2=st.floats(0, 100),
       a=st.floats(1e-3, 1), b=st.floats(1e-3, 1))
def test_sharp_exponent_below_stated_when_absorbing(M, F1, F2, a, b):
    t1, t2, t3 = 0.0, a, a + b
    assert ip.compute_D_sharp(M, F1, F2, t1, t2, t3) <= ip.compute_D(M, F1, F2, t1, t3) * (1 + 1e-12) + 1e-12


def test_m_ell_errors_and_k_ell():
    with pytest.raises(ip.InterpolationError):
        ip.m_ell(3, 0.0)
    with pytest.raises(ip.InterpolationError):
        ip.m_ell(0.5, 0.5)
    M = ip.m_ell(4, 0.5)[0]
    logK, logB = ip.k_ell_bound(4, 0.05, 2.0, M, 0.1)
    assert logK <= logB
    with pytest.raises(ip.InterpolationError):
        ip.k_ell_bound(4, 0.5, 8.0, M, 0.1)


def test_synthetic_traces_satisfy_three_point_inequality():
    rng = np.random.default_rng(7)
    worst = np.inf
    for _ in range(200):
        syn = ip.random_synthetic(rng)
        tr = syn.trace(101)
        assert ip.check_hypotheses(tr, syn.F1, syn.F2, syn.C0).passed
        (t1, t2, t3), (i1, i2, i3) = triple_from(rng, syn.T, 101)
        r = ip.three_point_check(tr.y[i1], tr.y[i2], tr.y[i3], t1, t2, t3, syn.T, syn.h, syn.C0,
                                 syn.F1, syn.F2, trace=tr)
        worst = min(worst, r.margin)
    assert worst >= -1e-9


def test_synthetic_derivatives_are_exact():
    syn = ip.random_synthetic(np.random.default_rng(11))
    t = np.linspace(0.1, syn.T - 0.1, 7)
    e = 1e-6
    assert np.allclose(syn.dy(t), (syn.y(t + e) - syn.y(t - e)) / (2 * e), rtol=1e-5, atol=1e-9)
    assert np.allclose(syn.dN(t), (syn.N(t + e) - syn.N(t - e)) / (2 * e), rtol=1e-5, atol=1e-8)


def test_constant_trace_has_zero_margin():
    # y ≡ 1, N ≡ 0 and F1 = F2 = 0: both sides are 0
    r = ip.three_point_check(1.0, 1.0, 1.0, 0.1, 0.4, 0.9, 1.0, 0.1, 0.5, 0.0, 0.0)
    assert abs(r.margin) <= 1e-12
    assert r.absorption_applied == (r.M >= 1)


def test_small_M_uses_sharp_exponent():
    T, h, C0 = 1.0, 0.1, 0.2
    r = ip.three_point_check(1.0, 0.5, 0.2, 0.0, 0.8, 0.85, T, h, C0, 1.0, 2.0)
    assert r.M < 1 and not r.absorption_applied
    assert r.D == r.D_sharp
    assert r.as_dict()["flag_M_below_one"]


def test_three_point_errors():
    with pytest.raises(ip.InterpolationError):
        ip.three_point_check(0.0, 1.0, 1.0, 0.1, 0.2, 0.3, 1.0, 0.1, 0.5, 0.0, 0.0)
    with pytest.raises(ip.InterpolationError):
        ip.three_point_check(1.0, 1.0, 1.0, 0.3, 0.2, 0.4, 1.0, 0.1, 0.5, 0.0, 0.0)
    with pytest.raises(ip.InterpolationError):
        ip.three_point_check(1.0, 1.0, 1.0, 0.1, 0.2, 0.3, 1.0, 0.1, 0.5, -1.0, 0.0)
    # N' = 100 with N = 0 and F2 = 0 violates N' <= (1+C0)N/Γ + F2
    t = np.linspace(0, 1, 11)
    tr = FrequencyTrace(t, np.ones(11), np.zeros(11), 1.0, 0.1, dy=np.zeros(11), dN=np.full(11, 100.0))
    with pytest.raises(ip.InterpolationError):
        ip.three_point_check(1.0, 1.0, 1.0, t[1], t[5], t[9], 1.0, 0.1, 0.5, 0.0, 0.0, trace=tr)


def test_proof_audit_on_synthetic_trace():
    syn = ip.random_synthetic(np.random.default_rng(5), T=1.0)
    tr = syn.trace(401)
    audit = ip.proof_audit(tr, 0.2, 0.5, 0.9, syn.C0, syn.F1, syn.F2)
    assert audit["integrating_factor_min_slack"] >= -1e-9
    assert audit["integrated_left"] >= -1e-3
    assert audit["integrated_right"] >= -1e-3
