from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from heatobs.mesh import MeshMismatchError, build_mesh, interval_hat_weights


def sbp_residual(m, f, g):
    """``∫ f Δg + ∫ ∇f·∇g - ∫_∂ f ∂_n g``; zero in the continuum."""
    grad = np.sum(m.gradient(f) * m.gradient(g), axis=1)
    return (m.inner_product(f, m.laplacian(g)) + m.integrate(grad)
            - m.boundary_integral(f[m.boundary] * m.normal_derivative(g)))


def observed_order(spacings, errors):
    return float(np.polyfit(np.log(spacings), np.log(np.abs(errors)), 1)[0])


def test_trapezoid_exact_on_linear_and_full_period():
    m = build_mesh(1, 51)
    assert m.integrate(m.x) == pytest.approx(0.5, abs=1e-15)
    # cos² over a full period: trapezoid is exact
    assert m.integrate(np.cos(np.pi * m.x) ** 2) == pytest.approx(0.5, abs=1e-14)
    m2 = build_mesh(2, 17)
    assert m2.integrate(np.ones(m2.size)) == pytest.approx(1.0, abs=1e-14)
    assert m2.boundary_integral(np.ones(m2.boundary.size)) == pytest.approx(4.0, abs=1e-13)


@pytest.mark.parametrize("dim", [1, 2])
def test_neumann_matrix_self_adjoint_and_semidefinite(dim):
    m = build_mesh(dim, 21)
    L = m.neumann_matrix.toarray()
    W = np.diag(m.weights)
    assert np.allclose(W @ L, (W @ L).T, atol=1e-9)
    ev = np.linalg.eigvals(np.sqrt(W) @ L @ np.linalg.inv(np.sqrt(W)))
    assert ev.real.max() < 1e-8
    assert np.allclose(m.laplacian_neumann(np.ones(m.size)), 0.0)


@pytest.mark.parametrize("k", [1, 2, 5])
def test_neumann_eigenfunction_discrete_eigenvalue(k):
    # the ghost-node reflection keeps cos(kπx) an exact eigenvector
    m = build_mesh(1, 41)
    e = np.cos(k * np.pi * m.x)
    lam = 4.0 / m.spacing**2 * np.sin(k * np.pi * m.spacing / 2) ** 2
    assert np.allclose(m.laplacian_neumann(e), -lam * e, atol=1e-9)


def test_2d_eigenfunction():
    m = build_mesh(2, 33)
    x, y = m.coords.T
    e = np.cos(np.pi * x) * np.cos(2 * np.pi * y)
    lam = sum(4.0 / m.spacing**2 * np.sin(k * np.pi * m.spacing / 2) ** 2 for k in (1, 2))
    assert np.allclose(m.laplacian_neumann(e), -lam * e, atol=1e-8)


def test_difference_operators_exact_on_polynomials():
    m = build_mesh(1, 17)
    x = m.x
    assert np.allclose(m.gradient(x**2)[:, 0], 2 * x, atol=1e-12)
    assert np.allclose(m.laplacian(x**3), 6 * x, atol=1e-9)
    assert np.allclose(m.normal_derivative(x**2), [0.0, 2.0], atol=1e-12)
    m2 = build_mesh(2, 9)
    X, Y = m2.coords.T
    H = m2.hessian(X * Y)
    assert np.allclose(H[:, 0, 1], 1.0, atol=1e-12)
    assert np.allclose(m2.tangential_derivative(X), -m2.normals[:, 1], atol=1e-12)


def test_sbp_and_eigen_errors_converge_at_second_order():
    hs, sbp, eig = [], [], []
    for n in (51, 101, 201):
        m = build_mesh(1, n)
        x = m.x
        sbp.append(sbp_residual(m, np.exp(x) * np.sin(2 * x) + x**2, np.cos(3 * x) + x**3))
        e = np.cos(2 * np.pi * x)
        eig.append(np.max(np.abs(m.laplacian_neumann(e) + (2 * np.pi) ** 2 * e)))
        hs.append(m.spacing)
    assert observed_order(hs, sbp) >= 1.9
    assert observed_order(hs, eig) >= 1.9


def test_sbp_in_2d_small():
    m = build_mesh(2, 65)
    X, Y = m.coords.T
    assert abs(sbp_residual(m, np.exp(X) * np.sin(Y), np.cos(2 * X) * Y**3)) < 0.05


def test_build_mesh_rejects_bad_input():
    with pytest.raises(ValueError):
        build_mesh(3, 10)
    with pytest.raises(ValueError):
        build_mesh(1, 5)


def test_mismatch_detected():
    m = build_mesh(1, 11)
    with pytest.raises(MeshMismatchError):
        m.inner_product(np.ones(11), np.ones(12))
    assert not m.same_as(build_mesh(1, 12))
    assert m.same_as(build_mesh(1, 11))


def test_refine_and_resample():
    m = build_mesh(1, 11)
    fine = m.refine(4)
    assert fine.resolution == 41
    assert np.allclose(fine.x[::4], m.x)
    f = np.cos(np.pi * m.x)
    g = m.resample(f, fine)
    assert np.max(np.abs(g - np.cos(np.pi * fine.x))) < 1e-3
    with pytest.raises(MeshMismatchError):
        m.resample(f, build_mesh(2, 11))


@settings(max_examples=60, deadline=None)
@given(a=st.floats(0.01, 0.98), width=st.floats(0.005, 0.5), n=st.integers(9, 300))
def test_hat_weights_reproduce_interval_length(a, width, n):
    b = min(a + width, 0.995)
    x = np.linspace(0, 1, n)
    w = interval_hat_weights(x, a, b)
    assert w.sum() == pytest.approx(b - a, abs=1e-12)
    assert np.all(w >= -1e-15)
