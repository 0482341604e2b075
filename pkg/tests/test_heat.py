from __future__ import annotations

import numpy as np
import pytest

from heatobs import backend, heat
from heatobs.mesh import MeshMismatchError, build_mesh


def cn_factor(lam, dt, steps):
    return ((1 - 0.5 * dt * lam) / (1 + 0.5 * dt * lam)) ** steps


def discrete_eigenvalue(m, k):
    return 4.0 / m.spacing**2 * np.sin(k * np.pi * m.spacing / 2) ** 2


def test_eigenfunction_decays_at_discrete_rate():
    m = build_mesh(1, 101)
    e = np.cos(2 * np.pi * m.x)
    sol = heat.solve(m, heat.ZERO_POTENTIAL, e, 0.1, 1e-3)
    expected = cn_factor(discrete_eigenvalue(m, 2), 1e-3, 100) * e
    assert np.max(np.abs(sol.fields[-1] - expected)) < 1e-12


def test_mass_conserved_without_potential():
    m = build_mesh(1, 64)
    u0 = np.exp(-50 * (m.x - 0.3) ** 2)
    sol = heat.solve(m, heat.ZERO_POTENTIAL, u0, 0.2, 1e-3)
    masses = [m.integrate(u) for u in sol.fields]
    assert np.ptp(masses) < 1e-13


def test_constant_potential_rate_and_convergence():
    m = build_mesh(1, 21)
    a = 3.0
    pot = heat.make_potential("constant", value=a)
    errs = []
    for dt in (1e-2, 5e-3, 2.5e-3):
        sol = heat.solve(m, pot, np.ones(m.size), 0.5, dt)
        assert sol.fields[-1][0] == pytest.approx(cn_factor(a, dt, round(0.5 / dt)), rel=1e-12)
        errs.append(abs(sol.fields[-1][0] - np.exp(-a * 0.5)))
    assert np.log2(errs[0] / errs[1]) > 1.9 and np.log2(errs[1] / errs[2]) > 1.9


def test_implicit_euler_first_order():
    m = build_mesh(1, 21)
    pot = heat.make_potential("constant", value=2.0)
    errs = [abs(heat.solve(m, pot, np.ones(m.size), 0.5, dt, "implicit-euler").fields[-1][0] - np.exp(-1.0))
            for dt in (1e-2, 5e-3)]
    assert 0.9 < np.log2(errs[0] / errs[1]) < 1.1


def test_2d_eigenfunction():
    m = build_mesh(2, 17)
    x, y = m.coords.T
    e = np.cos(np.pi * x) * np.cos(np.pi * y)
    sol = heat.solve(m, heat.ZERO_POTENTIAL, e, 0.05, 1e-3)
    lam = 2 * discrete_eigenvalue(m, 1)
    assert np.max(np.abs(sol.fields[-1] - cn_factor(lam, 1e-3, 50) * e)) < 1e-12


def test_time_dependent_potential_matches_python_backend():
    m = build_mesh(1, 33)
    pot = heat.make_potential("separable", amplitude=2.0, k=2, omega=3.0)
    assert pot.time_dependent and pot.sup_norm == 2.0
    u0 = np.cos(np.pi * m.x) + 0.2
    a = heat.solve(m, pot, u0, 0.3, 1e-2)
    backend.set_backend("python")
    try:
        b = heat.solve(m, pot, u0, 0.3, 1e-2)
    finally:
        backend.set_backend("compiled" if backend.compiled_available() else "python")
    assert np.max(np.abs(a.fields - b.fields)) < 1e-13


def test_backend_selection():
    assert backend.name() in ("compiled", "python")
    with pytest.raises(ValueError):
        backend.set_backend("fortran")


def test_store_after_and_lookup():
    m = build_mesh(1, 21)
    sol = heat.solve(m, heat.ZERO_POTENTIAL, np.ones(m.size), 0.1, 0.01, store_after=0.05)
    assert sol.times[0] == 0.0 and sol.times[1] == pytest.approx(0.05)
    assert sol.times.size == 7
    assert np.allclose(sol.at(0.1), 1.0)
    with pytest.raises(KeyError):
        sol.index_of(0.02)


def test_explicit_grid_and_validation():
    m = build_mesh(1, 21)
    grid = np.array([0.0, 0.01, 0.03, 0.1])
    sol = heat.solve(m, heat.ZERO_POTENTIAL, np.cos(np.pi * m.x), 0.1, 0.01, times=grid)
    assert np.array_equal(sol.times, grid)
    with pytest.raises(ValueError):
        heat.solve(m, heat.ZERO_POTENTIAL, np.ones(m.size), 0.1, 0.01, times=np.array([0.0, 0.2]))
    with pytest.raises(ValueError):
        heat.solve(m, heat.ZERO_POTENTIAL, np.full(m.size, np.nan), 0.1, 0.01)
    with pytest.raises(ValueError):
        heat.solve(m, heat.ZERO_POTENTIAL, np.ones(m.size), 0.1, 0.01, method="rk4")
    with pytest.raises(MeshMismatchError):
        heat.solve(m, heat.ZERO_POTENTIAL, np.ones(5), 0.1, 0.01)


def test_potentials():
    m = build_mesh(1, 11)
    tab = heat.make_potential("tabulated", values=np.linspace(-3, 1, 11))
    assert tab.sup_norm == 3.0
    assert np.allclose(tab(m, 0.7), np.linspace(-3, 1, 11))
    with pytest.raises(MeshMismatchError):
        tab(build_mesh(1, 12), 0.0)
    with pytest.raises(ValueError):
        heat.make_potential("random")
    assert heat.make_potential("constant", value=-2).describe() == {"kind": "constant", "value": -2.0,
                                                                    "sup_norm": 2.0}


def test_growth_check_nonpositive():
    m = build_mesh(1, 41)
    pot = heat.make_potential("constant", value=-1.5)
    sol = heat.solve(m, pot, np.cos(np.pi * m.x) + 1, 0.4, 1e-3)
    assert heat.growth_check(sol, 0.1, 0.4) <= 1e-12
    with pytest.raises(ValueError):
        heat.growth_check(sol, 0.3, 0.1)


def test_solution_operator_matches_solve_and_is_independent_of_workers():
    m = build_mesh(1, 32)
    pot = heat.make_potential("constant", value=0.5)
    op1 = heat.build_solution_operator(m, pot, 0.1, 1e-3)
    op3 = heat.build_solution_operator(m, pot, 0.1, 1e-3, workers=3)
    assert np.array_equal(op1.matrix, op3.matrix)
    u0 = np.sin(3 * m.x)
    assert np.allclose(op1(u0), heat.solve(m, pot, u0, 0.1, 1e-3).fields[-1], atol=1e-13)
    assert np.array_equal(heat.build_solution_operator(m, pot, 0.0, 1e-3).matrix, np.eye(m.size))
    with pytest.raises(ValueError):
        heat.build_solution_operator(build_mesh(2, 40), pot, 0.1, 1e-3)
