"""Neumann heat equation with a bounded potential: ``u_t - Δu + a u = 0``."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from . import backend
from .mesh import Mesh, MeshMismatchError

MAX_OPERATOR_NODES = 1024


@dataclass(frozen=True)
class Potential:
    """Bounded potential ``a(x, t)``.

    Attributes:
        kind: ``"constant"``, ``"separable"`` or ``"tabulated"``.
        params: parameters of the kind (see :func:`make_potential`).
        sup_norm: an upper bound for ``|a|`` over the domain and all times.
        time_dependent: whether ``a`` varies in time.
    """

    kind: str
    params: dict
    sup_norm: float
    time_dependent: bool
    _func: Callable = field(repr=False, compare=False)

    def __call__(self, mesh: Mesh, t: float) -> np.ndarray:
        return np.asarray(self._func(mesh, t), dtype=float) * np.ones(mesh.size)

    def describe(self) -> dict:
        return {"kind": self.kind, **self.params, "sup_norm": self.sup_norm}


def make_potential(kind: str = "constant", **params) -> Potential:
    """Build a potential.

    Kinds:
        constant: ``value``.
        separable: ``amplitude * cos(k π x_1)[cos(k π x_2)] * cos(omega t)``
            with keys ``amplitude``, ``k`` (default 2), ``omega`` (default 0).
        tabulated: ``values``, one per mesh node, time independent.
    """
    if kind == "constant":
        value = float(params.get("value", 0.0))

        return Potential("constant", {"value": value}, abs(value), False, lambda m, t: value)
    if kind == "separable":
        amp = float(params.get("amplitude", 0.0))
        k = float(params.get("k", 2.0))
        omega = float(params.get("omega", 0.0))

        def func(m: Mesh, t: float):
            shape = np.prod(np.cos(k * np.pi * m.coords), axis=1)
            return amp * shape * np.cos(omega * t)

        return Potential(
            "separable",
            {"amplitude": amp, "k": k, "omega": omega},
            abs(amp),
            omega != 0.0,
            func,
        )
    if kind == "tabulated":
        values = np.asarray(params["values"], dtype=float)

        def func(m: Mesh, t: float):
            if values.size != m.size:
                raise MeshMismatchError(
                    f"tabulated potential has {values.size} values, mesh has {m.size} nodes"
                )
            return values

        return Potential(
            "tabulated",
            {"values": values.tolist()},
            float(np.max(np.abs(values))) if values.size else 0.0,
            False,
            func,
        )
    raise ValueError(f"unknown potential kind {kind!r}")


ZERO_POTENTIAL = make_potential("constant", value=0.0)


@dataclass
class HeatSolution:
    """Stored trajectory of the heat equation."""

    mesh: Mesh
    times: np.ndarray
    fields: np.ndarray  # (n_times, n_nodes)
    potential: Potential
    dt: float
    method: str

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        if self.times[0] != 0.0:
            raise ValueError("trajectory must start at t = 0")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")
        if not np.all(np.isfinite(self.fields)):
            raise FloatingPointError("non-finite values in heat solution")

    @property
    def T(self) -> float:
        return float(self.times[-1])

    def index_of(self, t: float, tol: float = 1e-12) -> int:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > tol * max(1.0, abs(t)):
            raise KeyError(f"time {t!r} is not a stored snapshot")
        return k

    def at(self, t: float) -> np.ndarray:
        """Snapshot at a stored time."""
        return self.fields[self.index_of(t)]

    def norms(self) -> np.ndarray:
        return np.sqrt(np.maximum(self.fields**2 @ self.mesh.weights, 0.0))


def time_grid(T: float, dt: float) -> np.ndarray:
    """Uniform grid ``0, dt, 2dt, ...`` ending exactly at ``T``.

    The last step is shortened when ``T`` is not a multiple of ``dt``.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if T < dt * (1 - 1e-12):
        raise ValueError("T must be at least dt")
    n = int(np.floor(T / dt + 1e-9))
    grid = dt * np.arange(n + 1)
    if T - grid[-1] > 1e-9 * dt:
        grid = np.append(grid, T)
    grid[-1] = T
    return grid


def _implicit_blocks(mesh: Mesh) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    L = mesh.neumann_matrix.tocsr()
    return L.diagonal(-1).copy(), L.diagonal(0).copy(), L.diagonal(1).copy()


def _march(mesh, potential, u0_cols, times, theta, store):
    """Run the theta scheme over ``times`` for every column of ``u0_cols``."""
    dts = np.diff(times)
    half = times[:-1] + 0.5 * dts
    if potential.time_dependent:
        pot = np.stack([potential(mesh, t) for t in half])
    else:
        pot = potential(mesh, 0.0)[None, :]

    if mesh.dimension == 1:
        lo, di, up = _implicit_blocks(mesh)
        return backend.theta_march(
            lo, di, up,
            np.ascontiguousarray(pot),
            np.ascontiguousarray(dts),
            float(theta),
            np.ascontiguousarray(u0_cols),
            np.ascontiguousarray(store, dtype=np.uint8),
        )

    L = mesh.neumann_matrix
    eye = sp.identity(mesh.size, format="csc")
    u = np.array(u0_cols, dtype=float)
    out = [u.copy()] if store[0] else []
    cache: dict = {}
    for k, dt in enumerate(dts):
        a = pot[k if pot.shape[0] > 1 else 0]
        key = (round(dt, 15), k if potential.time_dependent else -1)
        if key not in cache:
            if potential.time_dependent:
                cache.clear()
            op = L - sp.diags(a)
            cache[key] = (splu((eye - theta * dt * op).tocsc()), op)
        lu, op = cache[key]
        u = lu.solve(u + (1.0 - theta) * dt * (op @ u))
        if store[k + 1]:
            out.append(u.copy())
    return np.stack(out)


def solve(
    mesh: Mesh,
    potential: Potential,
    u0: np.ndarray,
    T: float,
    dt: float,
    method: str = "crank-nicolson",
    times: np.ndarray | None = None,
    store_after: float | None = None,
) -> HeatSolution:
    """Integrate the Neumann heat equation from ``u0`` up to time ``T``.

    Args:
        mesh: spatial mesh.
        potential: bounded potential, sampled at half steps.
        u0: initial nodal values.
        T: final time.
        dt: time step (ignored when ``times`` is given, except as metadata).
        method: ``"crank-nicolson"`` or ``"implicit-euler"``.
        times: optional explicit increasing time grid from 0 to ``T``.
        store_after: keep only ``t = 0`` and times ``>= store_after``.

    Returns:
        The trajectory at every time level.
    """
    u0 = np.asarray(u0, dtype=float)
    mesh.check(u0)
    if not np.all(np.isfinite(u0)):
        raise ValueError("initial data must be finite")
    theta = {"crank-nicolson": 0.5, "implicit-euler": 1.0}.get(method)
    if theta is None:
        raise ValueError(f"unknown method {method!r}")
    if times is None:
        grid = time_grid(T, dt)
    else:
        grid = np.asarray(times, dtype=float)
        if grid[0] != 0.0 or abs(grid[-1] - T) > 1e-14 * max(1.0, T) or np.any(np.diff(grid) <= 0):
            raise ValueError("times must increase from 0 to T")
    store = np.ones(grid.size, dtype=bool)
    if store_after is not None:
        store = grid >= store_after - 1e-15 * max(1.0, T)
        store[0] = True
    fields = _march(mesh, potential, u0[:, None], grid, theta, store)[:, :, 0]
    return HeatSolution(mesh, grid[store], fields, potential, float(dt), method)


def growth_check(solution: HeatSolution, t1: float, t2: float) -> float:
    """``‖u(t2)‖ - exp((t2 - t1)‖a‖∞)‖u(t1)‖``; nonpositive for exact solutions."""
    if not 0.0 <= t1 <= t2 <= solution.T:
        raise ValueError("need 0 <= t1 <= t2 <= T")
    m = solution.mesh
    n1 = m.norm(solution.at(t1))
    n2 = m.norm(solution.at(t2))
    return float(n2 - np.exp((t2 - t1) * solution.potential.sup_norm) * n1)


@dataclass
class SolutionOperator:
    """Dense matrix ``E`` with ``u(t) = E u(0)``."""

    mesh: Mesh
    matrix: np.ndarray
    t: float
    potential: Potential

    def __call__(self, u0: np.ndarray) -> np.ndarray:
        return self.matrix @ u0


def build_solution_operator(
    mesh: Mesh,
    potential: Potential,
    t: float,
    dt: float,
    method: str = "crank-nicolson",
    workers: int = 1,
) -> SolutionOperator:
    """Dense solution operator by propagating the canonical basis.

    Columns are split into blocks that may be propagated concurrently; the
    result does not depend on ``workers``.
    """
    if mesh.size > MAX_OPERATOR_NODES:
        raise ValueError(
            f"dense solution operator limited to {MAX_OPERATOR_NODES} nodes, mesh has {mesh.size}"
        )
    n = mesh.size
    if t == 0:
        return SolutionOperator(mesh, np.eye(n), 0.0, potential)
    theta = {"crank-nicolson": 0.5, "implicit-euler": 1.0}[method]
    grid = time_grid(t, dt)
    store = np.zeros(grid.size, dtype=bool)
    store[-1] = True
    blocks = np.array_split(np.arange(n), max(1, int(workers)))

    def run(cols):
        basis = np.zeros((n, cols.size))
        basis[cols, np.arange(cols.size)] = 1.0
        return _march(mesh, potential, basis, grid, theta, store)[-1]

    if workers > 1:
        with ThreadPoolExecutor(max_workers=int(workers)) as pool:
            parts = list(pool.map(run, blocks))
    else:
        parts = [run(b) for b in blocks]
    return SolutionOperator(mesh, np.hstack(parts), float(t), potential)
