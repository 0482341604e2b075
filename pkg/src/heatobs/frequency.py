"""Frequency function ``N = ⟨Sf,f⟩/‖f‖²`` along a solution and the differential system.

Along a solution of ``∂_t u - Δu + a u = 0`` the stacked field satisfies

* ``|½y' + N y| <= ‖a‖∞ y`` with ``y = ‖f‖²``,
* ``N' <= (⟨S'f,f⟩ + 2⟨Sf,Af⟩)/y + ‖a‖∞²``,

and the commutator bound upgrades the second line to
``N' <= (1+C0)/Γ N + ‖a‖∞² + C/h²``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import carleman as cm
from .heat import HeatSolution

Y_FLOOR = 1e-300


class ZeroSolutionError(ValueError):
    pass


def time_derivative(times: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Second-order centered differences on a possibly nonuniform grid (endpoints one-sided)."""
    return np.gradient(np.asarray(values, dtype=float), np.asarray(times, dtype=float), edge_order=2)


def step_scale(times: np.ndarray, gammas: np.ndarray) -> np.ndarray:
    """Local step in units of ``min(1, Γ)``, the time scale the weights vary on."""
    dt = np.gradient(times)
    return dt / np.minimum(1.0, gammas)


@dataclass
class FrequencyTrace:
    """Samples of ``y`` and ``N`` with optional exact derivatives and per-time tolerances.

    Attributes:
        times: strictly increasing sample times.
        y: ``‖f‖²`` at each time.
        N: frequency function at each time.
        T, h: horizon and weight offset, so that ``Γ = T - t + h``.
        a_norm: ``‖a‖∞``.
        X: commutator ``⟨S'f,f⟩ + 2⟨Sf,Af⟩`` per time, when measured.
        dy, dN: exact derivatives when known (synthetic traces).
        tol_energy, tol_nprime: additive tolerance budgets per time.
        energy_residuals: ``½y' + ⟨Sf,f⟩ + ∫a|f|²`` per time (interior only).
        sprime_residuals: ``d/dt⟨Sf,f⟩ - ⟨S'f,f⟩ - 2⟨Sf,∂_t f⟩`` per time (interior only).
    """

    times: np.ndarray
    y: np.ndarray
    N: np.ndarray
    T: float
    h: float
    a_norm: float = 0.0
    X: np.ndarray | None = None
    dy: np.ndarray | None = None
    dN: np.ndarray | None = None
    tol_energy: np.ndarray | None = None
    tol_nprime: np.ndarray | None = None
    energy_residuals: np.ndarray | None = None
    energy_scales: np.ndarray | None = None
    sprime_residuals: np.ndarray | None = None
    sprime_scales: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        self.N = np.asarray(self.N, dtype=float)
        if self.times.ndim != 1 or self.times.size < 3:
            raise ValueError("a trace needs at least three times")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("trace times must be strictly increasing")
        if self.y.shape != self.times.shape or self.N.shape != self.times.shape:
            raise ValueError("y and N must match times")
        if np.any(self.y < Y_FLOOR):
            raise ZeroSolutionError("y below 1e-300: solution is numerically zero")

    @property
    def gammas(self) -> np.ndarray:
        return self.T - self.times + self.h

    def y_prime(self) -> np.ndarray:
        return self.dy if self.dy is not None else time_derivative(self.times, self.y)

    def N_prime(self) -> np.ndarray:
        return self.dN if self.dN is not None else time_derivative(self.times, self.N)

    def interior(self) -> np.ndarray:
        """Mask of times where centered differences apply (all times for exact derivatives)."""
        mask = np.ones(self.times.size, dtype=bool)
        if self.dy is None or self.dN is None:
            mask[0] = mask[-1] = False
        return mask

    def window(self, t_start: float, t_end: float) -> "FrequencyTrace":
        """Sub-trace on ``[t_start, t_end]``."""
        sel = (self.times >= t_start - 1e-15) & (self.times <= t_end + 1e-15)
        pick = lambda a: None if a is None else np.asarray(a)[sel]  # noqa: E731
        return FrequencyTrace(
            self.times[sel], self.y[sel], self.N[sel], self.T, self.h, self.a_norm,
            pick(self.X), pick(self.dy), pick(self.dN), pick(self.tol_energy), pick(self.tol_nprime),
            pick(self.energy_residuals), pick(self.energy_scales),
            pick(self.sprime_residuals), pick(self.sprime_scales), dict(self.meta),
        )

    def columns(self) -> dict:
        """Columns for tabular export."""
        nan = np.full(self.times.size, np.nan)
        val = lambda a: nan if a is None else np.asarray(a)  # noqa: E731
        return {
            "t": self.times, "y": self.y, "N": self.N, "X": val(self.X),
            "energy_residual": val(self.energy_residuals), "tol_energy": val(self.tol_energy),
            "tol_nprime": val(self.tol_nprime), "sprime_residual": val(self.sprime_residuals),
        }


def build_trace(
    solution: HeatSolution,
    config: cm.CarlemanConfig,
    times: np.ndarray | None = None,
    c_tol: float = cm.C_TOL,
) -> FrequencyTrace:
    """Evaluate ``y``, ``N``, the commutator and the energy identity on stored snapshots.

    Args:
        solution: trajectory on ``[0, T]`` with ``T`` equal to ``config.T``.
        config: Carleman parameters (``s`` should come from ``calibrate_s``).
        times: subset of stored times to use (default: all).
        c_tol: tolerance constant of the budget ``C_tol(Δx^1.5 + δ²)·scale``,
            where ``δ`` is the local step in units of ``min(1, Γ)``.

    Raises:
        ZeroSolutionError: if ``y`` drops below ``1e-300``.
    """
    if abs(solution.T - config.T) > 1e-12 * max(1.0, config.T):
        raise ValueError(f"solution horizon {solution.T} differs from config T {config.T}")
    if not solution.mesh.same_as(config.mesh):
        raise ValueError("solution and weight family live on different meshes")
    idx = np.arange(solution.times.size) if times is None else np.array([solution.index_of(t) for t in times])
    ts = solution.times[idx]
    mesh = config.mesh
    a_norm = solution.potential.sup_norm
    stacks = [cm.stack(solution.fields[k], float(t), config) for k, t in zip(idx, ts)]
    y = np.array([f.norm2() for f in stacks])
    if np.any(y < Y_FLOOR):
        raise ZeroSolutionError("y below 1e-300: solution is numerically zero")
    Y = np.array([cm.inner_S(f) for f in stacks])
    X = np.array([cm.commutator_lhs(f) for f in stacks])
    aff = np.array([
        float(sum(mesh.integrate(solution.potential(mesh, f.t) * fi**2) for fi in f.values)) for f in stacks
    ])
    N = Y / y
    dy = time_derivative(ts, y)
    dY = time_derivative(ts, Y)
    energy = 0.5 * dy + Y + aff
    energy_scale = 0.5 * np.abs(dy) + np.abs(Y) + np.abs(aff)
    # d/dt⟨Sf,f⟩ against ⟨S'f,f⟩ + 2⟨Sf,∂_t f⟩ with ∂_t f by differencing the stacked fields
    vals = np.stack([f.values for f in stacks])
    df = np.gradient(vals, ts, axis=0, edge_order=2)
    sp_res = np.empty(ts.size)
    sp_scale = np.empty(ts.size)
    for k, f in enumerate(stacks):
        sprime = sum(mesh.inner_product(f.S_prime(i), f.values[i]) for i in range(f.values.shape[0]))
        cross = 2.0 * sum(mesh.inner_product(f.S(i), df[k, i]) for i in range(f.values.shape[0]))
        sp_res[k] = dY[k] - sprime - cross
        sp_scale[k] = abs(dY[k]) + abs(sprime) + abs(cross)
    gam = config.T - ts + config.h
    delta = step_scale(ts, gam)
    budget = c_tol * (mesh.spacing**1.5 + delta**2)
    dN = time_derivative(ts, N)
    tol_energy = budget * energy_scale / y
    tol_nprime = budget * (np.abs(dN) + np.abs(X / y) + a_norm**2 + np.abs(N) / gam)
    return FrequencyTrace(
        times=ts, y=y, N=N, T=config.T, h=config.h, a_norm=a_norm, X=X,
        tol_energy=tol_energy, tol_nprime=tol_nprime,
        energy_residuals=energy, energy_scales=energy_scale,
        sprime_residuals=sp_res, sprime_scales=sp_scale,
        meta={"s": config.s, "spacing": mesh.spacing, "c_tol": c_tol},
    )


@dataclass
class OdeReport:
    """Per-time slacks of the two inequalities and the emitted ``F1``, ``F2``.

    Slacks are normalized by ``y`` for the first inequality; a negative
    slack beyond the tolerance is a violation.
    """

    F1: float
    F2: float
    C0: float
    C: float
    times: np.ndarray
    slack_energy: np.ndarray
    slack_frequency: np.ndarray
    tol_energy: np.ndarray
    tol_frequency: np.ndarray
    passed_energy: bool
    passed_frequency: bool
    worst_energy_time: float | None
    worst_frequency_time: float | None

    @property
    def passed(self) -> bool:
        return self.passed_energy and self.passed_frequency

    def as_dict(self) -> dict:
        return {
            "F1": self.F1, "F2": self.F2, "C0": self.C0, "C": self.C,
            "passed": self.passed, "passed_energy": self.passed_energy,
            "passed_frequency": self.passed_frequency,
            "min_slack_energy": float(np.min(self.slack_energy)) if self.slack_energy.size else None,
            "min_slack_frequency": float(np.min(self.slack_frequency)) if self.slack_frequency.size else None,
            "worst_energy_time": self.worst_energy_time,
            "worst_frequency_time": self.worst_frequency_time,
        }


def hypothesis_slacks(trace: FrequencyTrace, F1: float, F2: float, C0: float):
    """Slacks ``F1 - |½y'/y + N|`` and ``(1+C0)N/Γ + F2 - N'`` at interior times."""
    mask = trace.interior()
    yp = trace.y_prime()
    Np = trace.N_prime()
    gam = trace.gammas
    s1 = F1 - np.abs(0.5 * yp / trace.y + trace.N)
    s2 = (1.0 + C0) * trace.N / gam + F2 - Np
    t1 = trace.tol_energy if trace.tol_energy is not None else np.zeros_like(s1)
    t2 = trace.tol_nprime if trace.tol_nprime is not None else np.zeros_like(s2)
    return trace.times[mask], s1[mask], s2[mask], np.asarray(t1)[mask], np.asarray(t2)[mask]


def check_ode_system(trace: FrequencyTrace, C0: float, C: float, abs_tol: float = 0.0) -> OdeReport:
    """Check ``|½y' + Ny| <= F1 y`` and ``N' <= (1+C0)N/Γ + F2`` at interior times.

    Emits ``F1 = ‖a‖∞`` and ``F2 = ‖a‖∞² + C/h²``. Violations are reported,
    not raised.
    """
    F1 = float(trace.a_norm)
    F2 = float(trace.a_norm**2 + C / trace.h**2)
    ts, s1, s2, t1, t2 = hypothesis_slacks(trace, F1, F2, C0)
    bad1 = s1 < -(t1 + abs_tol)
    bad2 = s2 < -(t2 + abs_tol)
    w1 = float(ts[np.argmin(s1 + t1)]) if bad1.any() else None
    w2 = float(ts[np.argmin(s2 + t2)]) if bad2.any() else None
    return OdeReport(F1, F2, C0, C, ts, s1, s2, t1, t2, not bad1.any(), not bad2.any(), w1, w2)
