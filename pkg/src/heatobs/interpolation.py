"""Three-point logarithmic-convexity lemma and its weight-integral constants.

If ``|½y' + Ny| <= F1 y`` and ``N' <= (1+C0)/Γ N + F2`` with ``Γ = T - t + h``,
then ``y(t2)^{1+M} <= y(t3) y(t1)^M e^D`` where ``M`` is a ratio of integrals
of ``Γ^{-(1+C0)}`` and ``D = 2M(F2(t3-t1)² + F1(t3-t1))``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from .frequency import Y_FLOOR, FrequencyTrace, hypothesis_slacks

ELL_MAX = 10**6
LOG_Y_SPAN = 1000.0


class InterpolationError(ValueError):
    pass


def weight_integral(ta: float, tb: float, T: float, h: float, C0: float) -> float:
    """``∫_{ta}^{tb} (T - t + h)^{-(1+C0)} dt`` in closed form."""
    if not ta < tb:
        raise InterpolationError("need ta < tb")
    if tb > T * (1 + 1e-14) + 1e-300:
        raise InterpolationError("need tb <= T")
    if C0 < 0:
        raise InterpolationError("need C0 >= 0")
    ga, gb = T - ta + h, T - tb + h
    if C0 == 0:
        return float(np.log(ga / gb))
    # (gb^-C0 - ga^-C0)/C0 without cancellation
    return float(-np.expm1(-C0 * np.log(ga / gb)) * gb ** (-C0) / C0)


def weight_integral_quadrature(ta: float, tb: float, T: float, h: float, C0: float) -> float:
    """Adaptive-quadrature oracle for :func:`weight_integral`."""
    val, _ = quad(lambda t: (T - t + h) ** (-(1.0 + C0)), ta, tb, epsabs=0.0, epsrel=1e-13, limit=200)
    return float(val)


def compute_M(t1: float, t2: float, t3: float, T: float, h: float, C0: float) -> float:
    """``M = I(t2, t3) / I(t1, t2)``."""
    _check_triple(t1, t2, t3, T)
    return weight_integral(t2, t3, T, h, C0) / weight_integral(t1, t2, T, h, C0)


def compute_D(M: float, F1: float, F2: float, t1: float, t3: float) -> float:
    """``D = 2M(F2(t3-t1)² + F1(t3-t1))``."""
    L = t3 - t1
    return float(2.0 * M * (F2 * L**2 + F1 * L))


def compute_D_sharp(M: float, F1: float, F2: float, t1: float, t2: float, t3: float) -> float:
    """Exponent proved before the final absorption (valid for every ``M > 0``).

    ``2M F2 (t2-t1)(t3-t1) + 2M F1 (t2-t1) + 2F1 (t3-t2)``; it is at most
    :func:`compute_D` whenever ``M >= 1``.
    """
    a, b = t2 - t1, t3 - t2
    return float(2.0 * M * F2 * a * (a + b) + 2.0 * M * F1 * a + 2.0 * F1 * b)


def m_ell(ell: float, C0: float) -> tuple[float, float]:
    """``M_ℓ`` at the geometry ``t3 = T, t2 = T - ℓh, t1 = T - 2ℓh`` and its upper bound.

    Returns:
        ``(((ℓ+1)^C0 - 1)/(1 - ((ℓ+1)/(2ℓ+1))^C0), (ℓ+1)^C0/(1 - (2/3)^C0))``.
    """
    if not C0 > 0:
        raise InterpolationError("m_ell needs C0 > 0")
    if ell < 1:
        raise InterpolationError("m_ell needs ell >= 1")
    value = np.expm1(C0 * np.log(ell + 1.0)) / -np.expm1(C0 * np.log((ell + 1.0) / (2.0 * ell + 1.0)))
    bound = (ell + 1.0) ** C0 / -np.expm1(C0 * np.log(2.0 / 3.0))
    if value > bound * (1 + 1e-12):
        raise InterpolationError(f"M_ell = {value} exceeds its bound {bound}")
    return float(value), float(bound)


def k_ell_bound(ell: float, h: float, a_norm: float, M_ell: float, C: float, check_bound: bool = True):
    """``K_ℓ = e^{D_ℓ}`` and the bound ``e^{C_ℓ(1 + ‖a‖^{2/3})}``.

    ``D_ℓ = 2M_ℓ((‖a‖² + C/h²)(2ℓh)² + ‖a‖(2ℓh))`` and ``C_ℓ = 2M_ℓ(1 + 4Cℓ² + 8ℓ²)``.
    Both are returned as logarithms to avoid overflow.

    Returns:
        ``(log K_ℓ, log bound)``.

    Raises:
        InterpolationError: if ``check_bound`` and ``‖a‖^{2/3} h >= 1``.
    """
    if check_bound and a_norm ** (2.0 / 3.0) * h >= 1:
        raise InterpolationError("bound branch needs ‖a‖^{2/3} h < 1")
    w = 2.0 * ell * h
    D = 2.0 * M_ell * ((a_norm**2 + C / h**2) * w**2 + a_norm * w)
    C_ell = 2.0 * M_ell * (1.0 + 4.0 * C * ell**2 + 8.0 * ell**2)
    return float(D), float(C_ell * (1.0 + a_norm ** (2.0 / 3.0)))


def _check_triple(t1, t2, t3, T):
    if not (0 <= t1 < t2 < t3 <= T * (1 + 1e-14)):
        raise InterpolationError(f"need 0 <= t1 < t2 < t3 <= T, got {t1}, {t2}, {t3}, T={T}")


@dataclass
class HypothesisReport:
    """Per-time slacks of both hypotheses (negative beyond tolerance = violation)."""

    times: np.ndarray
    slack_energy: np.ndarray
    slack_frequency: np.ndarray
    tol_energy: np.ndarray
    tol_frequency: np.ndarray
    passed: bool
    worst_time: float | None

    def as_dict(self) -> dict:
        return {
            "passed": self.passed,
            "worst_time": self.worst_time,
            "min_slack_energy": float(self.slack_energy.min()) if self.slack_energy.size else None,
            "min_slack_frequency": float(self.slack_frequency.min()) if self.slack_frequency.size else None,
        }


def check_hypotheses(
    trace: FrequencyTrace, F1: float, F2: float, C0: float, abs_tol: float = 1e-12
) -> HypothesisReport:
    """Check both differential hypotheses along ``trace``.

    The trace's own tolerance arrays (if any) plus ``abs_tol`` relative to the
    magnitude of the compared terms make up the budget.
    """
    ts, s1, s2, t1, t2 = hypothesis_slacks(trace, F1, F2, C0)
    mask = trace.interior()
    N = np.abs(trace.N[mask])
    g = trace.gammas[mask]
    t1 = t1 + abs_tol * (1.0 + N + F1)
    t2 = t2 + abs_tol * (1.0 + np.abs(trace.N_prime()[mask]) + (1 + C0) * N / g + F2)
    bad = (s1 < -t1) | (s2 < -t2)
    worst = None
    if bad.any():
        score = np.minimum((s1 + t1) / np.maximum(t1, 1e-300), (s2 + t2) / np.maximum(t2, 1e-300))
        worst = float(ts[int(np.argmin(score))])
    return HypothesisReport(ts, s1, s2, t1, t2, not bad.any(), worst)


@dataclass
class ThreePointResult:
    """Both sides of ``y(t2)^{1+M} <= y(t3) y(t1)^M e^D`` in log form."""

    t1: float
    t2: float
    t3: float
    M: float
    D: float
    D_stated: float
    D_sharp: float
    absorption_applied: bool
    log_lhs: float
    log_rhs: float
    hypotheses: dict | None

    @property
    def margin(self) -> float:
        return self.log_rhs - self.log_lhs

    def holds(self, tol: float = 0.0) -> bool:
        return self.margin >= -tol

    @property
    def lhs(self) -> float:
        return float(np.exp(self.log_lhs))

    @property
    def rhs(self) -> float:
        return float(np.exp(self.log_rhs))

    def as_dict(self) -> dict:
        return {
            "t1": self.t1, "t2": self.t2, "t3": self.t3, "M": self.M, "D": self.D,
            "D_stated": self.D_stated, "D_sharp": self.D_sharp,
            "absorption_applied": self.absorption_applied, "flag_M_below_one": not self.absorption_applied,
            "log_lhs": self.log_lhs, "log_rhs": self.log_rhs, "margin": self.margin,
            "holds": self.holds(), "hypotheses": self.hypotheses,
        }


def three_point_check(
    y1: float, y2: float, y3: float, t1: float, t2: float, t3: float,
    T: float, h: float, C0: float, F1: float, F2: float,
    trace: FrequencyTrace | None = None,
) -> ThreePointResult:
    """Evaluate the three-point inequality in log space.

    ``D`` is the stated ``2M(F2(t3-t1)² + F1(t3-t1))`` when ``M >= 1``; when
    ``M < 1`` the final absorption step does not apply and the sharper
    exponent of :func:`compute_D_sharp` is used instead (flagged).

    Raises:
        InterpolationError: for nonpositive or underflowing ``y``, or when a
            supplied trace fails :func:`check_hypotheses`.
    """
    ys = np.array([y1, y2, y3], dtype=float)
    if np.any(~np.isfinite(ys)) or np.any(ys < Y_FLOOR):
        raise InterpolationError("y values must be finite and >= 1e-300")
    _check_triple(t1, t2, t3, T)
    if F1 < 0 or F2 < 0:
        raise InterpolationError("F1, F2 must be nonnegative")
    hyp = None
    if trace is not None:
        rep = check_hypotheses(trace.window(t1, t3), F1, F2, C0)
        hyp = rep.as_dict()
        if not rep.passed:
            raise InterpolationError(f"hypotheses fail at t = {rep.worst_time}")
    M = compute_M(t1, t2, t3, T, h, C0)
    D_stated = compute_D(M, F1, F2, t1, t3)
    D_sharp = compute_D_sharp(M, F1, F2, t1, t2, t3)
    absorbed = M >= 1.0
    D = D_stated if absorbed else D_sharp
    l1, l2, l3 = np.log(ys)
    return ThreePointResult(
        float(t1), float(t2), float(t3), M, D, D_stated, D_sharp, absorbed,
        float((1.0 + M) * l2), float(l3 + M * l1 + D), hyp,
    )


def window_times(T: float, ell: float, h: float) -> tuple[float, float, float]:
    """``(T - 2ℓh, T - ℓh, T)``."""
    return T - 2.0 * ell * h, T - ell * h, T


def proof_audit(trace: FrequencyTrace, t1: float, t2: float, t3: float, C0: float, F1: float, F2: float) -> dict:
    """Evaluate the intermediate inequalities of the lemma's proof on a trace.

    Returns the slacks (in log form) of

    * ``y(t2)exp(2N(t2)∫_{t1}^{t2}(Γ2/Γ)^{1+C0}) <= y(t1)exp(2F2(t2-t1)² + 2F1(t2-t1))``,
    * ``y(t2) <= exp(2(N(t2)+F2(t3-t2))∫_{t2}^{t3}(Γ2/Γ)^{1+C0}) y(t3) exp(2F1(t3-t2))``,
    * ``(Γ^{1+C0}N)' <= F2 Γ^{1+C0}`` (minimum slack over the window).
    """
    T, h = trace.T, trace.h

    def at(arr, t):
        return float(np.interp(t, trace.times, arr))

    g2 = T - t2 + h
    i12 = g2 ** (1 + C0) * weight_integral(t1, t2, T, h, C0)
    i23 = g2 ** (1 + C0) * weight_integral(t2, t3, T, h, C0)
    y1, y2, y3 = (at(trace.y, t) for t in (t1, t2, t3))
    N2 = at(trace.N, t2)
    lhs_a = np.log(y2) + 2 * N2 * i12
    rhs_a = np.log(y1) + 2 * F2 * (t2 - t1) ** 2 + 2 * F1 * (t2 - t1)
    lhs_b = np.log(y2)
    rhs_b = 2 * (N2 + F2 * (t3 - t2)) * i23 + np.log(y3) + 2 * F1 * (t3 - t2)
    win = trace.window(t1, t3)
    g = win.gammas
    P = g ** (1 + C0) * win.N
    dP = np.gradient(P, win.times, edge_order=2) if win.dN is None else (
        g ** (1 + C0) * win.dN - (1 + C0) * g**C0 * win.N
    )
    slack_c = F2 * g ** (1 + C0) - dP
    return {
        "integrated_left": float(rhs_a - lhs_a),
        "integrated_right": float(rhs_b - lhs_b),
        "integrating_factor_min_slack": float(slack_c[1:-1].min() if win.dN is None else slack_c.min()),
    }


def _int_gamma_pow(ta: float, tb: float, T: float, h: float, p: float) -> float:
    """``∫_{ta}^{tb} Γ^p dt`` in closed form."""
    ga, gb = T - ta + h, T - tb + h
    if p == -1.0:
        return float(np.log(ga / gb))
    return float((ga ** (p + 1) - gb ** (p + 1)) / (p + 1))


@dataclass
class SyntheticTrace:
    """Closed-form trace satisfying both hypotheses exactly.

    ``N = Γ^{-(1+C0)} P`` with ``P(t) = N0 + λF2 G(t) - κt`` and
    ``G(t) = ∫_0^t Γ^{1+C0}``, so ``(Γ^{1+C0}N)' = λF2Γ^{1+C0} - κ <= F2Γ^{1+C0}``;
    ``log y = log y0 - 2∫N + 2∫g`` with ``g = ρF1 sin(νt + θ)``, ``|g| <= F1``.
    """

    T: float
    h: float
    C0: float
    F1: float
    F2: float
    N0: float
    lam: float
    kappa: float
    rho: float
    nu: float
    theta: float
    log_y0: float

    def _P(self, t):
        G = _g_int(0.0, t, self)
        return self.N0 + self.lam * self.F2 * G - self.kappa * t

    def N(self, t):
        t = np.asarray(t, dtype=float)
        gam = self.T - t + self.h
        return gam ** (-(1 + self.C0)) * np.vectorize(self._P)(t)

    def dN(self, t):
        t = np.asarray(t, dtype=float)
        gam = self.T - t + self.h
        dP = self.lam * self.F2 * gam ** (1 + self.C0) - self.kappa
        return (1 + self.C0) * self.N(t) / gam + gam ** (-(1 + self.C0)) * dP

    def _int_N(self, t: float) -> float:
        # N = Γ^{-(1+C0)}(A0 + κΓ) - λF2Γ/(2+C0) with t = T + h - Γ
        T, h, C0 = self.T, self.h, self.C0
        g0 = T + h
        A0 = self.N0 - self.kappa * (T + h) + self.lam * self.F2 * g0 ** (2 + C0) / (2 + C0)
        if t == 0.0:
            return 0.0
        return (
            A0 * _int_gamma_pow(0.0, t, T, h, -(1 + C0))
            + self.kappa * _int_gamma_pow(0.0, t, T, h, -C0)
            - self.lam * self.F2 / (2 + C0) * _int_gamma_pow(0.0, t, T, h, 1.0)
        )

    def log_y(self, t):
        t = np.atleast_1d(np.asarray(t, dtype=float))
        ig = self.rho * self.F1 * (np.cos(self.theta) - np.cos(self.nu * t + self.theta)) / self.nu
        iN = np.array([self._int_N(float(x)) for x in t])
        return self.log_y0 - 2.0 * iN + 2.0 * ig

    def y(self, t):
        return np.exp(self.log_y(t))

    def dy(self, t):
        t = np.asarray(t, dtype=float)
        g = self.rho * self.F1 * np.sin(self.nu * t + self.theta)
        return 2.0 * self.y(t) * (g - self.N(t))

    def trace(self, n: int = 201) -> FrequencyTrace:
        ts = np.linspace(0.0, self.T, n)
        return FrequencyTrace(
            times=ts, y=self.y(ts), N=self.N(ts), T=self.T, h=self.h, a_norm=self.F1,
            dy=self.dy(ts), dN=self.dN(ts), meta={"synthetic": True},
        )


def _g_int(ta: float, tb: float, st: SyntheticTrace) -> float:
    """``∫_{ta}^{tb} Γ^{1+C0}``."""
    if tb == ta:
        return 0.0
    return _int_gamma_pow(ta, tb, st.T, st.h, 1.0 + st.C0)


def random_synthetic(rng: np.random.Generator, T: float | None = None) -> SyntheticTrace:
    """Draw a synthetic trace with random admissible parameters.

    Draws whose ``log y`` spans more than ``LOG_Y_SPAN`` are redrawn; the rest
    are shifted into ``[-LOG_Y_SPAN/2, LOG_Y_SPAN/2]`` (both hypotheses and the
    inequality are invariant under ``y -> c y``), so ``y`` stays representable.
    """
    T_fixed = T
    while True:
        T = float(rng.uniform(0.2, 2.0)) if T_fixed is None else float(T_fixed)
        h = float(10 ** rng.uniform(-2, 0))
        C0 = float(rng.choice([0.0, rng.uniform(0.05, 0.95)]))
        F1 = float(rng.choice([0.0, rng.uniform(0.0, 4.0)]))
        F2 = float(rng.choice([0.0, rng.uniform(0.0, 20.0)]))
        N0 = float(rng.uniform(0.1, 5.0))
        kappa = float(rng.uniform(0.0, 0.5) * N0 / T)
        syn = SyntheticTrace(
            T=T, h=h, C0=C0, F1=F1, F2=F2, N0=N0, lam=float(rng.uniform(0, 1)), kappa=kappa,
            rho=float(rng.uniform(0, 1)), nu=float(rng.uniform(0.5, 20.0)),
            theta=float(rng.uniform(0, 2 * np.pi)), log_y0=float(rng.uniform(-5, 5)),
        )
        ly = syn.log_y(np.linspace(0.0, T, 401))
        lo, hi = float(ly.min()), float(ly.max())
        if hi - lo > LOG_Y_SPAN:
            continue
        if lo < -LOG_Y_SPAN / 2 or hi > LOG_Y_SPAN / 2:
            syn.log_y0 -= 0.5 * (lo + hi)
        return syn
