"""Carleman-conjugated operators for the stacked weighted system.

With ``Φ_i = s φ_i / Γ`` and ``Γ(t) = T - t + h`` the weighted fields
``f_i = u exp(Φ_i / 2)`` satisfy ``∂_t f + S f = A f - a f`` where

* ``A f = -∇Φ·∇f - ½ ΔΦ f`` (antisymmetric part),
* ``S f = -Δf - η f`` with ``η = ½ ∂_tΦ + ¼ |∇Φ|²`` (symmetric part),
* ``S' f = -∂_t η f``.

Members ``0..d-1`` use ``φ_{i,1}`` and members ``d..2d-1`` use ``φ_{i,2}``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .mesh import Mesh
from .morse import WeightFamily

C_TOL = 10.0


class CarlemanError(ValueError):
    pass


@dataclass(frozen=True)
class CarlemanConfig:
    """Weight parameters ``s``, ``h`` and horizon ``T`` for a weight family."""

    s: float
    h: float
    T: float
    family: WeightFamily = field(repr=False)

    def __post_init__(self):
        if not 0 < self.s <= 1:
            raise CarlemanError(f"s must lie in (0, 1], got {self.s}")
        if not 0 < self.h <= 1:
            raise CarlemanError(f"h must lie in (0, 1], got {self.h}")
        if not self.T > 0:
            raise CarlemanError(f"T must be positive, got {self.T}")

    @property
    def mesh(self) -> Mesh:
        return self.family.mesh

    @property
    def n_members(self) -> int:
        return 2 * self.family.d


@dataclass(frozen=True, eq=False)
class WeightGeometry:
    """Spatial derivatives of every member ``φ_i`` (time independent)."""

    phi: np.ndarray  # (m, N)
    grad: np.ndarray  # (m, N, dim)
    grad2: np.ndarray  # (m, N)
    lap: np.ndarray  # (m, N)
    grad_lap: np.ndarray  # (m, N, dim)
    hess: np.ndarray  # (m, N, dim, dim)
    dn: np.ndarray  # (m, Nb)


@lru_cache(maxsize=16)
def geometry(family: WeightFamily) -> WeightGeometry:
    mesh = family.mesh
    phis = family.members
    grads = np.stack([mesh.gradient(p) for p in phis])
    laps = np.stack([mesh.laplacian(p) for p in phis])
    grad_laps = np.stack([mesh.gradient(l) for l in laps])
    hess = np.stack([mesh.hessian(p) for p in phis])
    dn = np.stack([mesh.normal_derivative(p) for p in phis])
    return WeightGeometry(phis, grads, np.sum(grads**2, axis=2), laps, grad_laps, hess, dn)


def gamma(t: float, config: CarlemanConfig) -> float:
    """``Γ(t) = T - t + h``."""
    if not -1e-12 <= t <= config.T * (1 + 1e-12):
        raise CarlemanError(f"t = {t} outside [0, T]")
    return config.T - t + config.h


def weight(i: int, t: float, config: CarlemanConfig) -> np.ndarray:
    """``Φ_i(·, t)``."""
    return config.s * config.family.member(i) / gamma(t, config)


def eta(i: int, t: float, config: CarlemanConfig) -> np.ndarray:
    """``η_i = s(2φ_i + s|∇φ_i|²) / (4Γ²)``, exact in time."""
    g = geometry(config.family)
    G = gamma(t, config)
    s = config.s
    return s * (2.0 * g.phi[i] + s * g.grad2[i]) / (4.0 * G**2)


def eta_dt(i: int, t: float, config: CarlemanConfig) -> np.ndarray:
    """``∂_t η_i = 2η_i / Γ``."""
    return 2.0 * eta(i, t, config) / gamma(t, config)


@dataclass(eq=False)
class StackedField:
    """The ``2d`` weighted fields at one time.

    When ``u`` is kept, derivatives of ``f_i`` are taken through the
    conjugation ``∇f = e^{Φ/2}(∇u + ½u∇Φ)`` so that only smooth factors are
    differenced; otherwise the mesh operators act on ``f_i`` directly.
    """

    values: np.ndarray  # (2d, N)
    t: float
    config: CarlemanConfig = field(repr=False)
    u: np.ndarray | None = field(default=None, repr=False)
    _cache: dict = field(default_factory=dict, repr=False)

    def norm2(self) -> float:
        return float(np.sum(self.values**2 @ self.config.mesh.weights))

    def derivatives(self, i: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(∇f_i, Δf_i, ∂_n f_i)``."""
        key = ("d", i)
        if key in self._cache:
            return self._cache[key]
        mesh = self.config.mesh
        fi = self.values[i]
        if self.u is None:
            out = (mesh.gradient(fi), mesh.laplacian(fi), mesh.normal_derivative(fi))
        else:
            if "u" not in self._cache:
                u = self.u
                self._cache["u"] = (mesh.gradient(u), mesh.laplacian(u), mesh.normal_derivative(u))
            gu, lu, nu = self._cache["u"]
            g = geometry(self.config.family)
            c = self.config.s / gamma(self.t, self.config)
            e = np.exp(0.5 * c * g.phi[i])
            gP = c * g.grad[i]
            u = self.u
            grad = e[:, None] * (gu + 0.5 * u[:, None] * gP)
            lap = e * (lu + np.einsum("na,na->n", gu, gP) + 0.5 * u * c * g.lap[i] + 0.25 * u * c**2 * g.grad2[i])
            bd = mesh.boundary
            dn = e[bd] * (nu + 0.5 * u[bd] * c * g.dn[i])
            out = (grad, lap, dn)
        self._cache[key] = out
        return out

    def A(self, i: int) -> np.ndarray:
        """``A f_i``."""
        g = geometry(self.config.family)
        c = self.config.s / gamma(self.t, self.config)
        gf = self.derivatives(i)[0]
        return -c * np.einsum("nk,nk->n", g.grad[i], gf) - 0.5 * c * g.lap[i] * self.values[i]

    def S(self, i: int) -> np.ndarray:
        """``S f_i``."""
        return -self.derivatives(i)[1] - eta(i, self.t, self.config) * self.values[i]

    def S_prime(self, i: int) -> np.ndarray:
        """``S' f_i``."""
        return -eta_dt(i, self.t, self.config) * self.values[i]


def stack(u: np.ndarray, t: float, config: CarlemanConfig, keep_u: bool = True) -> StackedField:
    """``f_i = u exp(Φ_i / 2)`` for every member."""
    u = np.asarray(u, dtype=float)
    config.mesh.check(u)
    G = gamma(t, config)
    phis = config.family.members
    vals = u[None, :] * np.exp(0.5 * config.s * phis / G)
    return StackedField(vals, float(t), config, u.copy() if keep_u else None)


def from_values(values: np.ndarray, t: float, config: CarlemanConfig) -> StackedField:
    """Wrap arbitrary member fields (derivatives by direct differencing)."""
    values = np.asarray(values, dtype=float)
    if values.shape != (config.n_members, config.mesh.size):
        raise CarlemanError(f"expected shape {(config.n_members, config.mesh.size)}, got {values.shape}")
    gamma(t, config)
    return StackedField(values.copy(), float(t), config, None)


def unstack(f: StackedField, i: int) -> np.ndarray:
    """Recover ``u`` from member ``i``."""
    return f.values[i] * np.exp(-0.5 * weight(i, f.t, f.config))


def apply_A(fi: np.ndarray, i: int, t: float, config: CarlemanConfig) -> np.ndarray:
    """``A f = -∇Φ·∇f - ½ ΔΦ f``."""
    g = geometry(config.family)
    c = config.s / gamma(t, config)
    gf = config.mesh.gradient(fi)
    return -c * np.einsum("nk,nk->n", g.grad[i], gf) - 0.5 * c * g.lap[i] * fi


def apply_S(fi: np.ndarray, i: int, t: float, config: CarlemanConfig) -> np.ndarray:
    """``S f = -Δf - η f`` (no boundary condition imposed on ``f``)."""
    return -config.mesh.laplacian(fi) - eta(i, t, config) * fi


def apply_S_prime(fi: np.ndarray, i: int, t: float, config: CarlemanConfig) -> np.ndarray:
    """``S' f = -∂_t η f``."""
    return -eta_dt(i, t, config) * fi


def robin_residual(f: StackedField) -> np.ndarray:
    """``∂_n f_i - ½ ∂_nΦ_i f_i`` at the boundary nodes, shape ``(2d, Nb)``."""
    mesh = f.config.mesh
    g = geometry(f.config.family)
    c = f.config.s / gamma(f.t, f.config)
    out = np.empty((f.values.shape[0], mesh.boundary.size))
    for i, fi in enumerate(f.values):
        out[i] = f.derivatives(i)[2] - 0.5 * c * g.dn[i] * fi[mesh.boundary]
    return out


def inner_A(f: StackedField) -> float:
    """``⟨A f, f⟩`` over the stacked family (vanishes by pairing)."""
    m = f.config.mesh
    return float(sum(m.inner_product(f.A(i), fi) for i, fi in enumerate(f.values)))


def _grad_energy(f: StackedField, i: int) -> float:
    return f.config.mesh.integrate(np.sum(f.derivatives(i)[0] ** 2, axis=1))


def inner_S(f: StackedField) -> float:
    """``⟨S f, f⟩`` in the form ``Σ ∫|∇f_i|² - ∫η_i|f_i|²`` (boundary terms cancel)."""
    m = f.config.mesh
    total = 0.0
    for i, fi in enumerate(f.values):
        total += _grad_energy(f, i) - m.integrate(eta(i, f.t, f.config) * fi**2)
    return float(total)


def inner_S_operator(f: StackedField) -> float:
    """``⟨S f, f⟩`` evaluated with the operator ``S`` directly."""
    m = f.config.mesh
    return float(sum(m.inner_product(f.S(i), fi) for i, fi in enumerate(f.values)))


def norm_S2(f: StackedField) -> float:
    """``‖S f‖²``."""
    m = f.config.mesh
    return float(sum(m.integrate(f.S(i) ** 2) for i in range(f.values.shape[0])))


def tolerance(mesh: Mesh, scale: float, c_tol: float = C_TOL) -> float:
    """Quadrature tolerance ``C_tol Δx^1.5 scale``."""
    return c_tol * mesh.spacing**1.5 * scale


@dataclass
class CommutatorReport:
    """Both sides of the commutator identity and its named pieces.

    Volume pieces: ``hessian_term = -2Σ∫∇f∇²Φ∇f``, ``laplacian_gradient_term =
    -Σ∫(∇f·Δ∇Φ) f`` and ``weight_term = -(2/Γ)Σ∫(η + ¼|∇Φ|² + (s/4)∇Φ∇²φ∇Φ)|f|²``.
    Boundary pieces: ``b_grad = 2Σ∮∂_nf ∇Φ·∇f``, ``b_normal = -Σ∮∂_nΦ|∇f|²``,
    ``b_lap = Σ∮∂_nf ΔΦ f``, ``b_eta = Σ∮η∂_nΦ|f|²``.
    """

    t: float
    spacing: float
    lhs: float
    hessian_term: float
    laplacian_gradient_term: float
    weight_term: float
    b_grad: float
    b_normal: float
    b_lap: float
    b_eta: float
    identity_residual: float
    identity_scale: float
    prop_i_residual: float
    prop_i_scale: float
    prop_ii_residual: float
    prop_ii_scale: float
    inner_A: float
    inner_A_scale: float

    @property
    def rhs(self) -> float:
        return (
            self.hessian_term + self.laplacian_gradient_term + self.weight_term
            + self.b_grad + self.b_normal + self.b_lap + self.b_eta
        )

    @property
    def cancellations(self) -> dict:
        """Boundary sums that vanish for the paired family."""
        return {
            "eta_flux": self.b_eta,
            "gradient_flux": self.b_grad,
            "normal_gradient": self.b_normal,
            "gradient_pair": self.b_grad + self.b_normal,
        }

    def checks(self, c_tol: float = C_TOL) -> dict:
        """Residual, scale, tolerance and verdict for every zero claim."""
        h = self.spacing
        tol = lambda sc: c_tol * h**1.5 * sc  # noqa: E731
        scale = self.identity_scale
        items = {
            "identity": (self.identity_residual, scale),
            "prop_i": (self.prop_i_residual, self.prop_i_scale),
            "prop_ii": (self.prop_ii_residual, self.prop_ii_scale),
            "inner_A": (self.inner_A, self.inner_A_scale),
            "eta_flux": (self.b_eta, scale),
            "gradient_flux": (self.b_grad, scale),
            "normal_gradient": (self.b_normal, scale),
        }
        return {
            k: {"residual": float(r), "scale": float(sc), "tolerance": float(tol(sc)),
                "passed": bool(abs(r) <= tol(sc))}
            for k, (r, sc) in items.items()
        }

    def as_dict(self) -> dict:
        d = {k: v for k, v in self.__dict__.items()}
        d["rhs"] = self.rhs
        d["checks"] = self.checks()
        return d


def commutator_identity(f: StackedField) -> CommutatorReport:
    """Evaluate both sides of the commutator identity term by term."""
    cfg = f.config
    mesh = cfg.mesh
    g = geometry(cfg.family)
    t = f.t
    G = gamma(t, cfg)
    s = cfg.s
    c = s / G
    bd = mesh.boundary
    bw = mesh.boundary_weights
    lhs = hess_t = lg_t = w_t = 0.0
    b1 = b2 = b3 = b4 = 0.0
    abs_terms = 0.0
    p1_res = p1_scale = p2_res = p2_scale = 0.0
    for i, fi in enumerate(f.values):
        gf, _, dnf = f.derivatives(i)
        et = eta(i, t, cfg)
        Sf = f.S(i)
        Af = f.A(i)
        Spf = f.S_prime(i)
        lhs_i = mesh.inner_product(Spf, fi) + 2.0 * mesh.inner_product(Sf, Af)
        gPhi = c * g.grad[i]
        hessPhi = c * g.hess[i]
        h_i = -2.0 * mesh.integrate(np.einsum("na,nab,nb->n", gf, hessPhi, gf))
        lg_i = -mesh.integrate(np.einsum("na,na->n", gf, c * g.grad_lap[i]) * fi)
        quad = np.einsum("na,nab,nb->n", gPhi, g.hess[i], gPhi)
        w_i = -(2.0 / G) * mesh.integrate((et + 0.25 * np.sum(gPhi**2, axis=1) + 0.25 * s * quad) * fi**2)
        dnPhi = c * g.dn[i]
        fb = fi[bd]
        gfb = gf[bd]
        b1_i = 2.0 * float(np.dot(bw, dnf * np.einsum("na,na->n", gPhi[bd], gfb)))
        b2_i = -float(np.dot(bw, dnPhi * np.sum(gfb**2, axis=1)))
        b3_i = float(np.dot(bw, dnf * c * g.lap[i][bd] * fb))
        b4_i = float(np.dot(bw, et[bd] * dnPhi * fb**2))
        lhs += lhs_i
        hess_t += h_i
        lg_t += lg_i
        w_t += w_i
        b1 += b1_i
        b2 += b2_i
        b3 += b3_i
        b4 += b4_i
        abs_terms += abs(lhs_i) + abs(h_i) + abs(lg_i) + abs(w_i) + abs(b1_i) + abs(b2_i) + abs(b3_i) + abs(b4_i)
        # single-member integration-by-parts identities
        a_ff = mesh.inner_product(Af, fi)
        a_b = -0.5 * float(np.dot(bw, dnPhi * fb**2))
        p1_res += abs(a_ff - a_b)
        p1_scale += abs(mesh.integrate(np.einsum("na,na->n", gPhi, gf) * fi)) + abs(
            0.5 * mesh.integrate(c * g.lap[i] * fi**2)
        ) + abs(a_b)
        grad2 = mesh.integrate(np.sum(gf**2, axis=1))
        eta_ff = mesh.integrate(et * fi**2)
        flux = float(np.dot(bw, dnf * fb))
        s_ff = mesh.inner_product(Sf, fi)
        p2_res += abs(s_ff - (grad2 - eta_ff - flux))
        p2_scale += abs(s_ff) + abs(grad2) + abs(eta_ff) + abs(flux)
    innerA = inner_A(f)
    innerA_scale = sum(
        abs(mesh.integrate(np.einsum("na,na->n", c * g.grad[i], f.derivatives(i)[0]) * fi))
        + abs(0.5 * mesh.integrate(c * g.lap[i] * fi**2))
        for i, fi in enumerate(f.values)
    )
    rhs = hess_t + lg_t + w_t + b1 + b2 + b3 + b4
    return CommutatorReport(
        t=t, spacing=mesh.spacing, lhs=lhs, hessian_term=hess_t, laplacian_gradient_term=lg_t,
        weight_term=w_t, b_grad=b1, b_normal=b2, b_lap=b3, b_eta=b4,
        identity_residual=lhs - rhs, identity_scale=abs_terms,
        prop_i_residual=p1_res, prop_i_scale=p1_scale,
        prop_ii_residual=p2_res, prop_ii_scale=p2_scale,
        inner_A=innerA, inner_A_scale=innerA_scale,
    )


def commutator_lhs(f: StackedField) -> float:
    """``X = ⟨S'f, f⟩ + 2⟨Sf, Af⟩``."""
    m = f.config.mesh
    total = 0.0
    for i, fi in enumerate(f.values):
        total += m.inner_product(f.S_prime(i), fi) + 2.0 * m.inner_product(f.S(i), f.A(i))
    return float(total)


@dataclass
class CommutatorBound:
    """Measured constants in ``X <= (1+C0)/Γ Y + C/h² y``.

    ``C`` is the smallest nonnegative constant for the configured ``C0``;
    ``c0_needed`` is the smallest ``C0`` for which ``C = 0`` suffices.
    """

    t: float
    gamma: float
    X: float
    Y: float
    y: float
    C0: float
    C: float
    c0_needed: float
    slack: float
    degenerate: bool
    regions: dict

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def step5_bound(f: StackedField, C0: float = 0.5, y_tol: float = 1e-8) -> CommutatorBound:
    """Smallest ``C`` with ``X <= (1+C0)Y/Γ + C y / h²`` at this snapshot.

    Raises:
        CarlemanError: if ``Y`` is negative beyond ``y_tol`` relative to its
            scale (``s`` too large for ``η <= 0``).
    """
    cfg = f.config
    G = gamma(f.t, cfg)
    y = f.norm2()
    if y == 0.0:
        return CommutatorBound(f.t, G, 0.0, 0.0, 0.0, C0, 0.0, 0.0, 0.0, True, {})
    X = commutator_lhs(f)
    Y = inner_S(f)
    scale = sum(
        _grad_energy(f, i)
        + cfg.mesh.integrate(np.abs(eta(i, f.t, cfg)) * fi**2)
        for i, fi in enumerate(f.values)
    )
    if Y < -y_tol * max(scale, 1e-300):
        raise CarlemanError(f"⟨Sf,f⟩ = {Y:.3e} < 0: s is too large")
    excess = X - (1.0 + C0) * Y / G
    C = max(0.0, cfg.h**2 * excess / y)
    c0_needed = max(0.0, G * X / Y - 1.0) if Y > 0 else (0.0 if X <= 0 else np.inf)
    return CommutatorBound(
        f.t, G, X, Y, y, C0, C, c0_needed, -excess / y, False, _region_pieces(f)
    )


def _region_pieces(f: StackedField) -> dict:
    """Region split of ``-(2/Γ)∫(η + |∇Φ|²/8)|f|²`` and of ``∫(-η)|f|²``."""
    cfg = f.config
    fam = cfg.family
    mesh = cfg.mesh
    g = geometry(fam)
    G = gamma(f.t, cfg)
    c = cfg.s / G
    d = fam.d
    out = {"B_or_D": [0.0, 0.0], "C": [0.0, 0.0], "collar": [0.0, 0.0], "interior": [0.0, 0.0]}
    for i, fi in enumerate(f.values):
        et = eta(i, f.t, cfg)
        lhs = -(2.0 / G) * (et + 0.125 * c**2 * g.grad2[i]) * fi**2 * mesh.weights
        neg = -et * fi**2 * mesh.weights
        if i < d:
            masks = {"B_or_D": fam.B[i] | fam.D[i], "C": fam.C[i]}
        else:
            masks = {"collar": fam.collar, "interior": ~fam.collar}
        for k, msk in masks.items():
            out[k][0] += float(lhs[msk].sum())
            out[k][1] += float(neg[msk].sum())
    return {k: {"bracket": v[0], "minus_eta": v[1]} for k, v in out.items()}


def boundary_split_residual(u: np.ndarray, t: float, config: CarlemanConfig) -> np.ndarray:
    """``|∇f_i|² - (|∂_τu|² + |½u∂_nΦ_i|²)e^{Φ_i}`` at boundary nodes, shape ``(2d, Nb)``."""
    mesh = config.mesh
    g = geometry(config.family)
    f = stack(u, t, config)
    c = config.s / gamma(t, config)
    bd = mesh.boundary
    dtau = mesh.tangential_derivative(u)
    out = np.empty((f.values.shape[0], bd.size))
    for i, fi in enumerate(f.values):
        gf2 = np.sum(f.derivatives(i)[0][bd] ** 2, axis=1)
        Phi = c * g.phi[i][bd]
        out[i] = gf2 - (dtau**2 + (0.5 * u[bd] * c * g.dn[i]) ** 2) * np.exp(Phi)
    return out


def admissible_s(family: WeightFamily, rel_eps: float = 1e-10) -> float:
    """Largest ``s`` with ``s|∇φ|² <= 2|φ|`` at every node with a non-negligible gradient."""
    g = geometry(family)
    best = np.inf
    for phi, g2 in zip(g.phi, g.grad2):
        ok = g2 > rel_eps * g2.max()
        if ok.any():
            best = min(best, float(np.min(2.0 * np.abs(phi[ok]) / g2[ok])))
    return best


def calibrate_s(family: WeightFamily, safety: float = 0.5) -> float:
    """``s = min(1, safety · min_i min_x 2|φ_i|/|∇φ_i|²)``, which makes every ``η_i <= 0``.

    Raises:
        CarlemanError: for ``safety <= 0`` or when no positive ``s`` exists.
    """
    if not safety > 0:
        raise CarlemanError(f"safety factor must be positive, got {safety}")
    bound = admissible_s(family)
    if not np.isfinite(bound) or bound <= 0:
        raise CarlemanError("no admissible s > 0 for this weight family")
    return float(min(1.0, safety * bound))
