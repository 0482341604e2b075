"""Morse weight functions, critical-point relocation, and weight families.

A weight family consists of ``d`` Morse functions ``ψ_i`` vanishing on the
boundary, the pairs ``φ_{i,1} = ψ_i - max ψ_i`` and ``φ_{i,2} = -ψ_i - max ψ_i``,
and the region decomposition used by the commutator estimates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline, RectBivariateSpline

from .mesh import Mesh, interval_hat_weights

EPS_HESS = 1e-3 * np.pi**2
TOL_CRIT = 1e-3
FLOW_STEPS = 64


class MorseError(ValueError):
    """Base class for weight-construction failures."""


class DegenerateCriticalPoint(MorseError):
    pass


class CurveIntersectionError(MorseError):
    pass


class FlowError(MorseError):
    pass


# ---------------------------------------------------------------------------
# smooth cutoffs


def _g(t):
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    pos = t > 0
    out[pos] = np.exp(-1.0 / t[pos])
    return out


def smoothstep(t):
    """C∞ step: 0 for ``t <= 0``, 1 for ``t >= 1``."""
    t = np.asarray(t, dtype=float)
    a, b = _g(t), _g(1.0 - t)
    return a / (a + b)


# ---------------------------------------------------------------------------
# Morse functions


@dataclass(frozen=True, eq=False)
class MorseFunction:
    """Nodal Morse function with its refined critical points.

    Attributes:
        mesh: underlying mesh.
        values: nodal values, zero on the boundary.
        critical_points: interior critical points, shape ``(k, dim)``.
        critical_values: value at each critical point.
        hessians: Hessian at each critical point, shape ``(k, dim, dim)``.
        max_value: the global maximum.
        argmax: index into ``critical_points`` of the global maximizer.
    """

    mesh: Mesh
    values: np.ndarray = field(repr=False)
    critical_points: np.ndarray
    critical_values: np.ndarray
    hessians: np.ndarray = field(repr=False)
    max_value: float
    argmax: int

    @property
    def d(self) -> int:
        return self.critical_points.shape[0]

    @property
    def peak(self) -> np.ndarray:
        return self.critical_points[self.argmax]

    @property
    def hessian_signatures(self) -> list[str]:
        out = []
        for H in self.hessians:
            neg = int(np.sum(np.linalg.eigvalsh(H) < 0))
            out.append({0: "min", H.shape[0]: "max"}.get(neg, "saddle"))
        return out

    def scaled(self, factor: float) -> "MorseFunction":
        return MorseFunction(
            self.mesh,
            self.values * factor,
            self.critical_points.copy(),
            self.critical_values * factor,
            self.hessians * factor,
            self.max_value * factor,
            self.argmax,
        )


def _spline_1d(mesh: Mesh, values: np.ndarray) -> CubicSpline:
    return CubicSpline(mesh.x, values)


def _critical_points_1d(mesh: Mesh, values: np.ndarray):
    spline = _spline_1d(mesh, values)
    roots = spline.derivative().roots(extrapolate=False)
    lo, hi = 0.5 * mesh.spacing, 1.0 - 0.5 * mesh.spacing
    roots = np.unique(np.round(roots[(roots > lo) & (roots < hi)], 14))
    pts = roots[:, None]
    vals = spline(roots)
    hess = spline(roots, 2)[:, None, None]
    return pts, vals, hess


def _critical_points_2d(mesh: Mesh, values: np.ndarray):
    n = mesh.resolution
    x = mesh.x
    spline = RectBivariateSpline(x, x, values.reshape(n, n), kx=3, ky=3)
    g = np.linalg.norm(mesh.gradient(values), axis=1).reshape(n, n)
    gmax = g.max()
    cands = []
    for i in range(1, n - 1):
        for j in range(1, n - 1):
            if g[i, j] <= g[i - 1 : i + 2, j - 1 : j + 2].min() and g[i, j] < 0.1 * gmax:
                cands.append((x[i], x[j]))
    found = []
    for p in cands:
        p = np.array(p, dtype=float)
        for _ in range(50):
            grad = np.array([spline.ev(*p, dx=1), spline.ev(*p, dy=1)])
            H = np.array(
                [
                    [spline.ev(*p, dx=2), spline.ev(*p, dx=1, dy=1)],
                    [spline.ev(*p, dx=1, dy=1), spline.ev(*p, dy=2)],
                ]
            )
            try:
                step = -np.linalg.solve(H, grad)
            except np.linalg.LinAlgError:
                break
            lam = 1.0
            gnorm = np.linalg.norm(grad)
            while lam > 1e-4:
                q = p + lam * step
                gq = np.array([spline.ev(*q, dx=1), spline.ev(*q, dy=1)])
                if np.linalg.norm(gq) < gnorm or gnorm < 1e-13:
                    break
                lam *= 0.5
            p = p + lam * step
            if np.linalg.norm(lam * step) < 1e-13:
                break
        if np.all(p > mesh.spacing) and np.all(p < 1 - mesh.spacing):
            if not any(np.linalg.norm(p - q) < 0.5 * mesh.spacing for q in found):
                found.append(p)
    pts = np.array(found).reshape(-1, 2)
    vals = np.array([spline.ev(*p) for p in pts])
    hess = np.array(
        [
            [
                [spline.ev(*p, dx=2), spline.ev(*p, dx=1, dy=1)],
                [spline.ev(*p, dx=1, dy=1), spline.ev(*p, dy=2)],
            ]
            for p in pts
        ]
    ).reshape(-1, 2, 2)
    return pts, vals, hess


def morse_from_values(mesh: Mesh, values: np.ndarray, eps_hess: float = EPS_HESS) -> MorseFunction:
    """Detect and validate the critical points of a nodal function.

    Raises:
        DegenerateCriticalPoint: if a Hessian has ``|det| <= eps_hess``.
        MorseError: if the function is not positive inside and zero on the
            boundary, or its maximum is not attained at a unique critical point.
    """
    values = np.asarray(values, dtype=float)
    mesh.check(values)
    if np.max(np.abs(values[mesh.boundary])) > 1e-10:
        raise MorseError("weight function must vanish on the boundary")
    if np.any(values[mesh.interior] <= 0):
        raise MorseError("weight function must be positive at interior nodes")
    finder = _critical_points_1d if mesh.dimension == 1 else _critical_points_2d
    pts, vals, hess = finder(mesh, values)
    if pts.shape[0] == 0:
        raise MorseError("no interior critical point found")
    for p, H in zip(pts, hess):
        if abs(np.linalg.det(H)) <= eps_hess:
            raise DegenerateCriticalPoint(
                f"critical point {p.tolist()} has |det Hessian| = {abs(np.linalg.det(H)):.3e}"
            )
    order = np.lexsort(pts.T[::-1])
    pts, vals, hess = pts[order], vals[order], hess[order]
    argmax = int(np.argmax(vals))
    top = vals[argmax]
    if np.sum(vals >= top - 1e-9 * max(1.0, abs(top))) > 1:
        raise MorseError("global maximum is attained at more than one critical point")
    max_value = float(max(top, values.max()))
    return MorseFunction(mesh, values, pts, vals, hess, max_value, argmax)


def base_morse(mesh: Mesh) -> MorseFunction:
    """Product of sines: a single nondegenerate maximum at the center."""
    values = np.prod(np.sin(np.pi * mesh.coords), axis=1)
    values[mesh.boundary] = 0.0
    return morse_from_values(mesh, values)


def base_morse_multibump(
    mesh: Mesh, k: int, floor: float = 0.3, tilt: float = 0.15
) -> MorseFunction:
    """1D function with ``k`` maxima and ``k - 1`` minima, normalized to max 1.

    ``ψ(x) ∝ sin(πx)(floor + sin²(kπx))(1 + tilt·x)``.  The tilt separates
    the critical values; the rightmost maximum is the global one.

    Raises:
        MorseError: for 2D meshes, or when neighbouring critical points
            would be closer than six grid steps.
    """
    if mesh.dimension != 1:
        raise MorseError("multibump functions are defined on the interval only")
    k = int(k)
    if k < 1:
        raise MorseError("k must be positive")
    if k == 1:
        return base_morse(mesh)
    if 1.0 / (2 * k) < 6 * mesh.spacing:
        raise MorseError(
            f"k={k} puts critical points about {1 / (2 * k):.4f} apart, "
            f"closer than 6Δx = {6 * mesh.spacing:.4f}"
        )
    x = mesh.coords[:, 0]
    values = np.sin(np.pi * x) * (floor + np.sin(k * np.pi * x) ** 2) * (1 + tilt * x)
    values[mesh.boundary] = 0.0
    raw = morse_from_values(mesh, values)
    psi = raw.scaled(1.0 / raw.max_value)
    if psi.d != 2 * k - 1:
        raise MorseError(f"expected {2 * k - 1} critical points, found {psi.d}")
    if np.min(np.diff(psi.critical_points[:, 0])) < 6 * mesh.spacing:
        raise MorseError("critical points closer than 6Δx")
    if np.min(np.diff(np.sort(psi.critical_values))) < 1e-6:
        raise MorseError("critical values are not distinct")
    return psi


def mirrored(psi: MorseFunction) -> MorseFunction:
    """Reflection ``x -> 1 - x`` of a 1D Morse function."""
    if psi.mesh.dimension != 1:
        raise MorseError("mirroring is implemented for the interval only")
    return morse_from_values(psi.mesh, psi.values[::-1].copy())


# ---------------------------------------------------------------------------
# relocation by a flow


def _boundary_cutoff(coords: np.ndarray, collar_width: float, width: float) -> np.ndarray:
    dist = np.min(np.minimum(coords, 1.0 - coords), axis=1)
    return smoothstep((dist - collar_width) / width)


def _rk4(field, pts, reverse: bool, steps: int) -> np.ndarray:
    y = np.array(pts, dtype=float)
    sgn = -1.0 if reverse else 1.0
    dt = 1.0 / steps
    for _ in range(steps):
        k1 = sgn * field(y)
        k2 = sgn * field(y + 0.5 * dt * k1)
        k3 = sgn * field(y + 0.5 * dt * k2)
        k4 = sgn * field(y + dt * k3)
        y = y + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return y


@dataclass(frozen=True)
class RelocationFlow:
    """Relocation field on the square for a single straight curve ``a -> b``.

    In the frame ``(ξ, ζ)`` aligned with ``v = b - a`` the field is
    ``v ρ(ξ) σ(ζ)``: ``ρ = 1`` on ``[0, |v|]`` decaying over ``behind`` and
    ``ahead``, ``σ = 1`` for ``|ζ| <= plateau`` decaying to zero at
    ``half_width``.  It equals ``γ'(t)`` on the curve, so the time-one flow
    maps ``a`` to ``b``; its support avoids the boundary collar.
    """

    start: np.ndarray
    end: np.ndarray
    behind: float
    ahead: float
    plateau: float
    half_width: float
    collar_width: float
    cutoff_width: float

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        v = self.end - self.start
        length = float(np.linalg.norm(v))
        if length == 0:
            return np.zeros_like(pts)
        e = v / length
        rel = pts - self.start
        xi = rel @ e
        zeta = rel @ np.array([-e[1], e[0]])
        rho = np.where(
            xi < 0,
            smoothstep((xi + self.behind) / self.behind),
            np.where(xi <= length, 1.0, smoothstep((length + self.ahead - xi) / self.ahead)),
        )
        sig = smoothstep((self.half_width - np.abs(zeta)) / (self.half_width - self.plateau))
        cut = _boundary_cutoff(pts, self.collar_width, self.cutoff_width)
        return v[None, :] * (rho * sig * cut)[:, None]

    def integrate(self, pts: np.ndarray, reverse: bool = False, steps: int = FLOW_STEPS) -> np.ndarray:
        """Time-one map (or its inverse) by the classical fourth-order method."""
        return _rk4(self, pts, reverse, steps)


@dataclass(frozen=True)
class IntervalFlow:
    """Relocation field on the interval.

    The field equals the constant speed ``b_j - a_j`` on each segment
    ``[min(a_j, b_j), max(a_j, b_j)]``, vanishes on the boundary collar, and
    blends between neighbouring plateaus with a C∞ step spanning the whole gap.
    """

    left: np.ndarray
    right: np.ndarray
    speed: np.ndarray

    def __call__(self, pts: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(pts)[:, 0]
        k = np.searchsorted(self.left, x, side="right") - 1
        k = np.clip(k, 0, self.left.size - 1)
        on = x <= self.right[k]
        nxt = np.minimum(k + 1, self.left.size - 1)
        gap = np.maximum(self.left[nxt] - self.right[k], 1e-300)
        blend = smoothstep((x - self.right[k]) / gap)
        V = np.where(on, self.speed[k], self.speed[k] + (self.speed[nxt] - self.speed[k]) * blend)
        return V[:, None]

    def integrate(self, pts: np.ndarray, reverse: bool = False, steps: int = FLOW_STEPS) -> np.ndarray:
        return _rk4(self, pts, reverse, steps)


def build_flow(mesh: Mesh, starts: np.ndarray, ends: np.ndarray, collar_width: float = 0.1):
    """Construct the relocation field, checking that the curves are disjoint.

    Supports extend as far as the boundary collar and neighbouring curves
    allow, which keeps the compression of the flow mild.

    Raises:
        CurveIntersectionError: curves intersect.
        FlowError: a curve enters the boundary collar or the support cannot
            be fitted between curve and collar on this grid.
    """
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    ends = np.atleast_2d(np.asarray(ends, dtype=float))
    if mesh.dimension == 1:
        return _interval_flow(mesh, starts[:, 0], ends[:, 0], collar_width)
    if len(starts) != 1:
        raise MorseError("relocation on the square supports a single critical point")
    a, b = starts[0], ends[0]
    cutoff = 0.02
    lo, hi = collar_width + cutoff, 1.0 - collar_width - cutoff
    if min(a.min(), b.min()) <= lo or max(a.max(), b.max()) >= hi:
        raise FlowError("the relocation curve enters the boundary collar")
    v = b - a
    length = float(np.linalg.norm(v))
    if length == 0:
        return RelocationFlow(a, b, 1.0, 1.0, 0.5, 1.0, collar_width, cutoff)
    e = v / length
    n = np.array([-e[1], e[0]])

    def fits(back, front, width):
        corners = [a - back * e + sgn * width * n for sgn in (-1, 1)]
        corners += [b + front * e + sgn * width * n for sgn in (-1, 1)]
        return all(np.all(cn > lo) and np.all(cn < hi) for cn in corners)

    # largest balanced rectangle that fits
    grid = np.geomspace(0.5, mesh.spacing, 40)
    best, back, front, width = -1.0, 0.0, 0.0, 0.0
    for w in grid:
        for f in grid:
            if min(w, f) <= best:
                continue
            for bk in grid:
                score = min(w, f, bk)
                if score <= best:
                    break
                if fits(bk, f, w):
                    best, back, front, width = score, bk, f, w
                    break
    if not fits(back, front, width) or min(back, front, width) < 2 * mesh.spacing:
        raise FlowError("no room for the relocation field between curve and collar")
    return RelocationFlow(a, b, back, front, 0.4 * width, width, collar_width, cutoff)


def _interval_flow(mesh, a, b, collar_width) -> IntervalFlow:
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    order = np.argsort(lo)
    lo, hi, v = lo[order], hi[order], (b - a)[order]
    if np.any(lo[1:] <= hi[:-1]):
        j = int(np.flatnonzero(lo[1:] <= hi[:-1])[0])
        raise CurveIntersectionError(
            f"segments [{lo[j]:.4f}, {hi[j]:.4f}] and [{lo[j + 1]:.4f}, {hi[j + 1]:.4f}] intersect"
        )
    moving = v != 0
    if np.any(moving & ((lo <= collar_width + 2 * mesh.spacing)
                        | (hi >= 1 - collar_width - 2 * mesh.spacing))):
        raise FlowError("a relocation segment enters the boundary collar")
    left = np.concatenate([[-np.inf], lo, [1 - collar_width]])
    right = np.concatenate([[collar_width], hi, [np.inf]])
    speed = np.concatenate([[0.0], v, [0.0]])
    return IntervalFlow(left, right, speed)


def _pullback(psi: MorseFunction, flow, steps: int) -> np.ndarray:
    mesh = psi.mesh
    pre = flow.integrate(mesh.coords, reverse=True, steps=steps)
    moved = np.any(pre != mesh.coords, axis=1)
    out = psi.values.copy()
    if np.any(moved):
        interp = mesh.interpolator(psi.values)
        out[moved] = interp(pre[moved])
    return out


def relocate_to(
    psi: MorseFunction,
    destinations: np.ndarray,
    collar_width: float = 0.1,
    steps: int = FLOW_STEPS,
    tol_crit: float = TOL_CRIT,
) -> MorseFunction:
    """Move critical point ``j`` of ``psi`` to ``destinations[j]`` by a flow.

    Returns ``ψ ∘ Λ(1,·)^{-1}`` where ``Λ`` is the flow of the relocation field.

    Raises:
        CurveIntersectionError, FlowError, DegenerateCriticalPoint, MorseError.
    """
    mesh = psi.mesh
    dest = np.atleast_2d(np.asarray(destinations, dtype=float)).reshape(psi.d, mesh.dimension)
    if np.array_equal(dest, psi.critical_points) or np.allclose(
        dest, psi.critical_points, rtol=0, atol=1e-12
    ):
        return psi
    flow = build_flow(mesh, psi.critical_points, dest, collar_width)
    values = _pullback(psi, flow, steps)
    out = morse_from_values(mesh, values)
    if out.d != psi.d:
        raise MorseError(f"relocation changed the number of critical points ({psi.d} -> {out.d})")
    err = np.max(np.linalg.norm(out.critical_points - dest[np.lexsort(dest.T[::-1])], axis=1))
    if err > tol_crit:
        raise FlowError(f"relocated critical points miss their targets by {err:.2e}")
    if abs(out.max_value - psi.max_value) > 1e-3:
        raise FlowError("relocation changed the maximum value")
    return out


def relocate_criticals(
    psi: MorseFunction,
    targets: np.ndarray,
    cycle_index: int = 1,
    collar_width: float = 0.1,
    steps: int = FLOW_STEPS,
    tol_crit: float = TOL_CRIT,
) -> MorseFunction:
    """Relocate the critical points of ``psi`` onto ``targets`` cyclically shifted.

    The ``j``-th critical point (in sorted order) is sent to
    ``targets[(j + cycle_index - 1) mod d]``.  On the interval the resulting
    map must preserve order, otherwise straight curves would cross.
    """
    mesh = psi.mesh
    targets = np.atleast_2d(np.asarray(targets, dtype=float)).reshape(-1, mesh.dimension)
    d = targets.shape[0]
    if d != psi.d:
        raise MorseError(f"{d} targets given for {psi.d} critical points")
    if len({tuple(t) for t in targets.tolist()}) != d:
        raise MorseError("targets must be pairwise distinct")
    dest = targets[[(j + cycle_index - 1) % d for j in range(d)]]
    if mesh.dimension == 1 and np.any(np.diff(dest[:, 0]) <= 0):
        raise CurveIntersectionError(
            f"cycle index {cycle_index} reverses the order of critical points on the interval"
        )
    return relocate_to(psi, dest, collar_width, steps, tol_crit)


# ---------------------------------------------------------------------------
# observation region


@dataclass(frozen=True, eq=False)
class ObservationRegion:
    """Open subset of the domain given as a union of simple shapes.

    Shapes are dicts: ``{"type": "interval", "bounds": [a, b]}``,
    ``{"type": "box", "lower": [..], "upper": [..]}`` or
    ``{"type": "ball", "center": [..], "radius": r}``.
    """

    mesh: Mesh
    shapes: tuple
    mask: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)

    @property
    def nodes(self) -> np.ndarray:
        return np.flatnonzero(self.mask)

    @property
    def measure(self) -> float:
        return float(self.weights.sum())

    def contains(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        return np.any([_inside(s, pts) > 0 for s in self.shapes], axis=0)

    def depth(self, pts: np.ndarray) -> np.ndarray:
        """Distance from each point to the complement (0 outside)."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        return np.maximum(np.max([_inside(s, pts) for s in self.shapes], axis=0), 0.0)

    def integrate(self, f: np.ndarray) -> float:
        return float(np.dot(self.weights, f))

    def describe(self) -> list:
        return [dict(s) for s in self.shapes]


def _inside(shape: dict, pts: np.ndarray) -> np.ndarray:
    """Signed depth of points inside a shape."""
    kind = shape["type"]
    if kind == "interval":
        a, b = shape["bounds"]
        return np.minimum(pts[:, 0] - a, b - pts[:, 0])
    if kind == "box":
        lo = np.asarray(shape["lower"], dtype=float)
        hi = np.asarray(shape["upper"], dtype=float)
        return np.min(np.minimum(pts - lo, hi - pts), axis=1)
    if kind == "ball":
        c = np.asarray(shape["center"], dtype=float)
        return float(shape["radius"]) - np.linalg.norm(pts - c, axis=1)
    raise ValueError(f"unknown shape type {kind!r}")


def _normalize_shape(shape: dict, dim: int) -> dict:
    kind = shape.get("type")
    if kind == "interval":
        if dim != 1:
            raise ValueError("interval shapes need a 1D mesh")
        a, b = (float(v) for v in shape["bounds"])
        if not 0.0 < a < b < 1.0:
            raise ValueError(f"interval {[a, b]} must satisfy 0 < a < b < 1")
        return {"type": "interval", "bounds": [a, b]}
    if kind == "box":
        lo = [float(v) for v in shape["lower"]]
        hi = [float(v) for v in shape["upper"]]
        if len(lo) != dim or len(hi) != dim:
            raise ValueError("box corners must match the mesh dimension")
        if not all(0.0 < l < h < 1.0 for l, h in zip(lo, hi)):
            raise ValueError("box must lie strictly inside the domain")
        return {"type": "box", "lower": lo, "upper": hi}
    if kind == "ball":
        c = [float(v) for v in shape["center"]]
        r = float(shape["radius"])
        if len(c) != dim or r <= 0:
            raise ValueError("ball needs a center matching the dimension and a positive radius")
        if min(min(c), 1 - max(c)) <= r:
            raise ValueError("ball must lie strictly inside the domain")
        return {"type": "ball", "center": c, "radius": r}
    raise ValueError(f"unknown shape type {kind!r}")


def make_region(mesh: Mesh, shapes) -> ObservationRegion:
    """Build an observation region; shapes must be pairwise disjoint.

    Interval and box weights integrate the piecewise-linear interpolant
    exactly, so the measure of the region is reproduced exactly.
    """
    if isinstance(shapes, dict):
        shapes = [shapes]
    shapes = tuple(_normalize_shape(dict(s), mesh.dimension) for s in shapes)
    if not shapes:
        raise ValueError("observation region needs at least one shape")
    weights = np.zeros(mesh.size)
    mask = np.zeros(mesh.size, dtype=bool)
    x = mesh.x
    for s in shapes:
        inside = _inside(s, mesh.coords) > 0
        if np.any(mask & inside):
            raise ValueError("observation shapes must be disjoint")
        mask |= inside
        if s["type"] == "interval":
            weights += interval_hat_weights(x, *s["bounds"])
        elif s["type"] == "box":
            w = [interval_hat_weights(x, lo, hi) for lo, hi in zip(s["lower"], s["upper"])]
            weights += w[0] if mesh.dimension == 1 else np.outer(w[0], w[1]).ravel()
        else:
            weights += np.where(inside, mesh.weights, 0.0)
    if not mask.any():
        raise ValueError("observation region contains no mesh node")
    if mask[mesh.boundary].any():
        raise ValueError("observation region touches the boundary")
    return ObservationRegion(mesh, shapes, mask, weights)


def interval(mesh: Mesh, a: float, b: float) -> ObservationRegion:
    return make_region(mesh, {"type": "interval", "bounds": [a, b]})


# ---------------------------------------------------------------------------
# weight family


@dataclass(frozen=True, eq=False)
class WeightFamily:
    """Weight pairs and region decomposition for ``d`` Morse functions.

    Attributes:
        psi: the Morse functions ``ψ_i``.
        phi1, phi2: arrays of shape ``(d, N)``.
        peaks: global maximizer ``p_i`` of each ``ψ_i``, shape ``(d, dim)``.
        B, C, D: boolean masks of shape ``(d, N)``.
        collar: boolean mask of nodes within ``collar_width`` of the boundary.
        r: ball radius of the regions.
        collar_width: collar thickness.
        omega: observation region.
        recipe: parameters that rebuild the family on another mesh.
    """

    mesh: Mesh
    psi: tuple
    phi1: np.ndarray = field(repr=False)
    phi2: np.ndarray = field(repr=False)
    peaks: np.ndarray
    B: np.ndarray = field(repr=False)
    C: np.ndarray = field(repr=False)
    D: np.ndarray = field(repr=False)
    collar: np.ndarray = field(repr=False)
    r: float
    collar_width: float
    omega: ObservationRegion = field(repr=False)
    recipe: dict = field(default_factory=dict)

    @property
    def d(self) -> int:
        return len(self.psi)

    @property
    def max_value(self) -> float:
        return float(self.psi[0].max_value)

    def member(self, i: int) -> np.ndarray:
        """``φ`` of stacked component ``i`` (0-based; the second half uses φ_{·,2})."""
        return self.phi1[i] if i < self.d else self.phi2[i - self.d]

    @property
    def members(self) -> np.ndarray:
        return np.concatenate([self.phi1, self.phi2])

    def ball_mask(self, i: int, radius: float | None = None) -> np.ndarray:
        rad = self.r if radius is None else radius
        return np.linalg.norm(self.mesh.coords - self.peaks[i], axis=1) < rad


def make_weight_family(
    psi_list,
    omega: ObservationRegion,
    r: float | None = None,
    collar_width: float = 0.1,
    recipe: dict | None = None,
) -> WeightFamily:
    """Assemble weight pairs and regions.

    ``r`` defaults to half the distance from the peaks to the boundary of
    ``omega``, reduced if needed so the balls around distinct critical
    points are disjoint.

    Raises:
        MorseError: when max values differ or a critical point lies outside ``omega``.
    """
    psi_list = tuple(psi_list)
    if not psi_list:
        raise MorseError("empty family")
    mesh = psi_list[0].mesh
    maxes = np.array([p.max_value for p in psi_list])
    if np.ptp(maxes) > 1e-6:
        raise MorseError(f"members must share the maximum value, got {maxes.tolist()}")
    allpts = np.concatenate([p.critical_points for p in psi_list])
    outside = ~omega.contains(allpts)
    if np.any(outside):
        raise MorseError(f"critical points outside omega: {allpts[outside].tolist()}")
    peaks = np.array([p.peak for p in psi_list])
    uniq: list = []
    for q in allpts:
        if not any(np.linalg.norm(q - u) <= TOL_CRIT for u in uniq):
            uniq.append(q)
    if r is None:
        r = 0.5 * float(np.min(omega.depth(peaks)))
        if len(uniq) > 1:
            sep = min(
                np.linalg.norm(uniq[a] - uniq[b])
                for a in range(len(uniq))
                for b in range(a + 1, len(uniq))
            )
            r = min(r, 0.45 * sep)
    r = float(r)
    if r <= 0:
        raise MorseError("region radius must be positive")

    coords = mesh.coords
    d = len(psi_list)
    B = np.zeros((d, mesh.size), dtype=bool)
    C = np.zeros_like(B)
    for i, p in enumerate(psi_list):
        B[i] = np.linalg.norm(coords - p.peak, axis=1) < r
        for j, q in enumerate(p.critical_points):
            if j != p.argmax:
                C[i] |= np.linalg.norm(coords - q, axis=1) < r
        C[i] &= ~B[i]
    D = ~(B | C)
    top = maxes[0]
    phi1 = np.array([p.values - top for p in psi_list])
    phi2 = np.array([-p.values - top for p in psi_list])
    collar = mesh.distance_to_boundary() < collar_width
    return WeightFamily(
        mesh, psi_list, phi1, phi2, peaks, B, C, D, collar, r, float(collar_width), omega,
        dict(recipe or {}),
    )


def build_weight_family(
    mesh: Mesh,
    omega: ObservationRegion,
    targets=None,
    r: float | None = None,
    collar_width: float = 0.1,
) -> WeightFamily:
    """Standard family with peaks at ``targets`` (default: one peak at the region center).

    ``d = 1`` relocates the product of sines.  On the interval ``d = 3`` is
    supported: the two outer members relocate a two-bump function (and its
    mirror image) so their global maxima sit at the outer targets, and the
    middle member relocates a single bump.  All members are normalized to
    maximum 1.
    """
    if targets is None:
        shape = omega.shapes[0]
        if shape["type"] == "interval":
            targets = [[0.5 * sum(shape["bounds"])]]
        elif shape["type"] == "box":
            targets = [list(0.5 * (np.array(shape["lower"]) + np.array(shape["upper"])))]
        else:
            targets = [shape["center"]]
    targets = np.atleast_2d(np.asarray(targets, dtype=float)).reshape(-1, mesh.dimension)
    d = targets.shape[0]
    recipe = {"targets": targets.tolist(), "r": r, "collar_width": collar_width}
    if d == 1:
        psi = relocate_criticals(base_morse(mesh), targets, 1, collar_width)
        members = [psi]
    elif d == 3 and mesh.dimension == 1:
        order = np.argsort(targets[:, 0])
        t = targets[order]
        bump = base_morse_multibump(mesh, 2)
        right = relocate_criticals(bump, t, 1, collar_width)
        left = relocate_criticals(mirrored(bump), t, 1, collar_width)
        middle = relocate_criticals(base_morse(mesh), t[1:2], 1, collar_width)
        by_sorted = [left, middle, right]
        members = [None] * 3
        for rank, idx in enumerate(order):
            members[idx] = by_sorted[rank]
        members = [m.scaled(1.0 / m.max_value) for m in members]
    else:
        raise MorseError(
            "supported families: d = 1 on the interval or square, d = 3 on the interval"
        )
    for m, p in zip(members, targets):
        if np.linalg.norm(m.peak - p) > TOL_CRIT:
            raise MorseError(f"member peak {m.peak.tolist()} misses target {p.tolist()}")
    return make_weight_family(members, omega, r, collar_width, recipe)


def rebuild_family(family: WeightFamily, mesh: Mesh) -> WeightFamily:
    """Rebuild a family from its recipe on another mesh."""
    omega = make_region(mesh, family.omega.shapes)
    rec = family.recipe
    r = family.r if rec.get("r") is None else rec["r"]
    return build_weight_family(mesh, omega, rec["targets"], r, rec["collar_width"])


# ---------------------------------------------------------------------------
# verification of the gradient-versus-value bounds


@dataclass
class WeightReport:
    """Grid-optimal constants for the weight inequalities.

    ``c3`` is ``None`` when every ``C_i`` is empty.  ``failures`` lists the
    inequalities without a positive constant together with the worst node.
    """

    c1: float
    c2: float
    c3: float | None
    c4: float
    c5: float
    c6: float
    mu: float
    c_weight: float
    c3_pairs: list
    per_member: list
    failures: list

    @property
    def passed(self) -> bool:
        return not self.failures

    def as_dict(self) -> dict:
        return {
            "c1": self.c1,
            "c2": self.c2,
            "c3": self.c3 if self.c3 is not None else "not applicable (C_i empty)",
            "c4": self.c4,
            "c5": self.c5,
            "c6": self.c6,
            "mu": self.mu,
            "c_weight": self.c_weight,
            "c3_pairs": self.c3_pairs,
            "per_member": self.per_member,
            "failures": self.failures,
            "passed": self.passed,
        }


def _ratio(mesh: Mesh, phi: np.ndarray, rel_eps: float = 1e-10):
    g2 = np.sum(mesh.gradient(phi) ** 2, axis=1)
    ok = g2 > rel_eps * max(g2.max(), 1e-300)
    ratio = np.full(phi.size, np.nan)
    ratio[ok] = np.abs(phi[ok]) / g2[ok]
    return ratio, g2


def verify_weight_bounds(family: WeightFamily) -> WeightReport:
    """Best grid constants for each gradient-versus-value inequality."""
    mesh = family.mesh
    failures: list = []
    per = []
    c1 = c2 = c4 = c5 = np.nan
    c1s, c2s, c4s, c5s, c6s, mus = [], [], [], [], [], []
    c3_vals, c3_pairs = [], []
    interior_far = ~family.collar

    def worst(mask, arr, fn):
        idx = np.flatnonzero(mask & np.isfinite(arr))
        if idx.size == 0:
            return np.nan, -1
        k = idx[fn(arr[idx])]
        return float(arr[k]), int(k)

    for i in range(family.d):
        r1, _ = _ratio(mesh, family.phi1[i])
        r2, g22 = _ratio(mesh, family.phi2[i])
        everywhere = np.ones(mesh.size, dtype=bool)
        v1, k1 = worst(everywhere, r1, np.argmin)
        v2, k2 = worst(family.B[i] | family.D[i], r1, np.argmax)
        v4, k4 = worst(everywhere, r2, np.argmin)
        v5, k5 = worst(family.collar, r2, np.argmax)
        # φ2 - φ1 = -2ψ; only nodes away from the collar are constrained
        psi = family.psi[i].values
        v6 = 2.0 * float(psi[interior_far].min()) if interior_far.any() else np.nan
        outside = ~family.ball_mask(i)
        mu_i = -float(family.phi1[i][outside].max()) if outside.any() else np.nan
        c1s.append(v1); c2s.append(v2); c4s.append(v4); c5s.append(v5); c6s.append(v6); mus.append(mu_i)
        # unbounded ratios show up as vanishing gradients in the region
        g21 = np.sum(mesh.gradient(family.phi1[i]) ** 2, axis=1)
        bd = family.B[i] | family.D[i]
        bad = bd & ~family.B[i] & (g21 <= 1e-10 * g21.max())
        if bad.any():
            failures.append(
                {"bound": "c2", "member": i, "node": int(np.flatnonzero(bad)[0]),
                 "reason": "vanishing gradient outside the balls"}
            )
        bad5 = family.collar & (g22 <= 1e-10 * g22.max())
        if bad5.any():
            failures.append(
                {"bound": "c5", "member": i, "node": int(np.flatnonzero(bad5)[0]),
                 "reason": "vanishing gradient in the collar"}
            )
        comps = []
        for jc, q in enumerate(family.psi[i].critical_points):
            if jc == family.psi[i].argmax:
                continue
            comp = (np.linalg.norm(mesh.coords - q, axis=1) < family.r) & family.C[i]
            if not comp.any():
                continue
            best, best_j = -np.inf, -1
            for j in range(family.d):
                if j == i:
                    continue
                val = float(np.min(family.phi1[j][comp] - family.phi1[i][comp]))
                if val > best:
                    best, best_j = val, j
            comps.append({"point": q.tolist(), "paired_with": best_j, "c3": best})
            c3_vals.append(best)
            if best <= 0:
                failures.append(
                    {"bound": "c3", "member": i, "point": q.tolist(),
                     "reason": "no member dominates near this critical point"}
                )
        c3_pairs.append(comps)
        per.append(
            {"member": i, "c1": v1, "c1_node": k1, "c2": v2, "c2_node": k2, "c4": v4,
             "c4_node": k4, "c5": v5, "c5_node": k5, "c6": v6, "mu": mu_i,
             "sizes": {"B": int(family.B[i].sum()), "C": int(family.C[i].sum()),
                       "D": int(family.D[i].sum()), "collar": int(family.collar.sum())}}
        )
    c1, c2 = float(np.nanmin(c1s)), float(np.nanmax(c2s))
    c4, c5 = float(np.nanmin(c4s)), float(np.nanmax(c5s))
    c6, mu = float(np.nanmin(c6s)), float(np.nanmin(mus))
    c3 = float(min(c3_vals)) if c3_vals else None
    for name, val in (("c1", c1), ("c2", c2), ("c4", c4), ("c5", c5), ("c6", c6), ("mu", mu)):
        if not np.isfinite(val) or val <= 0:
            failures.append({"bound": name, "value": val, "reason": "no positive constant"})
    c_weight = float(np.max(np.abs(family.phi1[0])))
    return WeightReport(c1, c2, c3, c4, c5, c6, mu, c_weight, c3_pairs, per, failures)
