"""Uniform grids on the unit interval and unit square.

Provides trapezoidal quadrature (volume and boundary), second-order finite
difference operators, and the ghost-node Neumann Laplacian.

Node ordering in 2D is row-major over ``(ix, iy)`` with ``x`` varying along
the first axis, i.e. flat index ``k = ix * n + iy``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import CubicSpline, RectBivariateSpline

MIN_RESOLUTION = 8


class MeshMismatchError(ValueError):
    """Raised when two fields live on different meshes."""


@dataclass(frozen=True, eq=False)
class Mesh:
    """Uniform tensor grid on (0,1) or (0,1)^2.

    Attributes:
        dimension: 1 or 2.
        resolution: nodes per axis.
        spacing: grid step (same on both axes).
        coords: node coordinates, shape ``(N, dimension)``.
        boundary: flat indices of boundary nodes (sorted).
        interior: flat indices of interior nodes.
        normals: unit outward normals at boundary nodes, ``(Nb, dimension)``.
        weights: trapezoidal volume weights, shape ``(N,)``.
        boundary_weights: trapezoidal boundary weights, shape ``(Nb,)``.
    """

    dimension: int
    resolution: int
    spacing: float
    coords: np.ndarray = field(repr=False)
    boundary: np.ndarray = field(repr=False)
    interior: np.ndarray = field(repr=False)
    normals: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    boundary_weights: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return self.coords.shape[0]

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.resolution,) * self.dimension

    @property
    def x(self) -> np.ndarray:
        """1D axis coordinates."""
        return np.linspace(0.0, 1.0, self.resolution)

    def same_as(self, other: "Mesh") -> bool:
        return (
            self is other
            or (self.dimension == other.dimension and self.resolution == other.resolution)
        )

    def check(self, *arrays: np.ndarray) -> None:
        for a in arrays:
            if np.shape(a)[-1] != self.size:
                raise MeshMismatchError(
                    f"field has {np.shape(a)[-1]} values, mesh has {self.size} nodes"
                )

    # ------------------------------------------------------------------ quadrature

    def integrate(self, f: np.ndarray) -> float:
        return float(np.dot(self.weights, f))

    def inner_product(self, f: np.ndarray, g: np.ndarray) -> float:
        """Trapezoidal approximation of the integral of ``f * g`` over the domain."""
        f = np.asarray(f, dtype=float)
        g = np.asarray(g, dtype=float)
        self.check(f, g)
        return float(np.dot(self.weights, f * g))

    def norm(self, f: np.ndarray) -> float:
        return float(np.sqrt(max(self.inner_product(f, f), 0.0)))

    def boundary_integral(self, b: np.ndarray) -> float:
        """Integral over the boundary of a boundary field."""
        return float(np.dot(self.boundary_weights, b))

    # ------------------------------------------------------------------ operators

    def _grid(self, f: np.ndarray) -> np.ndarray:
        return np.asarray(f, dtype=float).reshape(self.shape)

    def gradient(self, f: np.ndarray) -> np.ndarray:
        """Central differences inside, second-order one-sided at the edges.

        Returns an array of shape ``(N, dimension)``.
        """
        f = np.asarray(f, dtype=float)
        self.check(f)
        g = self._grid(f)
        if self.dimension == 1:
            return np.gradient(g, self.spacing, edge_order=2)[:, None]
        gx, gy = np.gradient(g, self.spacing, edge_order=2)
        return np.stack([gx.ravel(), gy.ravel()], axis=1)

    def hessian(self, f: np.ndarray) -> np.ndarray:
        """Repeated first differences, shape ``(N, dimension, dimension)``."""
        grad = self.gradient(f)
        out = np.empty((self.size, self.dimension, self.dimension))
        for a in range(self.dimension):
            out[:, a, :] = self.gradient(grad[:, a])
        if self.dimension == 2:
            sym = 0.5 * (out[:, 0, 1] + out[:, 1, 0])
            out[:, 0, 1] = sym
            out[:, 1, 0] = sym
        return out

    def laplacian(self, f: np.ndarray) -> np.ndarray:
        """Consistent second-order Laplacian with no boundary condition imposed.

        Interior nodes use the three-point stencil; edge nodes use the
        four-point one-sided second derivative.  This is the operator to apply
        to fields that do not satisfy a homogeneous Neumann condition.
        """
        f = np.asarray(f, dtype=float)
        self.check(f)
        g = self._grid(f)
        out = np.zeros_like(g)
        for axis in range(self.dimension):
            out += _second_difference(g, axis, self.spacing)
        return out.ravel()

    @cached_property
    def neumann_matrix(self) -> sp.csr_matrix:
        """Sparse ghost-node Neumann Laplacian."""
        n, h = self.resolution, self.spacing
        main = -2.0 * np.ones(n)
        off = np.ones(n - 1)
        upper = off.copy()
        lower = off.copy()
        upper[0] = 2.0  # ghost u_{-1} = u_1
        lower[-1] = 2.0  # ghost u_{n} = u_{n-2}
        d1 = sp.diags([lower, main, upper], [-1, 0, 1], format="csr") / h**2
        if self.dimension == 1:
            return d1
        eye = sp.identity(n, format="csr")
        return (sp.kron(d1, eye) + sp.kron(eye, d1)).tocsr()

    def laplacian_neumann(self, f: np.ndarray) -> np.ndarray:
        """Ghost-node reflected Laplacian enforcing a zero normal derivative.

        Self-adjoint with respect to :meth:`inner_product` and negative
        semidefinite; constants span the kernel.
        """
        f = np.asarray(f, dtype=float)
        self.check(f)
        return self.neumann_matrix @ f

    def normal_derivative(self, f: np.ndarray) -> np.ndarray:
        """Outward normal derivative at boundary nodes (one-sided, second order)."""
        grad = self.gradient(f)[self.boundary]
        return np.einsum("ij,ij->i", grad, self.normals)

    def tangential_derivative(self, f: np.ndarray) -> np.ndarray:
        """Derivative along the boundary tangent (zero in 1D)."""
        if self.dimension == 1:
            return np.zeros(self.boundary.size)
        grad = self.gradient(f)[self.boundary]
        tangents = np.stack([-self.normals[:, 1], self.normals[:, 0]], axis=1)
        return np.einsum("ij,ij->i", grad, tangents)

    # ------------------------------------------------------------------ helpers

    def distance_to_boundary(self) -> np.ndarray:
        return np.min(np.minimum(self.coords, 1.0 - self.coords), axis=1)

    def evaluate(self, func) -> np.ndarray:
        """Sample ``func`` (taking coordinate arrays) at the nodes."""
        if self.dimension == 1:
            return np.asarray(func(self.coords[:, 0]), dtype=float) * np.ones(self.size)
        return np.asarray(func(self.coords[:, 0], self.coords[:, 1]), dtype=float) * np.ones(
            self.size
        )

    def interpolator(self, f: np.ndarray, neumann: bool = False):
        """Cubic interpolant of nodal values; returns a callable on points ``(m, dim)``.

        With ``neumann=True`` the 1D spline is clamped to a zero end slope.
        """
        f = np.asarray(f, dtype=float)
        self.check(f)
        if self.dimension == 1:
            spline = CubicSpline(self.x, f, bc_type="clamped" if neumann else "not-a-knot")
            return lambda pts: spline(np.asarray(pts, dtype=float).reshape(-1))
        spline = RectBivariateSpline(self.x, self.x, self._grid(f), kx=3, ky=3)

        def ev(pts):
            pts = np.atleast_2d(np.asarray(pts, dtype=float))
            return spline.ev(pts[:, 0], pts[:, 1])

        return ev

    def resample(self, f: np.ndarray, target: "Mesh", neumann: bool = True) -> np.ndarray:
        """Cubic interpolation of a nodal field onto another mesh of the same dimension."""
        if target.dimension != self.dimension:
            raise MeshMismatchError("cannot resample across dimensions")
        if target.same_as(self):
            return np.array(f, dtype=float)
        return self.interpolator(f, neumann=neumann)(target.coords)

    def refine(self, factor: int) -> "Mesh":
        """Mesh whose node set contains this one, with ``factor`` times smaller spacing."""
        return build_mesh(self.dimension, (self.resolution - 1) * int(factor) + 1)


def _second_difference(g: np.ndarray, axis: int, h: float) -> np.ndarray:
    g = np.moveaxis(g, axis, 0)
    out = np.empty_like(g)
    out[1:-1] = (g[:-2] - 2.0 * g[1:-1] + g[2:]) / h**2
    out[0] = (2.0 * g[0] - 5.0 * g[1] + 4.0 * g[2] - g[3]) / h**2
    out[-1] = (2.0 * g[-1] - 5.0 * g[-2] + 4.0 * g[-3] - g[-4]) / h**2
    return np.moveaxis(out, 0, axis)


def _trapezoid_1d(n: int, h: float) -> np.ndarray:
    w = np.full(n, h)
    w[0] = w[-1] = 0.5 * h
    return w


def build_mesh(dimension: int, resolution: int) -> Mesh:
    """Uniform mesh of the unit interval (``dimension=1``) or unit square (``2``).

    Raises:
        ValueError: for an unsupported dimension or ``resolution < 8``.
    """
    if dimension not in (1, 2):
        raise ValueError(f"dimension must be 1 or 2, got {dimension}")
    resolution = int(resolution)
    if resolution < MIN_RESOLUTION:
        raise ValueError(
            f"resolution must be >= {MIN_RESOLUTION} nodes per axis, got {resolution}"
        )
    n = resolution
    h = 1.0 / (n - 1)
    x = np.linspace(0.0, 1.0, n)
    w1 = _trapezoid_1d(n, h)

    if dimension == 1:
        coords = x[:, None]
        boundary = np.array([0, n - 1])
        normals = np.array([[-1.0], [1.0]])
        weights = w1
        bweights = np.ones(2)
    else:
        X, Y = np.meshgrid(x, x, indexing="ij")
        coords = np.stack([X.ravel(), Y.ravel()], axis=1)
        ix, iy = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        ix, iy = ix.ravel(), iy.ravel()
        on_edge = (ix == 0) | (ix == n - 1) | (iy == 0) | (iy == n - 1)
        boundary = np.flatnonzero(on_edge)
        bx, by = ix[boundary], iy[boundary]
        nx = np.where(bx == 0, -1.0, np.where(bx == n - 1, 1.0, 0.0))
        ny = np.where(by == 0, -1.0, np.where(by == n - 1, 1.0, 0.0))
        normals = np.stack([nx, ny], axis=1)
        normals /= np.linalg.norm(normals, axis=1)[:, None]
        weights = np.outer(w1, w1).ravel()
        # each corner collects a half segment from both adjacent sides
        bweights = np.full(boundary.size, h)

    interior = np.setdiff1d(np.arange(coords.shape[0]), boundary)
    return Mesh(
        dimension=dimension,
        resolution=n,
        spacing=h,
        coords=coords,
        boundary=boundary,
        interior=interior,
        normals=normals,
        weights=weights,
        boundary_weights=bweights,
    )


@dataclass
class Field:
    """Nodal scalar field bound to a mesh."""

    mesh: Mesh
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.mesh.size,):
            raise MeshMismatchError(
                f"expected {self.mesh.size} values, got shape {self.values.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")


def interval_hat_weights(x: np.ndarray, a: float, b: float) -> np.ndarray:
    """Integrals of the P1 hat functions of a uniform 1D grid over ``[a, b]``.

    Summing ``w * f`` gives the exact integral over ``[a, b]`` of the piecewise
    linear interpolant of ``f``; on node-aligned intervals this is the
    trapezoidal rule.
    """
    x = np.asarray(x, dtype=float)
    h = x[1] - x[0]
    lo = np.clip(a, x[0], x[-1])
    hi = np.clip(b, x[0], x[-1])
    w = np.zeros_like(x)
    if hi <= lo:
        return w
    # rising half of hat k on [x_{k-1}, x_k], falling half on [x_k, x_{k+1}]
    left = x - h
    right = x + h

    def rising(l, r, k0):
        # integral of (t - k0)/h over [l, r]
        return ((r - k0) ** 2 - (l - k0) ** 2) / (2 * h)

    def falling(l, r, k1):
        return ((k1 - l) ** 2 - (k1 - r) ** 2) / (2 * h)

    l1 = np.maximum(lo, left)
    r1 = np.minimum(hi, x)
    m1 = (r1 > l1) & (np.arange(x.size) > 0)
    w[m1] += rising(l1[m1], r1[m1], left[m1])
    l2 = np.maximum(lo, x)
    r2 = np.minimum(hi, right)
    m2 = (r2 > l2) & (np.arange(x.size) < x.size - 1)
    w[m2] += falling(l2[m2], r2[m2], right[m2])
    return w
