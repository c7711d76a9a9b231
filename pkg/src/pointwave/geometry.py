"""
Inclusion geometry: analytic shapes, voxel grids and ball quadrature

Ω is one of three analytic families (ball, box, ellipsoid) about a center y0;
Ω_ε = {y0 + ε(x − y0) : x ∈ Ω} is its shrunken copy.
"""

from dataclasses import dataclass, field
from typing import Callable, Tuple

import numpy as np

from src.pointwave.errors import DegenerateDomainError, ParameterError

SHAPES = ("ball", "box", "ellipsoid")

Vector = Tuple[float, float, float]


@dataclass(frozen=True)
class DomainSpec:
    """
    Analytic inclusion shape

    Args:
        shape: 'ball' | 'box' | 'ellipsoid'
        radius: ball radius
        sides: full side lengths of the axis-aligned box
        semi_axes: ellipsoid semi-axes
        center: y0
    """
    shape: str = "ball"
    radius: float = 1.0
    sides: Vector = (1.0, 1.0, 1.0)
    semi_axes: Vector = (1.0, 1.0, 1.0)
    center: Vector = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.shape not in SHAPES:
            raise ParameterError(f"Unknown shape '{self.shape}' (expected one of {', '.join(SHAPES)})")
        if self.shape == "ball" and self.radius <= 0:
            raise ParameterError(f"Ball radius must be positive, got {self.radius}")
        if self.shape == "box" and min(self.sides) <= 0:
            raise ParameterError(f"Box sides must be positive, got {self.sides}")
        if self.shape == "ellipsoid" and min(self.semi_axes) <= 0:
            raise ParameterError(f"Ellipsoid semi-axes must be positive, got {self.semi_axes}")

    @property
    def half_extent(self) -> np.ndarray:
        """Half-widths of the bounding box"""
        if self.shape == "ball":
            return np.full(3, float(self.radius))
        if self.shape == "box":
            return 0.5 * np.asarray(self.sides, dtype=float)
        return np.asarray(self.semi_axes, dtype=float)

    @property
    def diameter(self) -> float:
        if self.shape == "box":
            return float(np.linalg.norm(self.sides))
        return float(2.0 * self.half_extent.max())

    @property
    def exact_volume(self) -> float:
        if self.shape == "ball":
            return 4.0 * np.pi * self.radius ** 3 / 3.0
        if self.shape == "box":
            return float(np.prod(self.sides))
        return 4.0 * np.pi * float(np.prod(self.semi_axes)) / 3.0

    def contains(self, points: np.ndarray) -> np.ndarray:
        """Open-set membership for points of shape (..., 3)"""
        rel = np.asarray(points, dtype=float) - np.asarray(self.center, dtype=float)
        if self.shape == "ball":
            return np.einsum("...i,...i->...", rel, rel) < self.radius ** 2
        if self.shape == "box":
            return np.all(np.abs(rel) < self.half_extent, axis=-1)
        scaled = rel / self.half_extent
        return np.einsum("...i,...i->...", scaled, scaled) < 1.0

    def to_dict(self) -> dict:
        return {
            "shape": self.shape,
            "radius": self.radius,
            "sides": list(self.sides),
            "semi_axes": list(self.semi_axes),
            "center": list(self.center),
        }


@dataclass(frozen=True, eq=False)
class DomainGrid:
    """
    Voxelized Ω: cell centers of a lattice of pitch h lying inside the shape

    index holds the integer lattice coordinates of every cell inside a
    lattice of shape lattice_shape; the FFT matvec relies on it.
    """
    h: float
    centers: np.ndarray
    weights: np.ndarray
    index: np.ndarray
    lattice_shape: Tuple[int, int, int]
    volume: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "volume", float(self.weights.sum()))

    @property
    def n_cells(self) -> int:
        return len(self.weights)

    def inner(self, u: np.ndarray, v: np.ndarray) -> float:
        """Weighted L² inner product ⟨u, v⟩ = Σ w_i u_i v_i"""
        return float(np.sum(self.weights * u * v))


def voxelize(spec: DomainSpec, resolution: int) -> DomainGrid:
    """
    Cell-center voxelization of Ω with pitch h = diameter / resolution

    The lattice is symmetric about y0 (centers at y0 + (j + ½)h), so grids
    of symmetric shapes inherit the reflection symmetries of the shape.
    """
    if resolution < 8:
        raise ParameterError(f"Resolution must be ≥ 8 cells per diameter, got {resolution}")

    h = spec.diameter / resolution
    n_half = np.ceil(spec.half_extent / h).astype(int)
    center = np.asarray(spec.center, dtype=float)
    axes = [center[i] + (np.arange(-n_half[i], n_half[i]) + 0.5) * h for i in range(3)]

    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    inside = spec.contains(mesh)
    if not inside.any():
        raise DegenerateDomainError(
            f"Voxelization of {spec.shape} at resolution {resolution} contains no cell centers"
        )

    index = np.argwhere(inside)
    centers = mesh[inside]
    weights = np.full(len(centers), h ** 3)

    return DomainGrid(
        h=h,
        centers=centers,
        weights=weights,
        index=index,
        lattice_shape=tuple(int(2 * n) for n in n_half),
    )


def scale_membership(spec: DomainSpec, eps: float) -> Callable[[np.ndarray], np.ndarray]:
    """Membership predicate of Ω_ε: x ∈ Ω_ε ⇔ y0 + (x − y0)/ε ∈ Ω"""
    if not 0.0 < eps < 1.0:
        raise ParameterError(f"Contrast scale eps must lie in (0, 1), got {eps}")

    y0 = np.asarray(spec.center, dtype=float)

    def member(points: np.ndarray) -> np.ndarray:
        return spec.contains(y0 + (np.asarray(points, dtype=float) - y0) / eps)

    return member


def scale_grid(grid: DomainGrid, spec: DomainSpec, eps: float) -> DomainGrid:
    """Voxelization of Ω_ε obtained by shrinking the cell centers of a grid of Ω"""
    if not 0.0 < eps < 1.0:
        raise ParameterError(f"Contrast scale eps must lie in (0, 1), got {eps}")

    y0 = np.asarray(spec.center, dtype=float)
    h = eps * grid.h
    return DomainGrid(
        h=h,
        centers=y0 + eps * (grid.centers - y0),
        weights=grid.weights * eps ** 3,
        index=grid.index.copy(),
        lattice_shape=grid.lattice_shape,
    )


# ============================================================================
# QUADRATURE
# ============================================================================

@dataclass(frozen=True, eq=False)
class SphereRule:
    """Unit-sphere product rule: Gauss–Legendre in cos θ × uniform azimuth"""
    order: int
    nodes: np.ndarray
    weights: np.ndarray

    def mean(self, values: np.ndarray) -> np.ndarray:
        """Spherical mean of samples whose last axis runs over the nodes"""
        return values @ self.weights / (4.0 * np.pi)


def sphere_rule(order: int) -> SphereRule:
    """
    Product rule exact for spherical harmonics of degree ≤ order

    order//2 + 1 Legendre nodes integrate cos θ polynomials of degree ≤ order;
    order + 1 equispaced azimuths integrate trigonometric degree ≤ order.
    """
    if order < 1:
        raise ParameterError(f"Sphere rule order must be ≥ 1, got {order}")

    mu, w_mu = np.polynomial.legendre.leggauss(order // 2 + 1)
    n_phi = order + 1
    phi = 2.0 * np.pi * np.arange(n_phi) / n_phi

    sin_theta = np.sqrt(1.0 - mu ** 2)
    nodes = np.stack([
        np.outer(sin_theta, np.cos(phi)).ravel(),
        np.outer(sin_theta, np.sin(phi)).ravel(),
        np.repeat(mu, n_phi),
    ], axis=-1)
    weights = np.repeat(w_mu, n_phi) * (2.0 * np.pi / n_phi)

    return SphereRule(order=order, nodes=nodes, weights=weights)


@dataclass(frozen=True, eq=False)
class BallQuadrature:
    """
    Tensor rule over a ball (or shell) r_inner < |y| < R

    points/weights are the flattened product nodes; the r² Jacobian is
    folded into the weights.
    """
    R: float
    r_inner: float
    radial_nodes: np.ndarray
    radial_weights: np.ndarray
    sphere: SphereRule
    points: np.ndarray = field(init=False)
    weights: np.ndarray = field(init=False)

    def __post_init__(self):
        points = (self.radial_nodes[:, None, None] * self.sphere.nodes[None, :, :]).reshape(-1, 3)
        weights = np.outer(self.radial_weights * self.radial_nodes ** 2, self.sphere.weights).ravel()
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "weights", weights)

    def integrate(self, integrand: Callable[[np.ndarray], np.ndarray]) -> float:
        return float(np.dot(self.weights, integrand(self.points)))


def shell_quadrature(r_inner: float, r_outer: float, radial_order: int,
                     sphere: SphereRule) -> BallQuadrature:
    """Gauss–Legendre in r on [r_inner, r_outer] times a sphere rule"""
    if radial_order < 1:
        raise ParameterError(f"Radial order must be ≥ 1, got {radial_order}")
    if not 0.0 <= r_inner <= r_outer:
        raise ParameterError(f"Shell radii must satisfy 0 ≤ r_inner ≤ r_outer, got ({r_inner}, {r_outer})")

    x, w = np.polynomial.legendre.leggauss(radial_order)
    half = 0.5 * (r_outer - r_inner)
    return BallQuadrature(
        R=r_outer,
        r_inner=r_inner,
        radial_nodes=r_inner + half * (x + 1.0),
        radial_weights=half * w,
        sphere=sphere,
    )


def ball_quadrature(R: float, radial_order: int, sphere_order: int) -> BallQuadrature:
    """Product rule over B_R with radial_order × sphere-node-count nodes"""
    if R <= 0:
        raise ParameterError(f"Ball radius must be positive, got {R}")
    return shell_quadrature(0.0, R, radial_order, sphere_rule(sphere_order))
