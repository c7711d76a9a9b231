"""
Free wave field: Cauchy data, spherical means, Kirchhoff and Duhamel formulas

The scatterer sits at the origin; data are shifted instead of the scatterer.
Shipped data are radial polynomial bumps P(|x − c|²), whose Laplacians are
again bumps (Δ acts on the coefficients of P), so every Laplacian stack the
forcing signal needs is analytic.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Protocol, Sequence, Tuple

import numpy as np
import pandas as pd
from numpy.polynomial import Polynomial
from scipy.integrate import simpson

from src.pointwave.errors import CapabilityError, ParameterError
from src.pointwave.geometry import SphereRule, shell_quadrature, sphere_rule

# Points per chunk × sphere nodes kept below this many samples
CHUNK_SAMPLES = 200_000

# Default sphere rule order for all spherical means
DEFAULT_SPHERE_ORDER = 47

# Internal refinement of Δt for d/dt(t·MΔφ)
DERIVATIVE_REFINE = 16


class Field(Protocol):
    """Scalar field on R³ with optional analytic derivatives"""

    def __call__(self, points: np.ndarray) -> np.ndarray: ...

    def gradient(self, points: np.ndarray) -> np.ndarray: ...

    def laplacian(self) -> "Field": ...

    def support_radii(self) -> Tuple[float, float]: ...


# ============================================================================
# DATA FAMILIES
# ============================================================================

@dataclass(frozen=True, eq=False)
class RadialBump:
    """
    P(s) with s = |x − c|², supported on inner ≤ |x − c| ≤ outer

    Use RadialBump.solid / RadialBump.shell; laplacian() stays in the family.
    """
    center: Tuple[float, float, float]
    poly: Polynomial
    inner: float
    outer: float

    @classmethod
    def solid(cls, center, radius: float, amplitude: float = 1.0, order: int = 7) -> "RadialBump":
        """(b² − s)^n, C^(n−1), unit peak at the center times amplitude"""
        base = Polynomial([radius ** 2, -1.0]) ** order
        return cls(tuple(map(float, center)), amplitude * base / radius ** (2 * order), 0.0, float(radius))

    @classmethod
    def shell(cls, center, inner: float, outer: float, amplitude: float = 1.0,
              order: int = 7) -> "RadialBump":
        """((s − a²)(b² − s))^n, unit peak at s = (a² + b²)/2 times amplitude"""
        if not 0.0 < inner < outer:
            raise ParameterError(f"Shell radii must satisfy 0 < inner < outer, got ({inner}, {outer})")
        base = (Polynomial([-inner ** 2, 1.0]) * Polynomial([outer ** 2, -1.0])) ** order
        peak = (0.5 * (outer ** 2 - inner ** 2)) ** (2 * order)
        return cls(tuple(map(float, center)), amplitude * base / peak, float(inner), float(outer))

    def _offsets(self, points: np.ndarray):
        rel = np.asarray(points, dtype=float) - np.asarray(self.center)
        s = np.einsum("...i,...i->...", rel, rel)
        inside = (s >= self.inner ** 2) & (s < self.outer ** 2)
        return rel, s, inside

    def __call__(self, points: np.ndarray) -> np.ndarray:
        _, s, inside = self._offsets(points)
        return np.where(inside, self.poly(s), 0.0)

    def gradient(self, points: np.ndarray) -> np.ndarray:
        rel, s, inside = self._offsets(points)
        slope = np.where(inside, 2.0 * self.poly.deriv()(s), 0.0)
        return slope[..., None] * rel

    def laplacian(self) -> "RadialBump":
        # Δ P(|x|²) = 6 P'(s) + 4 s P''(s)
        lap = 6.0 * self.poly.deriv() + 4.0 * Polynomial([0.0, 1.0]) * self.poly.deriv(2)
        return RadialBump(self.center, lap, self.inner, self.outer)

    def scaled(self, factor: float) -> "RadialBump":
        return RadialBump(self.center, factor * self.poly, self.inner, self.outer)

    def support_radii(self, about=(0.0, 0.0, 0.0)) -> Tuple[float, float]:
        """Distance from `about` to the support, and the far radius of the support"""
        d = float(np.linalg.norm(np.asarray(self.center) - np.asarray(about)))
        if d <= self.inner:
            near = self.inner - d
        elif d <= self.outer:
            near = 0.0
        else:
            near = d - self.outer
        return near, d + self.outer

    def exact_spherical_mean(self, about, radius) -> np.ndarray:
        """
        Closed-form mean over the sphere |x − about| = r

        M(r) = (Q(min(r+d, b)²) − Q(max(|r−d|, a)²)) / (4rd), Q = ∫P, d = |c − about|.
        """
        r = np.atleast_1d(np.asarray(radius, dtype=float))
        d = float(np.linalg.norm(np.asarray(self.center) - np.asarray(about, dtype=float)))
        if d == 0.0:
            inside = (r >= self.inner) & (r < self.outer)
            return np.where(inside, self.poly(r * r), 0.0)

        Q = self.poly.integ()
        lo = np.maximum(np.abs(r - d), self.inner)
        hi = np.minimum(r + d, self.outer)
        with np.errstate(divide="ignore", invalid="ignore"):
            mean = (Q(hi * hi) - Q(lo * lo)) / (4.0 * r * d)
        mean = np.where(hi > lo, mean, 0.0)
        at_center = self(np.asarray(about, dtype=float))
        return np.where(r == 0.0, at_center, mean)


@dataclass(frozen=True, eq=False)
class BumpField:
    """Finite sum of radial bumps; the empty sum is the zero field"""
    terms: Tuple[RadialBump, ...] = ()

    @property
    def is_zero(self) -> bool:
        return len(self.terms) == 0

    def __call__(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        total = np.zeros(points.shape[:-1])
        for term in self.terms:
            total = total + term(points)
        return total

    def gradient(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        total = np.zeros(points.shape)
        for term in self.terms:
            total = total + term.gradient(points)
        return total

    def laplacian(self) -> "BumpField":
        return BumpField(tuple(term.laplacian() for term in self.terms))

    def scaled(self, factor: float) -> "BumpField":
        return BumpField(tuple(term.scaled(factor) for term in self.terms))

    def __add__(self, other: "BumpField") -> "BumpField":
        return BumpField(self.terms + other.terms)

    def support_radii(self, about=(0.0, 0.0, 0.0)) -> Tuple[float, float]:
        if self.is_zero:
            return math.inf, 0.0
        radii = [term.support_radii(about) for term in self.terms]
        return min(r[0] for r in radii), max(r[1] for r in radii)

    def exact_spherical_mean(self, about, radius) -> np.ndarray:
        r = np.atleast_1d(np.asarray(radius, dtype=float))
        total = np.zeros_like(r)
        for term in self.terms:
            total = total + term.exact_spherical_mean(about, r)
        return total


@dataclass(frozen=True, eq=False)
class CallableField:
    """User-supplied field; derivatives are optional and checked on use"""
    func: Callable[[np.ndarray], np.ndarray]
    rho_min: float
    rho_max: float
    grad: Optional[Callable[[np.ndarray], np.ndarray]] = None
    lap: Optional["CallableField"] = None

    @property
    def is_zero(self) -> bool:
        return False

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return self.func(np.asarray(points, dtype=float))

    def gradient(self, points: np.ndarray) -> np.ndarray:
        if self.grad is None:
            raise CapabilityError("Field has no analytic gradient (needed by the Kirchhoff integrand)")
        return self.grad(np.asarray(points, dtype=float))

    def laplacian(self) -> "CallableField":
        if self.lap is None:
            raise CapabilityError("Field has no analytic Laplacian stack")
        return self.lap

    def support_radii(self, about=(0.0, 0.0, 0.0)) -> Tuple[float, float]:
        return self.rho_min, self.rho_max


@dataclass(frozen=True)
class TimePulse:
    """g(s) = A sin²(π(s − onset)/duration) on [onset, onset + duration], zero elsewhere"""
    amplitude: float = 1.0
    duration: float = 1.0
    onset: float = 0.0

    def __call__(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        phase = (s - self.onset) / self.duration
        active = (phase >= 0.0) & (phase <= 1.0)
        return np.where(active, self.amplitude * np.sin(np.pi * phase) ** 2, 0.0)


@dataclass(frozen=True, eq=False)
class SeparableSource:
    """f(s, y) = g(s) · F(y)"""
    pulse: TimePulse
    spatial: BumpField

    def __call__(self, s: float, points: np.ndarray) -> np.ndarray:
        return float(self.pulse(s)) * self.spatial(points)

    def laplacian(self) -> "SeparableSource":
        return SeparableSource(self.pulse, self.spatial.laplacian())

    def support_radii(self, about=(0.0, 0.0, 0.0)) -> Tuple[float, float]:
        return self.spatial.support_radii(about)


@dataclass(frozen=True, eq=False)
class CauchyBundle:
    """
    Initial data φ, ψ and source f, all supported away from the scatterer

    Laplacian stacks (Δφ, Δ²φ, Δψ, Δf) are derived on demand; fields without
    analytic Laplacians raise CapabilityError when a stack is requested.
    """
    phi: Field = field(default_factory=BumpField)
    psi: Field = field(default_factory=BumpField)
    source: Optional[SeparableSource] = None

    def __post_init__(self):
        if self.rho_min <= 0.0:
            raise ParameterError(
                f"Cauchy data must be supported away from the scatterer (clearance {self.rho_min:.3g} ≤ 0)"
            )

    def _parts(self) -> list:
        parts = [f for f in (self.phi, self.psi) if not getattr(f, "is_zero", False)]
        if self.source is not None:
            parts.append(self.source)
        return parts

    @property
    def rho_min(self) -> float:
        parts = self._parts()
        return min(p.support_radii()[0] for p in parts) if parts else math.inf

    @property
    def rho_max(self) -> float:
        parts = self._parts()
        return max(p.support_radii()[1] for p in parts) if parts else 0.0

    @property
    def is_zero(self) -> bool:
        return not self._parts()

    @property
    def is_radial(self) -> bool:
        """Every datum is a function of |x| (bumps centered at the scatterer)"""
        spatial = [self.phi, self.psi] + ([self.source.spatial] if self.source is not None else [])
        for f in spatial:
            if not isinstance(f, BumpField):
                return False
            if any(any(c != 0.0 for c in term.center) for term in f.terms):
                return False
        return True

    @property
    def lap_phi(self) -> Field:
        return self.phi.laplacian()

    @property
    def bilap_phi(self) -> Field:
        return self.phi.laplacian().laplacian()

    @property
    def lap_psi(self) -> Field:
        return self.psi.laplacian()

    @property
    def lap_source(self) -> Optional[SeparableSource]:
        return None if self.source is None else self.source.laplacian()

    def __add__(self, other: "CauchyBundle") -> "CauchyBundle":
        if self.source is not None and other.source is not None:
            if self.source.pulse != other.source.pulse:
                raise CapabilityError("Sources with different time pulses cannot be merged")
            source = SeparableSource(self.source.pulse, self.source.spatial + other.source.spatial)
        else:
            source = self.source if self.source is not None else other.source
        return CauchyBundle(phi=self.phi + other.phi, psi=self.psi + other.psi, source=source)


def shell_bundle(inner: float = 0.5, outer: float = 2.0, phi_amplitude: float = 1.0,
                 psi_amplitude: float = 0.0, order: int = 7,
                 source: Optional[SeparableSource] = None) -> CauchyBundle:
    """Origin-centered shells: spherical means about the origin are exact for any rule"""
    def make(amplitude):
        if amplitude == 0.0:
            return BumpField()
        return BumpField((RadialBump.shell((0.0, 0.0, 0.0), inner, outer, amplitude, order),))

    return CauchyBundle(phi=make(phi_amplitude), psi=make(psi_amplitude), source=source)


def offset_bundle(distance: float = 1.2, radius: float = 0.7, phi_amplitude: float = 1.0,
                  psi_amplitude: float = 0.0, order: int = 7,
                  source: Optional[SeparableSource] = None) -> CauchyBundle:
    """Solid bump centered on the +z axis, the pole axis of the sphere rule"""
    def make(amplitude):
        if amplitude == 0.0:
            return BumpField()
        return BumpField((RadialBump.solid((0.0, 0.0, distance), radius, amplitude, order),))

    return CauchyBundle(phi=make(phi_amplitude), psi=make(psi_amplitude), source=source)


# ============================================================================
# SPHERICAL MEANS
# ============================================================================

def _as_sphere(sphere: Optional[SphereRule]) -> SphereRule:
    return sphere if sphere is not None else sphere_rule(DEFAULT_SPHERE_ORDER)


def spherical_mean(field_: Callable[[np.ndarray], np.ndarray], center, radius,
                   sphere: Optional[SphereRule] = None) -> np.ndarray:
    """
    Mu(r) = (1/4πr²) ∮_{|x−c|=r} u dσ for one center and one or many radii

    Returns an array with the shape of `radius`; radius 0 gives u(c).
    """
    sphere = _as_sphere(sphere)
    radius = np.asarray(radius, dtype=float)
    if np.any(radius < 0):
        raise ParameterError("Spherical mean radius must be ≥ 0")

    r = np.atleast_1d(radius)
    center = np.asarray(center, dtype=float)
    points = center + r[:, None, None] * sphere.nodes[None, :, :]
    means = sphere.mean(field_(points))
    means = np.where(r == 0.0, field_(center), means)
    return means.reshape(radius.shape)


def origin_mean(field_, radius, sphere: Optional[SphereRule] = None) -> np.ndarray:
    """Mean about the scatterer; closed form for bump fields, sphere rule otherwise"""
    if hasattr(field_, "exact_spherical_mean"):
        radius = np.asarray(radius, dtype=float)
        return field_.exact_spherical_mean((0.0, 0.0, 0.0), radius).reshape(radius.shape)
    return spherical_mean(field_, (0.0, 0.0, 0.0), radius, sphere)


def _means_at_points(field_, points: np.ndarray, radius: float, sphere: SphereRule,
                     directional: bool = False) -> np.ndarray:
    """Spherical means of radius `radius` about many centers (n, 3)"""
    n = len(points)
    out = np.empty(n)
    chunk = max(1, CHUNK_SAMPLES // len(sphere.weights))
    for start in range(0, n, chunk):
        block = points[start:start + chunk]
        nodes = block[:, None, :] + radius * sphere.nodes[None, :, :]
        if directional:
            # ∇u(x + rω)·ω, the radial derivative under the mean
            values = np.einsum("pqi,qi->pq", field_.gradient(nodes), sphere.nodes)
        else:
            values = field_(nodes)
        out[start:start + chunk] = sphere.mean(values)
    return out


def _as_points(x) -> Tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    return np.atleast_2d(x), single


# ============================================================================
# KIRCHHOFF / DUHAMEL
# ============================================================================

def kirchhoff_eval(data: CauchyBundle, t: float, x, sphere: Optional[SphereRule] = None):
    """
    u_free(t, x) = ∂_t(t·Mφ(t; x)) + t·Mψ(t; x)

    ∂_t(t·Mφ) = Mφ + t·M(∇φ·ω) (gradient form). x is a point or an (n, 3) array.
    """
    if t < 0:
        raise ParameterError(f"Time must be ≥ 0, got {t}")
    sphere = _as_sphere(sphere)
    points, single = _as_points(x)

    u = np.zeros(len(points))
    if not getattr(data.phi, "is_zero", False):
        if t == 0.0:
            u += data.phi(points)
        else:
            u += _means_at_points(data.phi, points, t, sphere)
            u += t * _means_at_points(data.phi, points, t, sphere, directional=True)
    if not getattr(data.psi, "is_zero", False) and t > 0.0:
        u += t * _means_at_points(data.psi, points, t, sphere)

    return float(u[0]) if single else u


def _simpson_nodes(t: float, ds: float) -> np.ndarray:
    n = max(2, int(math.ceil(t / ds)))
    n += n % 2
    return np.linspace(0.0, t, n + 1)


def duhamel_eval(data: CauchyBundle, t: float, x, ds: float,
                 sphere: Optional[SphereRule] = None):
    """
    û_free(t, x) = ∫₀ᵗ (t − s)·(M f(s))(t − s; x) ds, composite Simpson in s
    """
    if t < 0:
        raise ParameterError(f"Time must be ≥ 0, got {t}")
    if ds <= 0:
        raise ParameterError(f"Duhamel step must be positive, got {ds}")
    sphere = _as_sphere(sphere)
    points, single = _as_points(x)

    if data.source is None or t == 0.0:
        zero = np.zeros(len(points))
        return 0.0 if single else zero

    s_nodes = _simpson_nodes(t, ds)
    samples = np.zeros((len(s_nodes), len(points)))
    for j, s in enumerate(s_nodes):
        lag = t - s
        amplitude = float(data.source.pulse(s))
        if lag == 0.0 or amplitude == 0.0:
            continue
        samples[j] = lag * amplitude * _means_at_points(data.source.spatial, points, lag, sphere)

    u = simpson(samples, x=s_nodes, axis=0)
    return float(u[0]) if single else u


# ============================================================================
# FORCING SIGNAL h(t) = Δu_free(t, 0) + Δû_free(t, 0)
# ============================================================================

@dataclass(frozen=True, eq=False)
class ForcingSignal:
    """h sampled on t_i = iΔt, i = 0..n"""
    times: np.ndarray
    values: np.ndarray

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"t": self.times, "h": self.values})


def time_grid(dt: float, T: float) -> np.ndarray:
    if dt <= 0 or T <= 0:
        raise ParameterError(f"Time step and horizon must be positive, got dt={dt}, T={T}")
    n = int(math.floor(T / dt + 1e-9))
    return dt * np.arange(n + 1)


def retarded_convolution(pulse_samples: np.ndarray, kernel_samples: np.ndarray,
                         dt: float) -> np.ndarray:
    """c_i = ∫₀^{t_i} g(s) B(t_i − s) ds on a uniform grid (Simpson, trapezoid for one step)"""
    n = len(pulse_samples)
    out = np.zeros(n)
    for i in range(1, n):
        integrand = pulse_samples[: i + 1] * kernel_samples[i::-1]
        out[i] = simpson(integrand, dx=dt) if i >= 2 else 0.5 * dt * (integrand[0] + integrand[1])
    return out


def _source_forcing(data: CauchyBundle, times: np.ndarray, sphere: SphereRule) -> np.ndarray:
    """∫₀ᵗ (t − s)·(MΔf(s))(t − s) ds for the separable source"""
    lap = data.lap_source
    kernel = times * origin_mean(lap.spatial, times, sphere)
    return retarded_convolution(lap.pulse(times), kernel, float(times[1] - times[0]))


def forcing_signal(data: CauchyBundle, dt: float, T: float,
                   sphere: Optional[SphereRule] = None,
                   refine: int = DERIVATIVE_REFINE) -> ForcingSignal:
    """
    h(t) = d/dt(t·MΔφ(t)) + t·MΔψ(t) + ∫₀ᵗ (t − s)(MΔf(s))(t − s) ds

    The derivative is a 4th-order central difference at step Δt/refine.
    """
    if dt > data.rho_min / 8.0:
        raise ParameterError(
            f"Δt={dt:.4g} does not resolve the wavefront arrival; need Δt ≤ ρ_min/8 = {data.rho_min / 8.0:.4g}"
        )
    sphere = _as_sphere(sphere)
    times = time_grid(dt, T)
    h = np.zeros_like(times)

    if not getattr(data.phi, "is_zero", False):
        lap_phi = data.lap_phi
        delta = dt / refine
        stencil = np.array([-2.0, -1.0, 1.0, 2.0]) * delta
        shifted = times[:, None] + stencil[None, :]
        F = shifted * origin_mean(lap_phi, np.abs(shifted), sphere)
        h += (F[:, 0] - 8.0 * F[:, 1] + 8.0 * F[:, 2] - F[:, 3]) / (12.0 * delta)

    if not getattr(data.psi, "is_zero", False):
        h += times * origin_mean(data.lap_psi, times, sphere)

    if data.source is not None:
        h += _source_forcing(data, times, sphere)

    return ForcingSignal(times=times, values=h)


def shell_integral(field_, r_lo: float, r_hi: float, weight: Callable[[np.ndarray], np.ndarray],
                   radial_order: int, sphere: Optional[SphereRule] = None) -> np.ndarray:
    """
    ∫_{r_lo<|y|<r_hi} w(|y|)·u(y)/(4π|y|) dy; w may return (m, n) for n radii

    Reduces to ∫ w(s)·s·Mu(s) ds when the field has closed-form means,
    otherwise runs the full shell quadrature.
    """
    if r_hi <= r_lo:
        sample = np.asarray(weight(np.array([max(r_lo, 0.0)])))
        return np.zeros(sample.shape[:-1])

    if hasattr(field_, "exact_spherical_mean"):
        x, w = np.polynomial.legendre.leggauss(radial_order)
        half = 0.5 * (r_hi - r_lo)
        s = r_lo + half * (x + 1.0)
        profile = half * w * s * origin_mean(field_, s)
        return np.asarray(weight(s)) @ profile

    quad = shell_quadrature(r_lo, r_hi, radial_order, _as_sphere(sphere))
    r = np.linalg.norm(quad.points, axis=1)
    return np.asarray(weight(r)) @ (quad.weights * field_(quad.points) / (4.0 * np.pi * r))


def forcing_signal_ball_form(data: CauchyBundle, dt: float, T: float,
                             sphere: Optional[SphereRule] = None,
                             radial_order: int = 48) -> ForcingSignal:
    """
    h(t) = ∫_{|y|<t} Δ²φ(y)/(4π|y|) dy + t·MΔψ(t) + source term

    Ball-integral form of the same signal; cross-check for forcing_signal.
    """
    sphere = _as_sphere(sphere)
    times = time_grid(dt, T)
    h = np.zeros_like(times)

    if not getattr(data.phi, "is_zero", False):
        bilap = data.bilap_phi
        r_lo, r_hi = data.phi.support_radii()
        for i, t in enumerate(times):
            h[i] = shell_integral(bilap, r_lo, min(t, r_hi), np.ones_like, radial_order, sphere)

    if not getattr(data.psi, "is_zero", False):
        h += times * origin_mean(data.lap_psi, times, sphere)

    if data.source is not None:
        h += _source_forcing(data, times, sphere)

    return ForcingSignal(times=times, values=h)


def sphere_order_table(data_field: BumpField, orders: Sequence[int], radii: np.ndarray,
                       about=(0.0, 0.0, 0.0)) -> pd.DataFrame:
    """Sphere-rule error against closed-form bump means, one row per order"""
    exact = data_field.exact_spherical_mean(about, radii)
    scale = max(float(np.max(np.abs(exact))), np.finfo(float).tiny)
    rows = []
    for order in orders:
        approx = spherical_mean(data_field, about, radii, sphere_rule(order))
        err = float(np.max(np.abs(approx - exact)))
        rows.append({"order": order, "nodes": len(sphere_rule(order).weights),
                     "max_abs_error": err, "max_rel_error": err / scale})
    return pd.DataFrame(rows)
