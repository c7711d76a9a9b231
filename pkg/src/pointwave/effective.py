"""
Modulation signal q(t) and the effective field u_eff

Each retained Newton mode is a driven oscillator λ_k q̈_k = −q_k + c_k h(t)
started from rest. q is computed either from the Cauchy data directly
(closed form) or by convolving the sampled forcing signal h with the
oscillator kernel (Duhamel route); the two must agree.
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd
from scipy.integrate import trapezoid

from src.pointwave.errors import CoverageError, ParameterError, StabilityError
from src.pointwave.fdtd import BoxGeometry, WaveField
from src.pointwave.freewave import (
    CauchyBundle,
    ForcingSignal,
    duhamel_eval,
    forcing_signal,
    kirchhoff_eval,
    retarded_convolution,
    shell_integral,
    time_grid,
)
from src.pointwave.geometry import SphereRule
from src.pointwave.newton import SpectralDecomposition

ROUTES = ("closed-form", "duhamel-ode")

# Gauss–Legendre nodes in |y| for the closed-form shell integrals
DEFAULT_RADIAL_ORDER = 64

# Retarded times may overshoot the sampled horizon by this much (round-off)
COVERAGE_SLACK = 1e-9


@dataclass(frozen=True, eq=False)
class ModulationSignal:
    """
    q(t) = Σ_k q_k(t) on a uniform grid

    modes has shape (K, n_t); total is their sum, so the per-mode samples
    add up to it exactly.
    """
    times: np.ndarray
    modes: np.ndarray
    eigenvalues: np.ndarray
    couplings: np.ndarray
    route: str

    def __post_init__(self):
        if self.route not in ROUTES:
            raise ParameterError(f"Unknown modulation route '{self.route}' (expected one of {', '.join(ROUTES)})")
        if self.modes.shape != (len(self.eigenvalues), len(self.times)):
            raise ParameterError(
                f"Mode samples of shape {self.modes.shape} do not match "
                f"K={len(self.eigenvalues)} modes on {len(self.times)} times"
            )

    @property
    def K(self) -> int:
        return len(self.eigenvalues)

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def total(self) -> np.ndarray:
        return self.modes.sum(axis=0)

    def truncate(self, K: int) -> "ModulationSignal":
        return ModulationSignal(self.times, self.modes[:K], self.eigenvalues[:K],
                                self.couplings[:K], self.route)

    def at(self, tau) -> np.ndarray:
        """
        q at retarded times τ by linear interpolation; q(τ) = 0 for τ ≤ 0

        Raises CoverageError for τ beyond the sampled horizon.
        """
        tau = np.asarray(tau, dtype=float)
        finite = tau[np.isfinite(tau)]
        if finite.size and finite.max() > self.horizon + COVERAGE_SLACK:
            raise CoverageError(
                f"Retarded time {finite.max():.6g} exceeds the modulation horizon {self.horizon:.6g}; "
                f"recompute q with T ≥ {finite.max():.6g}"
            )
        values = np.interp(np.clip(tau, 0.0, self.horizon), self.times, self.total)
        return np.where(tau > 0.0, values, 0.0)

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame({"t": self.times, "q_total": self.total})
        for k in range(self.K):
            frame[f"q_{k + 1}"] = self.modes[k]
        return frame


# ============================================================================
# CLOSED FORM
# ============================================================================

def _radial_kernels(dec: SpectralDecomposition):
    root = np.sqrt(dec.eigenvalues)

    def one_minus_cos(t):
        return lambda r: 1.0 - np.cos((t - r)[None, :] / root[:, None])

    def scaled_sin(t):
        return lambda r: np.sin((t - r)[None, :] / root[:, None]) / root[:, None]

    return one_minus_cos, scaled_sin


def modulation_closed_form(dec: SpectralDecomposition, data: CauchyBundle, times: np.ndarray,
                           radial_order: int = DEFAULT_RADIAL_ORDER,
                           sphere: Optional[SphereRule] = None) -> ModulationSignal:
    """
    q_k(t) = c_k ∫_{|y|<t} [(1 − cos((t−|y|)/√λ_k))·Δ²φ(y)
                            + λ_k^{−½} sin((t−|y|)/√λ_k)·Δψ(y)] / (4π|y|) dy
             + q̂_k(t)

    The ball integral runs over the data support shell only. For a
    separable source g(s)F(y), q̂_k(t) = c_k ∫₀ᵗ g(s) A_k(t − s) ds with
    A_k(τ) = ∫_{|y|<τ} λ_k^{−½} sin((τ−|y|)/√λ_k)·ΔF(y)/(4π|y|) dy.
    """
    if dec.K == 0:
        raise ParameterError("Spectral decomposition holds no modes")
    times = np.asarray(times, dtype=float)
    one_minus_cos, scaled_sin = _radial_kernels(dec)
    integrals = np.zeros((dec.K, len(times)))

    if not getattr(data.phi, "is_zero", False):
        bilap = data.bilap_phi
        r_lo, r_hi = data.phi.support_radii()
        for i, t in enumerate(times):
            integrals[:, i] += shell_integral(bilap, r_lo, min(t, r_hi), one_minus_cos(t),
                                              radial_order, sphere)

    if not getattr(data.psi, "is_zero", False):
        lap_psi = data.lap_psi
        r_lo, r_hi = data.psi.support_radii()
        for i, t in enumerate(times):
            integrals[:, i] += shell_integral(lap_psi, r_lo, min(t, r_hi), scaled_sin(t),
                                              radial_order, sphere)

    if data.source is not None:
        lap = data.lap_source
        r_lo, r_hi = lap.support_radii()
        kernel = np.zeros((dec.K, len(times)))
        for i, tau in enumerate(times):
            kernel[:, i] = shell_integral(lap.spatial, r_lo, min(tau, r_hi), scaled_sin(tau),
                                          radial_order, sphere)
        pulse = lap.pulse(times)
        dt = float(times[1] - times[0])
        for k in range(dec.K):
            integrals[k] += retarded_convolution(pulse, kernel[k], dt)

    modes = dec.couplings[:, None] * integrals
    return ModulationSignal(times, modes, dec.eigenvalues.copy(), dec.couplings.copy(), "closed-form")


# ============================================================================
# DUHAMEL ROUTE
# ============================================================================

def required_dt(dec: SpectralDecomposition) -> float:
    """Largest step resolving the fastest retained period 2π√λ_K"""
    return float(np.sqrt(dec.eigenvalues.min()) / 8.0)


def modulation_duhamel(dec: SpectralDecomposition, h: ForcingSignal) -> ModulationSignal:
    """
    q_k(t) = (c_k/√λ_k) ∫₀ᵗ sin((t − s)/√λ_k)·h(s) ds

    h is taken piecewise linear on each step and the oscillator is advanced
    with its exact propagator: e = q − c_k h obeys λ_k ë = −e on a step, so
    the update is a rotation and stays bounded for every λ_k.
    """
    if dec.K == 0:
        raise ParameterError("Spectral decomposition holds no modes")
    dt = h.dt
    limit = required_dt(dec)
    if dt > limit:
        raise StabilityError(
            f"Δt={dt:.4g} is too coarse for K={dec.K} modes (λ_K={dec.eigenvalues.min():.4g}); "
            f"need Δt ≤ {limit:.4g}",
            required_dt=limit,
        )

    c = dec.couplings
    omega = 1.0 / np.sqrt(dec.eigenvalues)
    cos_step = np.cos(omega * dt)
    sin_step = np.sin(omega * dt)

    n_t = len(h.times)
    modes = np.zeros((dec.K, n_t))
    q = np.zeros(dec.K)
    q_dot = np.zeros(dec.K)
    for n in range(n_t - 1):
        slope = (h.values[n + 1] - h.values[n]) / dt
        e = q - c * h.values[n]
        e_dot = q_dot - c * slope
        e_next = e * cos_step + e_dot * sin_step / omega
        e_dot_next = -e * omega * sin_step + e_dot * cos_step
        q = c * h.values[n + 1] + e_next
        q_dot = c * slope + e_dot_next
        modes[:, n + 1] = q

    return ModulationSignal(h.times.copy(), modes, dec.eigenvalues.copy(), c.copy(), "duhamel-ode")


def oscillator_residual(q: ModulationSignal, h: ForcingSignal) -> np.ndarray:
    """sup_t |λ_k q̈_k + q_k − c_k h| per mode, with q̈ by central differences"""
    dt = q.dt
    accel = (q.modes[:, 2:] - 2.0 * q.modes[:, 1:-1] + q.modes[:, :-2]) / dt ** 2
    residual = (q.eigenvalues[:, None] * accel + q.modes[:, 1:-1]
                - q.couplings[:, None] * h.values[None, 1:-1])
    return np.abs(residual).max(axis=1)


def route_discrepancy(a: ModulationSignal, b: ModulationSignal) -> float:
    """Relative sup-norm distance between two totals on the same grid"""
    if len(a.times) != len(b.times) or not np.allclose(a.times, b.times):
        raise ParameterError("Modulation signals are sampled on different time grids")
    scale = float(np.max(np.abs(b.total)))
    diff = float(np.max(np.abs(a.total - b.total)))
    if scale == 0.0:
        return diff
    return diff / scale


def truncation_bound(dec: SpectralDecomposition, K: int, data: CauchyBundle, times: np.ndarray,
                     radial_order: int = DEFAULT_RADIAL_ORDER,
                     sphere: Optional[SphereRule] = None) -> np.ndarray:
    """
    Bound on |q_{≤K}(t) − q_{≤K'}(t)| with K' = dec.K, from |1 − cos| ≤ 2 and |sin| ≤ 1:
    Σ_{K<k≤K'} c_k (2 I_Δ²φ(t) + λ_k^{−½} (I_Δψ(t) + ‖g‖₁ I_ΔF(t))),
    I_u(t) = ∫_{|y|<t} |u(y)|/(4π|y|) dy.
    """
    times = np.asarray(times, dtype=float)
    tail = slice(K, dec.K)
    c = dec.couplings[tail]
    inv_root = 1.0 / np.sqrt(dec.eigenvalues[tail])
    ones = np.ones_like

    def absolute(f):
        return lambda points: np.abs(f(points))

    def mass(field_, r_lo, r_hi):
        return np.array([float(shell_integral(absolute(field_), r_lo, min(t, r_hi), ones,
                                              radial_order, sphere)) for t in times])

    bound = np.zeros(len(times))
    if not getattr(data.phi, "is_zero", False):
        bound += 2.0 * c.sum() * mass(data.bilap_phi, *data.phi.support_radii())
    if not getattr(data.psi, "is_zero", False):
        bound += float(np.dot(c, inv_root)) * mass(data.lap_psi, *data.psi.support_radii())
    if data.source is not None:
        lap = data.lap_source
        fine = np.linspace(0.0, max(float(times[-1]), lap.pulse.duration + lap.pulse.onset), 2049)
        pulse_l1 = float(trapezoid(np.abs(lap.pulse(fine)), fine))
        bound += float(np.dot(c, inv_root)) * pulse_l1 * mass(lap.spatial, *lap.support_radii())
    return bound


# ============================================================================
# EFFECTIVE FIELD
# ============================================================================

def contrast_coefficient(eps: float) -> float:
    """ε(ε² − 1), the prefactor of the point-scatterer correction"""
    if not 0.0 < eps < 1.0:
        raise ParameterError(f"Contrast scale eps must lie in (0, 1), got {eps}")
    return eps * (eps * eps - 1.0)


def correction(q: ModulationSignal, eps: float, t: float, points) -> np.ndarray:
    """
    ε(ε² − 1)·H(t − |x|)·q(t − |x|)/(4π|x|)

    Exactly zero outside the light cone of the scatterer; NaN at x = 0.
    """
    coef = contrast_coefficient(eps)
    points = np.atleast_2d(np.asarray(points, dtype=float))
    r = np.linalg.norm(points, axis=1)
    tau = t - r
    inside = tau > 0.0
    value = np.zeros(len(r))
    if inside.any():
        with np.errstate(divide="ignore", invalid="ignore"):
            value[inside] = coef * q.at(tau[inside]) / (4.0 * math.pi * r[inside])
    value[r == 0.0] = np.nan
    return value


def effective_field(data: CauchyBundle, q: ModulationSignal, eps: float, t: float, points,
                    r_excl: float = 0.0, sphere: Optional[SphereRule] = None,
                    ds: Optional[float] = None) -> np.ndarray:
    """
    u_eff = u_free + û_free + ε(ε² − 1)·H(t − |x|)·q(t − |x|)/(4π|x|)

    Points with |x| < r_excl are masked with NaN.
    """
    return EffectiveField(eps, q, data, r_excl=r_excl, sphere=sphere, ds=ds)(t, points)


@dataclass(frozen=True, eq=False)
class EffectiveField:
    """u_eff(t, x) for one ε, built from a modulation signal and its Cauchy data"""
    eps: float
    modulation: ModulationSignal
    data: CauchyBundle
    r_excl: float = 0.0
    sphere: Optional[SphereRule] = None
    ds: Optional[float] = None

    def __post_init__(self):
        contrast_coefficient(self.eps)
        if self.r_excl < 0:
            raise ParameterError(f"Exclusion radius must be ≥ 0, got {self.r_excl}")

    @property
    def coefficient(self) -> float:
        return contrast_coefficient(self.eps)

    def free(self, t: float, points) -> np.ndarray:
        """u_free + û_free"""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if self.data.is_radial and len(points) > 1:
            # radial data: one evaluation per distinct |x|, on the pole axis
            r = np.linalg.norm(points, axis=1)
            radii, inverse = np.unique(r, return_inverse=True)
            axis_points = np.column_stack([np.zeros_like(radii), np.zeros_like(radii), radii])
            return self._free_at(t, axis_points)[inverse]
        return self._free_at(t, points)

    def _free_at(self, t: float, points: np.ndarray) -> np.ndarray:
        u = np.asarray(kirchhoff_eval(self.data, t, points, self.sphere), dtype=float)
        if self.data.source is not None:
            ds = self.ds if self.ds is not None else self.modulation.dt
            u = u + duhamel_eval(self.data, t, points, ds, self.sphere)
        return u

    def correction(self, t: float, points) -> np.ndarray:
        return correction(self.modulation, self.eps, t, points)

    def _mask(self, points: np.ndarray, values: np.ndarray) -> np.ndarray:
        r = np.linalg.norm(points, axis=1)
        return np.where(r < self.r_excl, np.nan, values)

    def __call__(self, t: float, points) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        return self._mask(points, self.free(t, points) + self.correction(t, points))

    def sample(self, geometry: BoxGeometry, t: float) -> WaveField:
        """Evaluate on every node of a box geometry"""
        points = geometry.points()
        values = self(t, points).reshape(geometry.shape)
        return WaveField(time=t, geometry=geometry, values=values)


def modulation_signal(dec: SpectralDecomposition, data: CauchyBundle, dt: float, T: float,
                      route: str = "duhamel-ode", sphere: Optional[SphereRule] = None,
                      radial_order: int = DEFAULT_RADIAL_ORDER) -> ModulationSignal:
    """q on the grid t_i = iΔt ≤ T by the requested route"""
    if route == "closed-form":
        return modulation_closed_form(dec, data, time_grid(dt, T), radial_order, sphere)
    if route == "duhamel-ode":
        return modulation_duhamel(dec, forcing_signal(data, dt, T, sphere))
    raise ParameterError(f"Unknown modulation route '{route}' (expected one of {', '.join(ROUTES)})")
