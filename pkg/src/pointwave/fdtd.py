"""
Reference FDTD solver for the contrast wave equation

    ρ(x) ∂ₜₜu = Δu + f,   ρ = ε⁻² on Ω_ε, 1 elsewhere

Second-order leapfrog in time, 7-point Laplacian on a node lattice
x_i = (i − n)h, i = 0..2n, with the scatterer at the central node.
Boundary nodes are held at zero; in causal mode the box is sized so that
their reflections never reach the comparison region before T.
"""

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from src.pointwave.errors import (
    CFLError,
    GeometryMismatchError,
    ParameterError,
    ResolutionError,
)
from src.pointwave.geometry import DomainSpec, scale_membership

BOUNDARIES = ("causal", "sponge")

# Stability limit of the 3-D leapfrog scheme is CFL ≤ 1; keep a margin
MAX_CFL = 0.95

# Sponge damping peak σ_max = SPONGE_STRENGTH / width (≈ 1e-3 round-trip reflection)
SPONGE_STRENGTH = 10.0

# Blow-up check cadence and the growth factor treated as instability
STABILITY_CHECK_EVERY = 25
GROWTH_LIMIT = 1e6

# Float64 arrays alive during a run: u_prev, u, u_next, Δu, ρ
ARRAYS_PER_NODE = 5


@dataclass(frozen=True, eq=False)
class BoxGeometry:
    """Symmetric node lattice (i − n)h on each axis, origin at node n"""
    h: float
    n: int

    @property
    def shape(self) -> Tuple[int, int, int]:
        m = 2 * self.n + 1
        return (m, m, m)

    @property
    def half_width(self) -> float:
        return self.n * self.h

    @property
    def cell_volume(self) -> float:
        return self.h ** 3

    def axis(self) -> np.ndarray:
        return (np.arange(2 * self.n + 1) - self.n) * self.h

    def points(self) -> np.ndarray:
        """All node coordinates, (N, 3) in C order"""
        ax = self.axis()
        mesh = np.meshgrid(ax, ax, ax, indexing="ij")
        return np.stack(mesh, axis=-1).reshape(-1, 3)

    def radius(self) -> np.ndarray:
        ax = self.axis()
        return np.sqrt(ax[:, None, None] ** 2 + ax[None, :, None] ** 2 + ax[None, None, :] ** 2)

    def node_index(self, point) -> Tuple[int, int, int]:
        """Nearest node to a point inside the box"""
        idx = np.rint(np.asarray(point, dtype=float) / self.h).astype(int) + self.n
        if np.any(idx < 1) or np.any(idx > 2 * self.n - 1):
            raise ParameterError(f"Point {tuple(point)} lies outside the interior of the box (half width {self.half_width:.4g})")
        return tuple(int(i) for i in idx)

    def window(self, lo, hi) -> Tuple[slice, slice, slice]:
        """Index window covering the axis-aligned box [lo, hi]"""
        lo_idx = np.clip(np.floor(np.asarray(lo) / self.h).astype(int) + self.n, 0, 2 * self.n)
        hi_idx = np.clip(np.ceil(np.asarray(hi) / self.h).astype(int) + self.n, 0, 2 * self.n)
        return tuple(slice(int(a), int(b) + 1) for a, b in zip(lo_idx, hi_idx))

    def window_points(self, window) -> np.ndarray:
        ax = self.axis()
        mesh = np.meshgrid(ax[window[0]], ax[window[1]], ax[window[2]], indexing="ij")
        return np.stack(mesh, axis=-1)

    def matches(self, other: "BoxGeometry") -> bool:
        return self.n == other.n and math.isclose(self.h, other.h, rel_tol=1e-12)


@dataclass(frozen=True, eq=False)
class WaveField:
    """Samples u(t, x_i) on every node of a box"""
    time: float
    geometry: BoxGeometry
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != self.geometry.shape:
            raise GeometryMismatchError(
                f"Field of shape {self.values.shape} does not match box shape {self.geometry.shape}"
            )


# ============================================================================
# GRID
# ============================================================================

@dataclass(frozen=True, eq=False)
class ContrastGrid:
    """Box, mass coefficient ρ, time step and boundary treatment"""
    geometry: BoxGeometry
    eps: float
    rho: np.ndarray
    dt: float
    cfl: float
    boundary: str = "causal"
    sigma: Optional[np.ndarray] = None

    @property
    def h(self) -> float:
        return self.geometry.h

    @property
    def contrast_on(self) -> bool:
        return self.eps < 1.0


def required_spacing(eps: float, spec: DomainSpec, n_min: int = 8) -> float:
    """Largest h_g putting n_min cells across diam(Ω_ε)"""
    return eps * spec.diameter / n_min


def causal_half_width(rho_max: float, T: float, region_radius: float, margin: float) -> float:
    """
    Half width L such that no boundary reflection reaches |x| ≤ R_c before T

    A wave leaving |y| ≤ ρ_max needs L − ρ_max to hit the wall and
    L − R_c to come back, so L > (T + ρ_max + R_c)/2; the box must also
    hold the data.
    """
    return max(rho_max, 0.5 * (T + rho_max + region_radius)) + margin


def memory_estimate(half_width: float, h: float) -> int:
    """Bytes held by a run on a box of this size"""
    n = int(math.ceil(half_width / h))
    return ARRAYS_PER_NODE * 8 * (2 * n + 1) ** 3


def _blend_fraction(member: Callable, centers: np.ndarray, h: float) -> np.ndarray:
    """Volume fraction of Ω_ε in each node's cell, 3³ subsamples"""
    offsets = (np.arange(3) - 1) * (h / 3.0)
    fraction = np.zeros(centers.shape[:-1])
    for dx in offsets:
        for dy in offsets:
            for dz in offsets:
                fraction += member(centers + np.array([dx, dy, dz]))
    return fraction / 27.0


def _sponge_profile(geometry: BoxGeometry, width: float) -> np.ndarray:
    """Cosine ramp from 0 at depth `width` to SPONGE_STRENGTH/width at the wall"""
    ax = geometry.axis()
    depth = geometry.half_width - np.maximum.reduce(np.meshgrid(np.abs(ax), np.abs(ax), np.abs(ax), indexing="ij"))
    s = np.clip((width - depth) / width, 0.0, 1.0)
    return (SPONGE_STRENGTH / width) * 0.5 * (1.0 - np.cos(np.pi * s))


def build_grid(half_width: float, h: float, eps: float, spec: DomainSpec, n_min: int = 8,
               cfl: float = 0.9, boundary: str = "causal", blend: bool = False,
               sponge_width: float = 0.0) -> ContrastGrid:
    """
    Node box of half width ≥ half_width with ρ = ε⁻² on Ω_ε

    eps = 1 switches the contrast off (ρ ≡ 1). Membership is evaluated only
    in a window around Ω_ε; blend=True replaces it by the cell volume fraction.
    """
    if boundary not in BOUNDARIES:
        raise ParameterError(f"Unknown boundary mode '{boundary}' (expected one of {', '.join(BOUNDARIES)})")
    if not 0.0 < cfl <= MAX_CFL:
        raise ParameterError(f"CFL number must lie in (0, {MAX_CFL}], got {cfl}")
    if h <= 0 or half_width <= 0:
        raise ParameterError(f"Spacing and half width must be positive, got h={h}, half_width={half_width}")
    if not 0.0 < eps <= 1.0:
        raise ParameterError(f"Contrast scale eps must lie in (0, 1], got {eps}")

    if eps < 1.0:
        h_req = required_spacing(eps, spec, n_min)
        if h > h_req * (1.0 + 1e-12):
            raise ResolutionError(
                f"h_g={h:.4g} puts fewer than {n_min} cells across Ω_ε at eps={eps}; need h_g ≤ {h_req:.4g}",
                required_h=h_req,
            )

    geometry = BoxGeometry(h=float(h), n=int(math.ceil(half_width / h - 1e-12)))
    rho = np.ones(geometry.shape)

    if eps < 1.0:
        member = scale_membership(spec, eps)
        center = np.asarray(spec.center, dtype=float)
        reach = eps * spec.half_extent + h
        window = geometry.window(center - reach, center + reach)
        nodes = geometry.window_points(window)
        if blend:
            fraction = _blend_fraction(member, nodes, h)
        else:
            fraction = member(nodes).astype(float)
        rho[window] = 1.0 + fraction * (eps ** -2 - 1.0)

    sigma = None
    if boundary == "sponge":
        if not 0.0 < sponge_width < geometry.half_width:
            raise ParameterError(
                f"Sponge width must lie in (0, {geometry.half_width:.4g}), got {sponge_width}"
            )
        sigma = _sponge_profile(geometry, sponge_width)

    return ContrastGrid(
        geometry=geometry,
        eps=float(eps),
        rho=rho,
        dt=cfl * h / math.sqrt(3.0),
        cfl=float(cfl),
        boundary=boundary,
        sigma=sigma,
    )


# ============================================================================
# STEPPER
# ============================================================================

def _laplacian_slab(u: np.ndarray, out: np.ndarray, inv_h2: float, lo: int, hi: int) -> None:
    c = u[lo:hi, 1:-1, 1:-1]
    out[lo:hi, 1:-1, 1:-1] = (
        u[lo - 1:hi - 1, 1:-1, 1:-1] + u[lo + 1:hi + 1, 1:-1, 1:-1]
        + u[lo:hi, :-2, 1:-1] + u[lo:hi, 2:, 1:-1]
        + u[lo:hi, 1:-1, :-2] + u[lo:hi, 1:-1, 2:]
        - 6.0 * c
    ) * inv_h2


def laplacian(u: np.ndarray, h: float, out: Optional[np.ndarray] = None,
              pool: Optional[ThreadPoolExecutor] = None, slabs: int = 1) -> np.ndarray:
    """
    7-point Laplacian on interior nodes, zero on the boundary

    Work is split into slabs along the first axis; every node is computed by
    the same expression, so the result does not depend on the slab count.
    """
    if out is None:
        out = np.zeros_like(u)
    inv_h2 = 1.0 / (h * h)
    bounds = np.linspace(1, u.shape[0] - 1, max(1, slabs) + 1).astype(int)
    spans = [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    if pool is None or len(spans) == 1:
        for lo, hi in spans:
            _laplacian_slab(u, out, inv_h2, lo, hi)
    else:
        list(pool.map(lambda span: _laplacian_slab(u, out, inv_h2, *span), spans))
    return out


def discrete_energy(grid: ContrastGrid, u_next: np.ndarray, u: np.ndarray, lap_u: np.ndarray,
                    dt: Optional[float] = None) -> float:
    """
    E^{n+½} = ½Σρ((u^{n+1} − uⁿ)/Δt)² h³ − ½Σ u^{n+1}·Δ_h uⁿ h³

    The second sum equals ½Σ∇_h u^{n+1}·∇_h uⁿ h³; this form is conserved
    exactly by the leapfrog update without sources. Δt must be the step the
    update actually used (run() steps with T/N, not grid.dt).
    """
    if dt is None:
        dt = grid.dt
    velocity = (u_next - u) / dt
    kinetic = 0.5 * np.sum(grid.rho * velocity * velocity)
    potential = -0.5 * np.sum(u_next * lap_u)
    return float((kinetic + potential) * grid.geometry.cell_volume)


@dataclass
class Probe:
    """Point probe recording the nearest node every step"""
    point: Tuple[float, float, float]
    index: Tuple[int, int, int]
    samples: List[float] = field(default_factory=list)

    def record(self, u: np.ndarray) -> None:
        self.samples.append(float(u[self.index]))

    @property
    def label(self) -> str:
        return "u(" + ",".join(f"{c:g}" for c in self.point) + ")"


@dataclass(frozen=True, eq=False)
class FDTDResult:
    """Probe traces, snapshots and (causal mode) the energy history"""
    grid: ContrastGrid
    dt: float
    steps: int
    traces: pd.DataFrame
    snapshots: List[WaveField]
    energy: Optional[np.ndarray] = None

    def snapshot_at(self, t: float) -> WaveField:
        for snap in self.snapshots:
            if math.isclose(snap.time, t, rel_tol=0.0, abs_tol=0.5 * self.dt):
                return snap
        raise ParameterError(f"No snapshot recorded at t={t:.6g}")


def time_steps(grid: ContrastGrid, T: float) -> Tuple[int, float]:
    """Step count N and step Δt = T/N ≤ grid.dt landing exactly on T"""
    if T <= 0:
        raise ParameterError(f"Horizon must be positive, got {T}")
    steps = int(math.ceil(T / grid.dt - 1e-12))
    return steps, T / steps


def run(grid: ContrastGrid, data, T: float, probes: Sequence = (),
        snapshot_times: Sequence[float] = (), threads: int = 1,
        record_energy: Optional[bool] = None) -> FDTDResult:
    """
    Leapfrog ρ(u^{n+1} − 2uⁿ + u^{n−1})/Δt² = Δ_h uⁿ + fⁿ up to T

    u¹ = φ + Δtψ + (Δt²/2ρ)(Δ_hφ + f⁰). In sponge mode the update is damped by
    σ(x)∂ₜu (centered). Snapshots are taken at the step nearest each requested
    time and stamped with that step's time. Raises CFLError on blow-up.
    """
    geometry = grid.geometry
    steps, dt = time_steps(grid, T)
    if data.rho_max >= geometry.half_width - geometry.h:
        raise ParameterError(
            f"Data support (ρ_max={data.rho_max:.4g}) does not fit inside the box "
            f"(half width {geometry.half_width:.4g}); enlarge the box"
        )
    if threads < 1:
        raise ParameterError(f"Thread count must be ≥ 1, got {threads}")
    if record_energy is None:
        record_energy = grid.boundary == "causal"

    support = geometry.window(np.full(3, -data.rho_max), np.full(3, data.rho_max))
    support_points = geometry.window_points(support)

    def on_nodes(field_) -> np.ndarray:
        values = np.zeros(geometry.shape)
        if not getattr(field_, "is_zero", False):
            values[support] = np.asarray(field_(support_points), dtype=float)
        return values

    phi = on_nodes(data.phi)
    psi = on_nodes(data.psi)
    spatial = None
    if data.source is not None:
        spatial = on_nodes(data.source.spatial)

    def forcing(t: float) -> float:
        return float(data.source.pulse(t)) if spatial is not None else 0.0

    for arr in (phi, psi) + ((spatial,) if spatial is not None else ()):
        arr[0, :, :] = arr[-1, :, :] = 0.0
        arr[:, 0, :] = arr[:, -1, :] = 0.0
        arr[:, :, 0] = arr[:, :, -1] = 0.0

    probe_list = [Probe(tuple(map(float, p)), geometry.node_index(p)) for p in probes]
    snap_steps = {}
    for t in snapshot_times:
        if not 0.0 <= t <= T + 1e-12:
            raise ParameterError(f"Snapshot time {t} outside [0, {T}]")
        snap_steps.setdefault(int(round(t / dt)), t)

    inv_rho = 1.0 / grid.rho
    scale = (np.abs(phi).max() + T * np.abs(psi).max()
             + (T * T * np.abs(spatial).max() * data.source.pulse.amplitude if spatial is not None else 0.0))
    ceiling = GROWTH_LIMIT * max(scale, np.finfo(float).tiny)

    if grid.sigma is not None:
        damp_plus = 1.0 + 0.5 * grid.sigma * dt
        damp_minus = 1.0 - 0.5 * grid.sigma * dt
    else:
        damp_plus = damp_minus = None

    snapshots: List[WaveField] = []
    energy: List[float] = []
    times = [0.0]

    def observe(n: int, u: np.ndarray) -> None:
        for probe in probe_list:
            probe.record(u)
        if n in snap_steps:
            snapshots.append(WaveField(time=n * dt, geometry=geometry, values=u.copy()))

    lap = np.zeros(geometry.shape)
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    try:
        u_prev = phi
        observe(0, u_prev)

        laplacian(u_prev, geometry.h, lap, pool, threads)
        src0 = forcing(0.0) * spatial if spatial is not None else 0.0
        u = phi + dt * psi + 0.5 * dt * dt * inv_rho * (lap + src0)
        times.append(dt)
        observe(1, u)
        u_next = np.empty_like(u)

        for n in range(1, steps):
            laplacian(u, geometry.h, lap, pool, threads)
            rhs = lap if spatial is None else lap + forcing(n * dt) * spatial
            if damp_plus is None:
                np.multiply(dt * dt * inv_rho, rhs, out=u_next)
                u_next += 2.0 * u
                u_next -= u_prev
            else:
                u_next[...] = (2.0 * u - damp_minus * u_prev + dt * dt * inv_rho * rhs) / damp_plus

            if record_energy:
                energy.append(discrete_energy(grid, u_next, u, lap, dt))

            if (n + 1) % STABILITY_CHECK_EVERY == 0 or n + 1 == steps:
                peak = float(np.max(np.abs(u_next)))
                if not np.isfinite(peak) or peak > ceiling:
                    raise CFLError(
                        f"FDTD solution blew up at step {n + 1} (t={(n + 1) * dt:.4g}, sup|u|={peak:.3g}); "
                        f"Δt={dt:.4g} violates the stability limit h/√3={geometry.h / math.sqrt(3.0):.4g}"
                    )

            u_prev, u, u_next = u, u_next, u_prev
            times.append((n + 1) * dt)
            observe(n + 1, u)
    finally:
        if pool is not None:
            pool.shutdown()

    traces = pd.DataFrame({"t": np.asarray(times)})
    for probe in probe_list:
        traces[probe.label] = probe.samples

    history = np.asarray(energy) if record_energy else None
    if history is not None and len(history) > 1:
        drift = abs(history[-1] - history[0]) / max(abs(history[0]), np.finfo(float).tiny)
        if spatial is None and drift > 1e-6:
            warnings.warn(f"Discrete energy drifted by {drift:.3g} (relative)", UserWarning, stacklevel=2)

    return FDTDResult(grid=grid, dt=dt, steps=steps, traces=traces, snapshots=snapshots, energy=history)


# ============================================================================
# NORMS
# ============================================================================

def l2_diff(a: WaveField, b: Union[WaveField, Callable, None],
            region_radius: Optional[float] = None, r_excl: float = 0.0) -> float:
    """
    (Σ |a − b|² h³)^½ over |x| ≤ region_radius, |x| ≥ r_excl

    b may be another WaveField, a callable (t, points) -> values, or None
    (zero). Nodes where b is undefined (NaN, e.g. the singular node) are
    left out.
    """
    geometry = a.geometry
    if isinstance(b, WaveField):
        if not geometry.matches(b.geometry):
            raise GeometryMismatchError("Wave fields live on different boxes")
        other = b.values
    elif b is None:
        other = np.zeros(geometry.shape)
    else:
        other = None

    r = geometry.radius()
    mask = r >= r_excl
    if region_radius is not None:
        mask &= r <= region_radius
    if other is None:
        idx = np.nonzero(mask)
        points = (np.stack(idx, axis=-1) - geometry.n) * geometry.h
        other = np.full(geometry.shape, np.nan)
        other[idx] = np.asarray(b(a.time, points), dtype=float)
    diff = a.values - other
    mask &= np.isfinite(diff)
    return float(np.sqrt(np.sum(diff[mask] ** 2) * geometry.cell_volume))
