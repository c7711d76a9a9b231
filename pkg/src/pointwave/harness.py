"""
pointwave experiment pipeline
Spectrum → Forcing → Modulation → FDTD → Compare → Sweep
"""

import math
import os
import time
import warnings
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from src.pointwave import __version__, export
from src.pointwave.config import ExperimentConfig
from src.pointwave.effective import (
    EffectiveField,
    ModulationSignal,
    modulation_closed_form,
    modulation_duhamel,
    route_discrepancy,
)
from src.pointwave.errors import PlanningError, QualityError
from src.pointwave.fdtd import (
    BoxGeometry,
    FDTDResult,
    WaveField,
    build_grid,
    causal_half_width,
    l2_diff,
    memory_estimate,
    required_spacing,
    run,
    time_steps,
)
from src.pointwave.freewave import ForcingSignal, forcing_signal
from src.pointwave.geometry import sphere_rule, voxelize
from src.pointwave.newton import (
    SpectralDecomposition,
    assemble_newton,
    eigensolve,
    select_mode_count,
)
from src.pointwave.report import ERROR_COLUMNS, ErrorReport

BANNER = "=" * 70


@dataclass(frozen=True)
class FdtdPlan:
    """Box and step sizes of one FDTD run, fixed before any compute"""
    eps: float
    horizon: float
    h: float
    half_width: float
    n: int
    steps: int
    bytes: int

    @property
    def gigabytes(self) -> float:
        return self.bytes / 1024 ** 3


class PointScattererPipeline:
    """
    Validation pipeline for the point-scatterer approximation

    Stages:
        - Spectrum: Newton eigenpairs of Ω, couplings, captured-mass truncation
        - Forcing: h(t) = Δu_free(t, 0) from the Cauchy data
        - Modulation: q(t) by the configured route, cross-checked by the other
        - FDTD / Compare: full contrast solution against u_free and u_eff
        - Sweep: every ε of the config, error table and slope fits

    Usage:
        pipeline = PointScattererPipeline(load_config("configs/ball.yaml"))
        report = pipeline.run_sweep()

        # OR stage by stage
        dec = pipeline.run_spectrum()
        q = pipeline.run_modulation()
        row = pipeline.run_compare(0.2)
    """

    def __init__(self, cfg: Optional[ExperimentConfig] = None, config_override: Optional[Dict] = None,
                 strict_mode: bool = False, verbose: bool = True):
        """
        Initialize pipeline

        Args:
            cfg: resolved experiment (defaults when omitted)
            config_override: {'section.key': value} applied on top of cfg
            strict_mode: If True, raise QualityError on quality warnings
            verbose: If False, stage output is suppressed
        """
        cfg = cfg if cfg is not None else ExperimentConfig()
        if config_override:
            cfg = cfg.with_values(config_override)
        self.cfg = cfg.validate()
        self.strict_mode = strict_mode
        self.verbose = verbose

        self.spec = self.cfg.domain_spec()
        self.data = self.cfg.bundle()
        self.sphere = sphere_rule(self.cfg.time.sphere_order)
        self.out_dir = self.cfg.output.directory

        self.grid = None
        self.full_decomposition: Optional[SpectralDecomposition] = None
        self.decomposition: Optional[SpectralDecomposition] = None
        self.forcing: Optional[ForcingSignal] = None
        self.modulation: Optional[ModulationSignal] = None
        self.route_error: Optional[float] = None
        self.last_run: Optional[Dict] = None  # run metadata of the latest run_compare
        self.last_result: Optional[FDTDResult] = None
        self.artifacts: Dict[str, str] = {}
        self.timings: Dict[str, float] = {}

    # ========================================================================
    # OUTPUT HELPERS
    # ========================================================================

    def _log(self, message: str = "") -> None:
        if self.verbose:
            print(message)

    def _open(self, title: str) -> None:
        self._log("\n" + BANNER)
        self._log(title)
        self._log(BANNER)

    def _close(self, summary: str) -> None:
        self._log(f"\n✅ {summary}")
        self._log(BANNER + "\n")

    def _warn(self, tag: str, message: str) -> None:
        """Quality warning; raises QualityError in strict mode"""
        self._log(f"[{tag}]   ⚠️  WARNING: {message}")
        if self.strict_mode:
            raise QualityError(message)

    @property
    def config_echo(self) -> Dict:
        return self.cfg.to_dict()

    @property
    def horizon(self) -> float:
        """Longest T over the sweep; q and h are sampled up to it"""
        return max(self.cfg.horizon_for(eps) for eps in self.cfg.sweep.eps)

    # ========================================================================
    # SPECTRUM
    # ========================================================================

    def run_spectrum(self) -> SpectralDecomposition:
        """
        Newton eigenpairs of the voxelized Ω, truncated by captured mass

        Returns:
            SpectralDecomposition: the retained K modes
        """
        if self.decomposition is not None:
            return self.decomposition
        self._open("SPECTRUM: Newton potential eigenpairs")
        start = time.perf_counter()
        s = self.cfg.spectral

        grid = voxelize(self.spec, s.resolution)
        self._log(f"[Spectrum] Voxelized {self.spec.shape}: {grid.n_cells:,} cells, h={grid.h:.4g}")
        self._log(f"[Spectrum]   Voxel volume {grid.volume:.6f} vs exact {self.spec.exact_volume:.6f}")

        op = assemble_newton(grid, s.method, workers=self.cfg.fdtd.threads)
        K = min(s.modes, grid.n_cells)
        self._log(f"[Spectrum] Solving for {K} eigenpairs ({op.method} matvec)...")
        full = eigensolve(op, K, seed=s.seed, tol=s.tol)

        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            keep = select_mode_count(full, s.delta)
        for w in caught:
            self._warn("Spectrum", str(w.message))

        dec = full.truncate(keep)
        self.grid = grid
        self.full_decomposition = full
        self.decomposition = dec
        self.timings["spectrum"] = time.perf_counter() - start

        self._log(f"[Spectrum]   λ_1 = {dec.eigenvalues[0]:.6f}, λ_K = {dec.eigenvalues[-1]:.6f}")
        self._log(f"[Spectrum]   Captured mass: {dec.captured_mass:.6f} of |Ω|={dec.volume:.6f} "
                  f"({dec.captured_mass / dec.volume:.2%}) with K={dec.K} modes")
        self._close(f"Spectrum complete: K={dec.K} of {full.K} computed modes")
        return dec

    # ========================================================================
    # FORCING / MODULATION
    # ========================================================================

    def run_forcing(self) -> ForcingSignal:
        if self.forcing is not None:
            return self.forcing
        self._open("FORCING: h(t) = Δu_free(t, 0)")
        start = time.perf_counter()
        t = self.cfg.time
        self._log(f"[Forcing] Sampling h on Δt={t.dt}, T={self.horizon:.4g} "
                  f"(data clearance ρ_min={self.data.rho_min:.4g}, ρ_max={self.data.rho_max:.4g})")
        h = forcing_signal(self.data, t.dt, self.horizon, self.sphere)
        self.forcing = h
        self.timings["forcing"] = time.perf_counter() - start

        nonzero = np.flatnonzero(h.values)
        arrival = h.times[nonzero[0]] if nonzero.size else math.nan
        self._log(f"[Forcing]   sup|h| = {np.max(np.abs(h.values)):.6g}, first nonzero sample at t={arrival:.4g}")
        self._close(f"Forcing complete: {len(h.times):,} samples")
        return h

    def run_modulation(self, check_routes: bool = True) -> ModulationSignal:
        """
        q(t) by the configured route; optionally cross-checked by the other route

        Returns:
            ModulationSignal: signal of the configured route
        """
        if self.modulation is not None:
            return self.modulation
        dec = self.run_spectrum()
        h = self.run_forcing()
        self._open("MODULATION: driven Newton modes")
        start = time.perf_counter()
        t = self.cfg.time

        duhamel = closed = None
        if t.route == "duhamel-ode" or check_routes:
            self._log("[Modulation] Duhamel route (exact-kernel oscillator update)...")
            duhamel = modulation_duhamel(dec, h)
        if t.route == "closed-form" or check_routes:
            self._log(f"[Modulation] Closed-form route (radial order {t.radial_order})...")
            closed = modulation_closed_form(dec, self.data, h.times, t.radial_order, self.sphere)

        q = duhamel if t.route == "duhamel-ode" else closed
        if check_routes:
            self.route_error = route_discrepancy(closed, duhamel)
            self._log(f"[Modulation]   Route discrepancy: {self.route_error:.3e} "
                      f"(tolerance {t.route_tolerance:.1e})")
            if self.route_error > t.route_tolerance:
                self._warn("Modulation", f"closed-form and Duhamel q differ by {self.route_error:.3e} "
                                         f"> {t.route_tolerance:.1e}")

        self.modulation = q
        self.timings["modulation"] = time.perf_counter() - start
        self._log(f"[Modulation]   sup|q| = {np.max(np.abs(q.total)):.6g}")
        self._close(f"Modulation complete: route={q.route}, K={q.K}")
        return q

    def run_effective(self, eps: float) -> EffectiveField:
        """u_eff for one ε (no exclusion mask; norms apply their own)"""
        return EffectiveField(eps, self.run_modulation(), self.data, r_excl=0.0, sphere=self.sphere)

    # ========================================================================
    # FDTD
    # ========================================================================

    def _half_width(self, T: float, h: float) -> float:
        f = self.cfg.fdtd
        margin = f.margin_cells * h
        if f.boundary == "sponge":
            return max(self.data.rho_max, self.cfg.compare.region_radius) + f.sponge_width + margin
        return causal_half_width(self.data.rho_max, T, self.cfg.compare.region_radius, margin)

    def plan_fdtd(self, eps: float) -> FdtdPlan:
        """Spacing, box and memory of the run for one ε (h_g by the n_min rule unless set)"""
        f = self.cfg.fdtd
        T = self.cfg.horizon_for(eps)
        h = f.h if f.h > 0.0 else required_spacing(eps, self.spec, f.n_min)
        half = self._half_width(T, h)
        n = int(math.ceil(half / h - 1e-12))
        dt_max = f.cfl * h / math.sqrt(3.0)
        steps = int(math.ceil(T / dt_max - 1e-12))
        return FdtdPlan(eps=eps, horizon=T, h=h, half_width=half, n=n, steps=steps,
                        bytes=memory_estimate(half, h))

    def _feasible_eps(self) -> tuple:
        """Smallest ε whose run fits the memory budget (bisection in log ε)"""
        budget = self.cfg.fdtd.memory_budget_gb * 1024 ** 3
        if self.plan_fdtd(0.999).bytes > budget:
            return (math.nan, math.nan)
        lo, hi = math.log(1e-4), math.log(0.999)
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if self.plan_fdtd(math.exp(mid)).bytes > budget:
                lo = mid
            else:
                hi = mid
        return (math.exp(hi), 1.0)

    def check_budget(self, eps_values: Sequence[float]) -> List[FdtdPlan]:
        """Plan every run; raise PlanningError if any exceeds the memory budget"""
        budget = self.cfg.fdtd.memory_budget_gb
        plans = [self.plan_fdtd(eps) for eps in eps_values]
        over = [p for p in plans if p.gigabytes > budget]
        if over:
            feasible = self._feasible_eps()
            worst = max(over, key=lambda p: p.bytes)
            raise PlanningError(
                f"FDTD run at eps={worst.eps} needs {worst.gigabytes:.2f} GB (budget {budget:.2f} GB); "
                f"feasible eps range is [{feasible[0]:.4g}, {feasible[1]:.4g})",
                feasible_eps=feasible,
            )
        return plans

    def sample_times(self, T: float, grid) -> List[float]:
        """Comparison times: samples evenly spaced step counts up to T"""
        steps, dt = time_steps(grid, T)
        count = self.cfg.compare.samples
        picks = sorted({max(1, int(round(j * steps / count))) for j in range(1, count + 1)})
        return [n * dt for n in picks]

    def run_fdtd(self, eps: float, plan: Optional[FdtdPlan] = None,
                 snapshot_times: Optional[Sequence[float]] = None) -> FDTDResult:
        plan = plan if plan is not None else self.check_budget([eps])[0]
        f = self.cfg.fdtd
        self._log(f"[FDTD] eps={eps}: h_g={plan.h:.4g}, box ±{plan.half_width:.4g} "
                  f"({2 * plan.n + 1}³ nodes, {plan.gigabytes:.2f} GB), T={plan.horizon:.4g}")
        grid = build_grid(plan.half_width, plan.h, eps, self.spec, f.n_min, f.cfl,
                          f.boundary, f.blend, f.sponge_width)
        if snapshot_times is None:
            snapshot_times = self.sample_times(plan.horizon, grid)

        R = self.cfg.compare.region_radius
        probes = [(grid.geometry.h * round(0.5 * R / grid.geometry.h), 0.0, 0.0),
                  (0.0, 0.0, grid.geometry.h * round(R / grid.geometry.h))]

        start = time.perf_counter()
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            result = run(grid, self.data, plan.horizon, probes=probes, snapshot_times=snapshot_times,
                         threads=f.threads)
        for w in caught:
            self._warn("FDTD", str(w.message))
        self.timings[f"fdtd[{eps}]"] = time.perf_counter() - start
        self._log(f"[FDTD]   {result.steps:,} steps of Δt={result.dt:.4g} "
                  f"in {self.timings[f'fdtd[{eps}]']:.1f}s, {len(result.snapshots)} snapshots")
        if result.energy is not None and len(result.energy) > 1 and self.data.source is None:
            drift = abs(result.energy[-1] - result.energy[0]) / max(abs(result.energy[0]), np.finfo(float).tiny)
            self._log(f"[FDTD]   Discrete energy drift: {drift:.2e}")
        return result

    # ========================================================================
    # COMPARE / SWEEP
    # ========================================================================

    def _reference_fields(self, snap: WaveField, effective: EffectiveField):
        """u_free + û_free and u_eff on the comparison region of a snapshot"""
        geometry = snap.geometry
        region = geometry.radius() <= self.cfg.compare.region_radius
        idx = np.nonzero(region)
        points = (np.stack(idx, axis=-1) - geometry.n) * geometry.h

        free = effective.free(snap.time, points)
        corr = effective.correction(snap.time, points)

        free_vals = np.full(geometry.shape, np.nan)
        eff_vals = np.full(geometry.shape, np.nan)
        free_vals[idx] = free
        eff_vals[idx] = free + corr
        return (WaveField(snap.time, geometry, free_vals), WaveField(snap.time, geometry, eff_vals))

    def run_compare(self, eps: float, plan: Optional[FdtdPlan] = None) -> Dict[str, float]:
        """
        One ErrorReport row: sup over sample times of ‖u_ε − u_free‖ and ‖u_ε − u_eff‖

        Returns:
            Dict: eps, E_free, E_eff, E_free_excl, E_eff_excl
        """
        self._log(f"[Compare] eps={eps}")
        effective = self.run_effective(eps)
        result = self.run_fdtd(eps, plan)
        r_excl = self.cfg.exclusion_radius(result.grid.h)
        R = self.cfg.compare.region_radius

        norms = {column: 0.0 for column in ERROR_COLUMNS}
        for snap in result.snapshots:
            free, eff = self._reference_fields(snap, effective)
            norms["E_free"] = max(norms["E_free"], l2_diff(snap, free, R, 0.0))
            norms["E_eff"] = max(norms["E_eff"], l2_diff(snap, eff, R, 0.0))
            norms["E_free_excl"] = max(norms["E_free_excl"], l2_diff(snap, free, R, r_excl))
            norms["E_eff_excl"] = max(norms["E_eff_excl"], l2_diff(snap, eff, R, r_excl))

        T = result.steps * result.dt
        self.last_run = {
            "eps": eps,
            "horizon": T,
            "implied_tau": ExperimentConfig.implied_tau(eps, T),
            "h_g": result.grid.h,
            "half_width": result.grid.geometry.half_width,
            "steps": result.steps,
            "dt": result.dt,
            "r_excl": r_excl,
            "K": self.modulation.K,
            "sample_times": [s.time for s in result.snapshots],
        }
        self.last_result = result
        self._log(f"[Compare]   E_free={norms['E_free_excl']:.4e}  E_eff={norms['E_eff_excl']:.4e} "
                  f"(excl r<{r_excl:.3g}); implied τ={self.last_run['implied_tau']:.3f}")
        return {"eps": eps, **norms}

    def run_sweep(self, eps_values: Optional[Sequence[float]] = None) -> ErrorReport:
        """
        Compare at every ε; all runs are planned before any compute

        Returns:
            ErrorReport: rows sorted by ε descending
        """
        eps_values = list(eps_values if eps_values is not None else self.cfg.sweep.eps)
        self._open(f"SWEEP: {len(eps_values)} values of ε")
        plans = self.check_budget(eps_values)
        for plan in plans:
            self._log(f"[Sweep] eps={plan.eps}: h_g={plan.h:.4g}, {2 * plan.n + 1}³ nodes, "
                      f"{plan.steps:,} steps, {plan.gigabytes:.2f} GB")

        self.run_modulation()
        rows, runs = [], []
        for plan in plans:
            rows.append(self.run_compare(plan.eps, plan))
            runs.append(self.last_run)

        report = ErrorReport.from_rows(rows, runs=runs, config=self.config_echo, version=__version__)
        self._review_report(report)
        self._close(f"Sweep complete: {len(report)} rows")
        return report

    def _review_report(self, report: ErrorReport) -> None:
        failures = report.ordering_failures()
        if failures:
            self._warn("Sweep", f"E_eff ≥ E_free at eps = {', '.join(f'{e:g}' for e in failures)}")
        for column, fit in report.slopes.items():
            if fit is None:
                continue
            self._log(f"[Sweep]   slope {column}: {fit.slope:.3f} "
                      f"[{fit.ci_low:.3f}, {fit.ci_high:.3f}], drop-finest Δ={fit.drop_finest_delta:+.3f}")

    # ========================================================================
    # EXPORT
    # ========================================================================

    def _path(self, name: str) -> str:
        return os.path.join(self.out_dir, name)

    def _record(self, written: Dict[str, str]) -> None:
        for path in written.values():
            self.artifacts[os.path.basename(path)] = path
            self._log(f"[Export]   {path}")

    def export_table(self, frame: pd.DataFrame, name: str) -> Dict[str, str]:
        written = export.write_table(frame, self._path(f"{name}.csv"), self.config_echo,
                                     self.cfg.output.formats)
        self._record(written)
        return written

    def export_spectrum(self) -> Dict[str, str]:
        return self.export_table(self.run_spectrum().to_frame(), "spectrum")

    def export_forcing(self) -> Dict[str, str]:
        return self.export_table(self.run_forcing().to_frame(), "forcing")

    def export_modulation(self) -> Dict[str, str]:
        return self.export_table(self.run_modulation().to_frame(), "modulation")

    def export_effective(self, eps: float) -> Dict[str, str]:
        """u_eff snapshot at T on a comparison box of the ε's FDTD spacing"""
        plan = self.plan_fdtd(eps)
        R = self.cfg.compare.region_radius
        geometry = BoxGeometry(h=plan.h, n=int(math.ceil(R / plan.h)))
        effective = EffectiveField(eps, self.run_modulation(), self.data,
                                   r_excl=self.cfg.exclusion_radius(plan.h), sphere=self.sphere)
        snap = effective.sample(geometry, plan.horizon)
        written = export.write_snapshot(snap, self._path(f"effective_eps{eps:g}.bin"), self.config_echo)
        self._record(written)
        return written

    def export_fdtd(self, result: FDTDResult, eps: float) -> Dict[str, str]:
        written = dict(export.write_table(result.traces, self._path(f"fdtd_eps{eps:g}_probes.csv"),
                                          self.config_echo, self.cfg.output.formats))
        if result.snapshots:
            written.update(export.write_snapshot(result.snapshots[-1],
                                                 self._path(f"fdtd_eps{eps:g}_final.bin"),
                                                 self.config_echo))
        self._record(written)
        return written

    def export_report(self, report: ErrorReport, name: str = "report") -> Dict[str, str]:
        runtime = {"timings_seconds": dict(self.timings), "route_discrepancy": self.route_error}
        written = export.write_report(report, self.out_dir, self.cfg.output.formats,
                                      self.cfg.output.figure, runtime, name)
        self._record(written)
        return written

    # ========================================================================
    # SUMMARY
    # ========================================================================

    def pipeline_summary(self) -> Dict:
        """
        Stage results and produced artifacts, with quality warnings
        """
        summary = {
            "modes": self.decomposition.K if self.decomposition is not None else 0,
            "captured_mass": self.decomposition.captured_mass if self.decomposition is not None else math.nan,
            "route_discrepancy": self.route_error,
            "artifacts": dict(self.artifacts),
            "timings": dict(self.timings),
        }

        self._log("\n" + BANNER)
        self._log("PIPELINE SUMMARY")
        self._log(BANNER)
        self._log(f"Retained modes: {summary['modes']}")
        if self.decomposition is not None:
            share = self.decomposition.captured_mass / self.decomposition.volume
            self._log(f"Captured mass: {share:.2%} of |Ω|")
            if share < 1.0 - self.cfg.spectral.delta:
                self._log(f"⚠️  WARNING: captured mass below the {1 - self.cfg.spectral.delta:.1%} target")
        if self.route_error is not None:
            self._log(f"Route discrepancy: {self.route_error:.3e}")
        if summary["artifacts"]:
            self._log("\nArtifacts:")
            for name, path in summary["artifacts"].items():
                self._log(f"  - {name}: {path}")
        self._log(BANNER + "\n")
        return summary

    def run_all(self) -> ErrorReport:
        """Sweep every ε of the config, export the report, print the summary"""
        self._open("FULL PIPELINE EXECUTION")
        report = self.run_sweep()
        self.export_spectrum()
        self.export_modulation()
        self.export_report(report)
        self.pipeline_summary()
        return report
