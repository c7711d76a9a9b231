"""
Unit tests for the reference FDTD solver
"""

import dataclasses
import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from src.pointwave.errors import CFLError, GeometryMismatchError, ParameterError, ResolutionError
from src.pointwave.fdtd import (
    BoxGeometry,
    WaveField,
    build_grid,
    causal_half_width,
    l2_diff,
    laplacian,
    memory_estimate,
    required_spacing,
    run,
    time_steps,
)
from src.pointwave.freewave import CauchyBundle, forcing_signal, kirchhoff_eval, shell_bundle
from src.pointwave.geometry import DomainSpec


class TestBoxGeometry:
    """Tests for the node lattice"""

    def test_shape_and_axis(self):
        geometry = BoxGeometry(h=0.1, n=5)
        assert geometry.shape == (11, 11, 11)
        assert geometry.half_width == pytest.approx(0.5)
        assert geometry.axis()[5] == 0.0
        assert geometry.points().shape == (11 ** 3, 3)

    def test_node_index(self):
        geometry = BoxGeometry(h=0.1, n=5)
        assert geometry.node_index((0.0, 0.0, 0.0)) == (5, 5, 5)
        assert geometry.node_index((0.21, -0.1, 0.0)) == (7, 4, 5)
        with pytest.raises(ParameterError):
            geometry.node_index((0.5, 0.0, 0.0))

    def test_field_shape_checked(self):
        with pytest.raises(GeometryMismatchError):
            WaveField(0.0, BoxGeometry(h=0.1, n=5), np.zeros((10, 11, 11)))


class TestLaplacian:
    """Tests for the 7-point stencil"""

    def test_exact_on_quadratics(self):
        geometry = BoxGeometry(h=0.1, n=6)
        r = geometry.radius()
        lap = laplacian(r ** 2, geometry.h)
        assert np.allclose(lap[1:-1, 1:-1, 1:-1], 6.0)
        assert np.all(lap[0] == 0.0)

    def test_slab_count_does_not_change_result(self):
        u = np.random.default_rng(0).standard_normal((21, 21, 21))
        serial = laplacian(u, 0.1)
        with ThreadPoolExecutor(max_workers=4) as pool:
            threaded = laplacian(u, 0.1, pool=pool, slabs=4)
        assert np.array_equal(serial, threaded)


class TestBuildGrid:
    """Tests for contrast grids and sizing rules"""

    def test_contrast_inside_inclusion(self, unit_ball):
        grid = build_grid(1.0, 0.025, 0.2, unit_ball)
        assert grid.rho[grid.geometry.node_index((0.0, 0.0, 0.0))] == pytest.approx(25.0)
        assert grid.rho[grid.geometry.node_index((0.5, 0.0, 0.0))] == 1.0
        assert grid.contrast_on

    def test_eps_one_switches_contrast_off(self, unit_ball):
        grid = build_grid(1.0, 0.1, 1.0, unit_ball)
        assert np.all(grid.rho == 1.0)
        assert not grid.contrast_on

    def test_coarse_spacing_rejected(self, unit_ball):
        with pytest.raises(ResolutionError) as info:
            build_grid(1.0, 0.1, 0.2, unit_ball)
        assert info.value.required_h == pytest.approx(required_spacing(0.2, unit_ball))

    def test_blend_gives_fractions(self, unit_ball):
        grid = build_grid(1.0, 0.05, 0.4, unit_ball, blend=True)
        inner = grid.rho[(grid.rho > 1.0) & (grid.rho < 0.4 ** -2)]
        assert inner.size > 0

    def test_time_step_from_cfl(self, unit_ball):
        grid = build_grid(1.0, 0.1, 1.0, unit_ball, cfl=0.9)
        assert grid.dt == pytest.approx(0.9 * 0.1 / math.sqrt(3.0))
        steps, dt = time_steps(grid, 1.0)
        assert steps * dt == pytest.approx(1.0)
        assert dt <= grid.dt

    def test_invalid_cfl(self, unit_ball):
        with pytest.raises(ParameterError):
            build_grid(1.0, 0.1, 1.0, unit_ball, cfl=1.2)

    def test_sizing_rules(self):
        assert required_spacing(0.1, DomainSpec()) == pytest.approx(0.025)
        assert causal_half_width(2.0, 3.0, 1.5, 0.1) == pytest.approx(3.35)
        assert causal_half_width(2.0, 0.5, 1.0, 0.0) == pytest.approx(2.0)
        assert memory_estimate(1.0, 0.1) == 5 * 8 * 21 ** 3


class TestRun:
    """Tests for the leapfrog stepper"""

    def test_energy_conserved(self, unit_ball, small_shell):
        """Discrete energy drift below 1e-6 over 1000 steps with the contrast on"""
        grid = build_grid(1.2, 0.05, 0.5, unit_ball)
        result = run(grid, small_shell, 1000 * grid.dt)
        energy = result.energy
        assert len(energy) >= 998
        assert abs(energy[-1] - energy[0]) < 1e-6 * abs(energy[0])

    def test_exact_zero_outside_lattice_reach(self, unit_ball, small_shell):
        """Nodes farther than the data plus one node per step never move"""
        grid = build_grid(1.5, 0.05, 1.0, unit_ball)
        result = run(grid, small_shell, 0.3, probes=[(1.4, 0.0, 0.0)])
        assert result.steps <= 13
        assert np.all(result.traces["u(1.4,0,0)"] == 0.0)

    def test_energy_conserved_with_shortened_step(self, unit_ball, small_shell):
        """T not a multiple of grid.dt: the shortened step T/N enters the energy"""
        grid = build_grid(1.2, 0.05, 0.5, unit_ball)
        T = 199.5 * grid.dt
        steps, dt = time_steps(grid, T)
        assert steps == 200 and dt < grid.dt
        result = run(grid, small_shell, T)
        energy = result.energy
        assert abs(energy[-1] - energy[0]) < 1e-6 * abs(energy[0])

    def test_zero_data_stays_zero(self, unit_ball):
        grid = build_grid(1.2, 0.05, 0.5, unit_ball)
        result = run(grid, CauchyBundle(), 0.5, probes=[(0.0, 0.0, 0.0), (0.6, 0.0, 0.0)],
                     snapshot_times=[0.5])
        assert np.all(result.traces.drop(columns="t").to_numpy() == 0.0)
        assert np.all(result.snapshots[0].values == 0.0)
        assert np.all(result.energy == 0.0)

    def test_quiet_ahead_of_light_cone(self, unit_ball, small_shell):
        """
        Before t = d − 2h the receiver stays below 5e-4 of the unit data peak

        The leapfrog precursor inside the lattice reach measures about 1.1e-4
        here (h = 0.05, receiver at 1.6).
        """
        h = 0.05
        grid = build_grid(2.0, h, 1.0, unit_ball)
        result = run(grid, small_shell, 0.8, probes=[(1.6, 0.0, 0.0)])
        distance = 1.6 - small_shell.rho_max
        early = result.traces["t"] < distance - 2 * h
        assert early.any()
        assert np.max(np.abs(result.traces.loc[early, "u(1.6,0,0)"])) <= 5e-4

    def test_blow_up_detected(self, unit_ball, small_shell):
        grid = build_grid(1.2, 0.05, 1.0, unit_ball)
        unstable = dataclasses.replace(grid, dt=grid.h)
        with pytest.raises(CFLError):
            run(unstable, small_shell, 100 * grid.h)

    def test_snapshots_at_requested_times(self, unit_ball, small_shell):
        grid = build_grid(1.2, 0.05, 1.0, unit_ball)
        steps, dt = time_steps(grid, 0.5)
        result = run(grid, small_shell, 0.5, snapshot_times=[0.0, 10 * dt, 0.5])
        assert [s.time for s in result.snapshots] == pytest.approx([0.0, 10 * dt, steps * dt])
        assert result.snapshot_at(0.5).time == pytest.approx(0.5)
        with pytest.raises(ParameterError):
            result.snapshot_at(0.375)

    def test_data_must_fit_box(self, unit_ball, shell_data):
        grid = build_grid(1.0, 0.1, 1.0, unit_ball)
        with pytest.raises(ParameterError):
            run(grid, shell_data, 0.5)

    def test_sponge_mode_runs(self, unit_ball, small_shell):
        grid = build_grid(1.6, 0.05, 1.0, unit_ball, boundary="sponge", sponge_width=0.5)
        result = run(grid, small_shell, 1.0, probes=[(0.0, 0.0, 0.0)], threads=2)
        assert result.energy is None
        assert np.all(np.isfinite(result.traces["u(0,0,0)"]))

    def test_threads_do_not_change_result(self, unit_ball, small_shell):
        grid = build_grid(1.2, 0.05, 0.5, unit_ball)
        serial = run(grid, small_shell, 0.4, snapshot_times=[0.4])
        threaded = run(grid, small_shell, 0.4, snapshot_times=[0.4], threads=3)
        assert np.array_equal(serial.snapshots[0].values, threaded.snapshots[0].values)


class TestAgainstKirchhoff:
    """Contrast off: FDTD must converge to the free field"""

    RECEIVERS = [(0.0, 0.0, 0.0), (0.32, 0.0, 0.0), (0.0, 0.24, 0.24)]

    def trace_error(self, unit_ball, data, h, T=1.0):
        grid = build_grid(1.7, h, 1.0, unit_ball)
        result = run(grid, data, T, probes=self.RECEIVERS)
        worst, scale = 0.0, 0.0
        for point in self.RECEIVERS:
            label = "u(" + ",".join(f"{c:g}" for c in point) + ")"
            exact = np.array([kirchhoff_eval(data, t, point) for t in result.traces["t"]])
            worst = max(worst, np.max(np.abs(result.traces[label].to_numpy() - exact)))
            scale = max(scale, np.max(np.abs(exact)))
        return worst / scale

    def test_second_order_convergence(self, unit_ball):
        data = shell_bundle(inner=0.5, outer=1.5)
        coarse = self.trace_error(unit_ball, data, 0.04)
        fine = self.trace_error(unit_ball, data, 0.02)
        assert coarse < 5e-2
        assert 1.4 <= math.log2(coarse / fine) <= 2.6

    def test_laplacian_at_origin_matches_forcing(self, unit_ball):
        """Δ_h u at the origin, read off the FDTD run, tracks h(t) = Δu_free(t, 0)"""
        data = shell_bundle(inner=0.5, outer=2.0, order=5)
        h = 0.025
        grid = build_grid(2.1, h, 1.0, unit_ball)
        offsets = [(0.0, 0.0, 0.0)] + [tuple(s * h if i == j else 0.0 for j in range(3))
                                       for i in range(3) for s in (1.0, -1.0)]
        result = run(grid, data, 1.9, probes=offsets)

        def trace(point):
            return result.traces["u(" + ",".join(f"{c:g}" for c in point) + ")"].to_numpy()

        center = trace(offsets[0])
        lap = sum(trace(p) for p in offsets[1:]) - 6.0 * center
        lap /= h * h

        signal = forcing_signal(data, 0.005, 1.9)
        exact = np.interp(result.traces["t"].to_numpy(), signal.times, signal.values)
        assert np.max(np.abs(lap - exact)) <= 5e-2 * np.max(np.abs(exact))

    def test_contrast_limit(self, unit_ball, small_shell):
        """ε → 1 approaches the contrast-free solution"""
        fields = {}
        for eps in (1.0, 0.99, 0.9):
            grid = build_grid(1.2, 0.1, eps, unit_ball)
            fields[eps] = run(grid, small_shell, 1.5, snapshot_times=[1.5]).snapshots[0]
        near = l2_diff(fields[0.99], fields[1.0])
        far = l2_diff(fields[0.9], fields[1.0])
        assert near < far / 4.0


class TestL2Diff:
    """Tests for the comparison norm"""

    def test_against_zero_and_callable(self):
        geometry = BoxGeometry(h=0.1, n=4)
        field_ = WaveField(0.0, geometry, np.ones(geometry.shape))
        full = l2_diff(field_, None)
        assert full == pytest.approx(math.sqrt(9 ** 3 * 0.1 ** 3))
        same = l2_diff(field_, lambda t, points: np.ones(len(points)))
        assert same == 0.0

    def test_region_and_exclusion(self):
        geometry = BoxGeometry(h=0.1, n=4)
        field_ = WaveField(0.0, geometry, np.ones(geometry.shape))
        r = geometry.radius()
        inside = np.sum((r <= 0.3) & (r >= 0.15))
        assert l2_diff(field_, None, 0.3, 0.15) == pytest.approx(math.sqrt(inside * 0.1 ** 3))

    def test_nan_nodes_skipped(self):
        geometry = BoxGeometry(h=0.1, n=2)
        other = np.zeros(geometry.shape)
        other[2, 2, 2] = np.nan
        field_ = WaveField(0.0, geometry, np.zeros(geometry.shape))
        assert l2_diff(field_, WaveField(0.0, geometry, other)) == 0.0

    def test_mismatched_boxes(self):
        a = WaveField(0.0, BoxGeometry(h=0.1, n=2), np.zeros((5, 5, 5)))
        b = WaveField(0.0, BoxGeometry(h=0.2, n=2), np.zeros((5, 5, 5)))
        with pytest.raises(GeometryMismatchError):
            l2_diff(a, b)
