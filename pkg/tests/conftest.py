"""
Pytest fixtures for pointwave testing
"""

import numpy as np
import pytest

from src.pointwave.config import ExperimentConfig
from src.pointwave.freewave import offset_bundle, shell_bundle
from src.pointwave.geometry import DomainSpec, sphere_rule, voxelize
from src.pointwave.newton import SpectralDecomposition, assemble_newton, eigensolve, select_mode_count

# Radial eigenvalues of N₀ on the unit ball: 4/((2m+1)²π²), m = 0, 1, 2
BALL_RADIAL_EIGENVALUES = np.array([4.0 / ((2 * m + 1) ** 2 * np.pi ** 2) for m in range(3)])

# Leading coupling of the unit ball, 128/π³
BALL_LEADING_COUPLING = 128.0 / np.pi ** 3


@pytest.fixture
def unit_ball():
    """Unit ball about the origin"""
    return DomainSpec(shape="ball", radius=1.0)


@pytest.fixture
def sphere():
    return sphere_rule(47)


@pytest.fixture
def shell_data():
    """Shipped shell data: φ supported on 0.5 ≤ |x| ≤ 2"""
    return shell_bundle()


@pytest.fixture
def small_shell():
    """Thin shell close to the scatterer, fits small FDTD boxes"""
    return shell_bundle(inner=0.3, outer=0.8)


@pytest.fixture
def offset_data():
    return offset_bundle()


@pytest.fixture(scope="session")
def ball_grid_24():
    return voxelize(DomainSpec(shape="ball", radius=1.0), 24)


@pytest.fixture(scope="session")
def ball_spectrum_24(ball_grid_24):
    """48 leading eigenpairs on the unit ball at 24 cells per diameter"""
    return eigensolve(assemble_newton(ball_grid_24), 48, seed=0)


@pytest.fixture(scope="session")
def ball_spectrum_16():
    """Unit-ball spectrum at 16 cells per diameter, truncated by the captured-mass rule"""
    grid = voxelize(DomainSpec(shape="ball", radius=1.0), 16)
    full = eigensolve(assemble_newton(grid), 40, seed=0)
    return full.truncate(select_mode_count(full, 0.01))


@pytest.fixture
def two_mode_spectrum():
    """Synthetic decomposition with closed-form oscillator responses"""
    return SpectralDecomposition(
        eigenvalues=np.array([0.4, 0.01]),
        eigenvectors=np.zeros((1, 2)),
        couplings=np.array([4.0, 0.1]),
        volume=4.0 * np.pi / 3.0,
    )


@pytest.fixture
def quick_config(tmp_path):
    """Small experiment that runs end to end in seconds"""
    return ExperimentConfig().with_values({
        "spectral.resolution": 8,
        "spectral.modes": 16,
        "spectral.delta": 0.05,
        "time.horizon": 1.0,
        "fdtd.margin_cells": 2,
        "compare.samples": 3,
        "sweep.eps": (0.5,),
        "output.directory": str(tmp_path / "results"),
    })
