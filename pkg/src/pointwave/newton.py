"""
Newton potential operator N₀ on L²(Ω) and its leading spectrum

N₀u(x) = (1/4π) ∫_Ω u(y) dy / |x − y|, collocated at voxel centers.
"""

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
import pandas as pd
from scipy import fft, linalg
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigsh
from scipy.spatial.distance import cdist

from src.pointwave.errors import ParameterError, SolverError
from src.pointwave.geometry import DomainGrid

MATVEC_METHODS = ("auto", "direct", "fft", "dense")

# Above this cell count 'auto' switches from the O(n²) sweep to the FFT path
AUTO_FFT_THRESHOLD = 2000

# Dense eigendecomposition limit (memory: n² doubles)
DENSE_MAX_CELLS = 8000


def self_integral(weights: np.ndarray) -> np.ndarray:
    """∫_{B_R} dy / (4π|y|) = R²/2 for the ball of equal volume R = (3w/4π)^(1/3)"""
    r_eq = np.cbrt(3.0 * np.asarray(weights) / (4.0 * np.pi))
    return 0.5 * r_eq ** 2


class NewtonOperator:
    """
    Collocated Newton potential on a voxel grid

    v_i = Σ_{j≠i} w_j u_j / (4π|x_i − x_j|) + (R_eq,i² / 2) u_i

    Symmetric in the weighted inner product ⟨u, v⟩ = Σ w_i u_i v_i.

    Usage:
        op = NewtonOperator(grid)          # FFT path picked for large grids
        v = op.matvec(u)
        dec = eigensolve(op, K=16)
    """

    symmetric = True

    def __init__(self, grid: DomainGrid, method: str = "auto", chunk: int = 1024, workers: int = 1):
        if method not in MATVEC_METHODS:
            raise ParameterError(f"Unknown matvec method '{method}' (expected one of {', '.join(MATVEC_METHODS)})")
        if grid.n_cells == 0:
            raise ParameterError("Newton operator needs a non-empty grid")

        self.grid = grid
        self.chunk = chunk
        self.workers = workers
        self.self_term = self_integral(grid.weights)

        uniform = bool(np.ptp(grid.weights) == 0.0)
        if method == "auto":
            method = "fft" if uniform and grid.n_cells > AUTO_FFT_THRESHOLD else "direct"
        if method == "fft" and not uniform:
            raise ParameterError("FFT matvec requires uniform cell weights")
        if method == "dense" and grid.n_cells > DENSE_MAX_CELLS:
            raise ParameterError(
                f"Dense path limited to {DENSE_MAX_CELLS} cells, grid has {grid.n_cells}"
            )
        self.method = method

        self._dense: Optional[np.ndarray] = None
        self._kernel_hat: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return self.grid.n_cells

    def matvec(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        if self.method == "fft":
            return self._matvec_fft(u)
        if self.method == "dense":
            return self.to_dense() @ u
        return self._matvec_direct(u)

    def _matvec_direct(self, u: np.ndarray) -> np.ndarray:
        # Row blocks in fixed order; each output entry is one dot product
        x = self.grid.centers
        wu = self.grid.weights * u
        v = np.empty(self.n)
        for start in range(0, self.n, self.chunk):
            stop = min(start + self.chunk, self.n)
            block = self._kernel_block(x[start:stop], x, start)
            v[start:stop] = block @ wu
        return v + self.self_term * u

    def _kernel_block(self, rows: np.ndarray, cols: np.ndarray, offset: int) -> np.ndarray:
        d = cdist(rows, cols)
        local = np.arange(len(rows))
        d[local, local + offset] = np.inf
        return 1.0 / (4.0 * np.pi * d)

    def _matvec_fft(self, u: np.ndarray) -> np.ndarray:
        shape = self.grid.lattice_shape
        padded = tuple(2 * s for s in shape)
        if self._kernel_hat is None:
            self._kernel_hat = fft.rfftn(self._lattice_kernel(padded), workers=self.workers)

        lattice = np.zeros(padded)
        idx = self.grid.index
        lattice[idx[:, 0], idx[:, 1], idx[:, 2]] = u
        conv = fft.irfftn(fft.rfftn(lattice, workers=self.workers) * self._kernel_hat,
                          s=padded, workers=self.workers)
        return self.grid.weights[0] * conv[idx[:, 0], idx[:, 1], idx[:, 2]]

    def _lattice_kernel(self, padded) -> np.ndarray:
        """Circulant embedding of 1/(4π h|m|); the m = 0 entry carries the self term"""
        offsets = [np.where(np.arange(p) < p // 2, np.arange(p), np.arange(p) - p) for p in padded]
        mx, my, mz = np.meshgrid(*offsets, indexing="ij")
        dist = self.grid.h * np.sqrt(mx ** 2 + my ** 2 + mz ** 2)
        dist[0, 0, 0] = np.inf
        kernel = 1.0 / (4.0 * np.pi * dist)
        kernel[0, 0, 0] = self.self_term[0] / self.grid.weights[0]
        return kernel

    def to_dense(self) -> np.ndarray:
        """Matrix A with v = A u (not symmetric unless weights are uniform)"""
        if self._dense is None:
            if self.n > DENSE_MAX_CELLS:
                raise ParameterError(
                    f"Dense path limited to {DENSE_MAX_CELLS} cells, grid has {self.n}"
                )
            x = self.grid.centers
            dense = self._kernel_block(x, x, 0) * self.grid.weights[None, :]
            dense[np.diag_indices(self.n)] = self.self_term
            self._dense = dense
        return self._dense


@dataclass(frozen=True, eq=False)
class SpectralDecomposition:
    """
    Top-K eigenpairs of N₀

    eigenvectors[:, k] holds e_k at the cell centers, orthonormal in the
    weighted inner product; couplings[k] = ⟨e_k, 1⟩² in volume units.
    """
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    couplings: np.ndarray
    volume: float

    @property
    def K(self) -> int:
        return len(self.eigenvalues)

    @property
    def captured_mass(self) -> float:
        return float(self.couplings.sum())

    def truncate(self, K: int) -> "SpectralDecomposition":
        if not 1 <= K <= self.K:
            raise ParameterError(f"Truncation level must lie in [1, {self.K}], got {K}")
        return SpectralDecomposition(
            eigenvalues=self.eigenvalues[:K],
            eigenvectors=self.eigenvectors[:, :K],
            couplings=self.couplings[:K],
            volume=self.volume,
        )

    def to_frame(self) -> pd.DataFrame:
        """Spectrum table: k, lambda, coupling, captured_mass_cumulative"""
        return pd.DataFrame({
            "k": np.arange(1, self.K + 1),
            "lambda": self.eigenvalues,
            "coupling": self.couplings,
            "captured_mass_cumulative": np.cumsum(self.couplings),
        })


def assemble_newton(grid: DomainGrid, method: str = "auto", workers: int = 1) -> NewtonOperator:
    return NewtonOperator(grid, method=method, workers=workers)


def eigensolve(op: NewtonOperator, K: int, seed: int = 0, tol: float = 1e-10,
               max_iter: Optional[int] = None) -> SpectralDecomposition:
    """
    Leading K eigenpairs in descending order

    Lanczos (ARPACK) on the symmetrized operator W^½ N₀ W^-½ with a seeded
    start vector; the dense path is used for the dense method or when K is
    too close to the cell count for ARPACK.
    """
    n = op.n
    if not 1 <= K <= n:
        raise ParameterError(f"Mode count K must lie in [1, {n}], got {K}")

    sw = np.sqrt(op.grid.weights)

    if op.method == "dense" or K >= n - 1:
        if n > DENSE_MAX_CELLS:
            raise ParameterError(f"K={K} needs the dense path, limited to {DENSE_MAX_CELLS} cells")
        sym = sw[:, None] * op.to_dense() / sw[None, :]
        sym = 0.5 * (sym + sym.T)
        values, vectors = linalg.eigh(sym, subset_by_index=[n - K, n - 1])
    else:
        def symmetrized(b):
            return sw * op.matvec(np.ravel(b) / sw)

        lin = LinearOperator((n, n), matvec=symmetrized, dtype=float)
        v0 = np.random.default_rng(seed).standard_normal(n)
        try:
            values, vectors = eigsh(lin, k=K, which="LA", v0=v0, tol=tol, maxiter=max_iter)
        except ArpackNoConvergence as exc:
            residuals = [
                float(np.linalg.norm(symmetrized(vec) - val * vec))
                for val, vec in zip(exc.eigenvalues, exc.eigenvectors.T)
            ]
            raise SolverError(
                f"Lanczos did not converge for K={K}: {len(exc.eigenvalues)} of {K} pairs converged",
                residuals=residuals,
            ) from exc

    order = np.argsort(values)[::-1]
    values = values[order]
    vectors = vectors[:, order] / sw[:, None]

    # Orthonormal in the weighted inner product, sign fixed by ⟨e, 1⟩ ≥ 0
    vectors /= np.sqrt(np.sum(op.grid.weights[:, None] * vectors ** 2, axis=0))
    projections = op.grid.weights @ vectors
    for k in range(len(values)):
        ref = projections[k]
        if abs(ref) < 1e-10 * np.sqrt(op.grid.volume):
            ref = vectors[np.argmax(np.abs(vectors[:, k])), k]
        if ref < 0:
            vectors[:, k] *= -1.0

    dec = SpectralDecomposition(
        eigenvalues=values,
        eigenvectors=vectors,
        couplings=np.zeros(len(values)),
        volume=op.grid.volume,
    )
    return SpectralDecomposition(
        eigenvalues=values,
        eigenvectors=vectors,
        couplings=couplings(dec, op.grid),
        volume=op.grid.volume,
    )


def couplings(dec: SpectralDecomposition, grid: DomainGrid) -> np.ndarray:
    """c_k = ⟨e_k, 1⟩² = (Σ_j w_j e_k(x_j))²"""
    return (grid.weights @ dec.eigenvectors) ** 2


def select_mode_count(dec: SpectralDecomposition, delta: float = 0.01) -> int:
    """Smallest K with Σ_{k≤K} c_k ≥ (1 − δ)|Ω|; all modes if the target is not reached"""
    if not 0.0 < delta < 1.0:
        raise ParameterError(f"Mass deficit delta must lie in (0, 1), got {delta}")
    cumulative = np.cumsum(dec.couplings)
    reached = np.nonzero(cumulative >= (1.0 - delta) * dec.volume)[0]
    if len(reached) == 0:
        warnings.warn(
            f"Captured mass {cumulative[-1] / dec.volume:.4%} of |Ω| with all {dec.K} modes "
            f"is below the target {1.0 - delta:.2%}; compute more modes",
            stacklevel=2,
        )
        return dec.K
    return int(reached[0]) + 1


def resolvent_norm(dec: SpectralDecomposition, z: complex) -> float:
    """sup over {0} ∪ {λ_k} of 1/|1 + z²λ|; λ = 0 stands for the accumulation point"""
    z = complex(z)
    if z.real <= 0:
        raise ParameterError(f"Resolvent norm needs Re z > 0, got z = {z}")
    if dec.K == 0:
        raise ParameterError("Resolvent norm needs a non-empty decomposition")
    spectrum = np.concatenate([[0.0], dec.eigenvalues])
    return float(np.max(1.0 / np.abs(1.0 + z * z * spectrum)))


def lemma_bound(z: complex) -> float:
    """Bound on ‖(1 + z²N₀)⁻¹‖ for Re z > 0: 1 if |Im z| ≤ Re z, else |z|²/(2 Re z |Im z|)"""
    z = complex(z)
    c, gamma = z.real, abs(z.imag)
    if c <= 0:
        raise ParameterError(f"Bound needs Re z > 0, got z = {z}")
    if gamma <= c:
        return 1.0
    return abs(z) ** 2 / (2.0 * c * gamma)


def radial_fraction(dec: SpectralDecomposition, grid: DomainGrid) -> np.ndarray:
    """
    ‖P e_k‖ / ‖e_k‖ where P averages over cells at equal distance from the lattice center

    Close to 1 for radially symmetric modes of a ball, small for angular ones.
    """
    half = np.asarray(grid.lattice_shape) // 2
    odd = 2 * (grid.index - half) + 1
    keys = np.sum(odd * odd, axis=1)
    _, shell = np.unique(keys, return_inverse=True)

    w = grid.weights
    shell_weight = np.bincount(shell, weights=w)
    fractions = np.empty(dec.K)
    for k in range(dec.K):
        e = dec.eigenvectors[:, k]
        averaged = (np.bincount(shell, weights=w * e) / shell_weight)[shell]
        fractions[k] = np.sqrt(grid.inner(averaged, averaged) / grid.inner(e, e))
    return fractions


def radial_modes(dec: SpectralDecomposition, grid: DomainGrid, threshold: float = 0.9) -> np.ndarray:
    """Indices of modes whose radial fraction exceeds threshold"""
    return np.nonzero(radial_fraction(dec, grid) > threshold)[0]
