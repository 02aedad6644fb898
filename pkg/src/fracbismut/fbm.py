"""Wiener paths and fractional Brownian motion through the Volterra kernel.

The Wiener path is the primitive: B^H is built from the same increments, so
stochastic integrals against dW downstream see exactly the noise that drove
the SDE.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .fracops import FractionalKernelSet
from .grid import Path, SeedSpec, TimeGrid


def covariance_RH(t, s, H: float):
    """fBm covariance (t^{2H} + s^{2H} - |t-s|^{2H}) / 2."""
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    out = 0.5 * (t ** (2 * H) + s ** (2 * H) - np.abs(t - s) ** (2 * H))
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class NoisePair:
    W: Path
    BH: Path
    H: float
    seed: int
    path_index: int


def wiener_increments(grid: TimeGrid, d: int, seed: SeedSpec, path_indices) -> np.ndarray:
    """Increments dW of shape (N, n, d), one independent stream per path index."""
    if int(d) != d or d < 1:
        raise ConfigError(f"dimension d must be >= 1, got {d}")
    return seed.normals(path_indices, (grid.n, int(d))) * np.sqrt(grid.dt)


def increments_to_path(dW: np.ndarray) -> np.ndarray:
    """Cumulative sums with a leading zero along the time axis (-2)."""
    dW = np.asarray(dW, dtype=float)
    out = np.zeros(dW.shape[:-2] + (dW.shape[-2] + 1, dW.shape[-1]))
    np.cumsum(dW, axis=-2, out=out[..., 1:, :])
    return out


def sample_wiener(grid: TimeGrid, d: int, seed: SeedSpec, path_index: int) -> Path:
    dW = wiener_increments(grid, d, seed, [path_index])[0]
    return Path(grid, increments_to_path(dW))


def fbm_from_increments(dW: np.ndarray, kernels: FractionalKernelSet) -> np.ndarray:
    """B^H_{t_j} = sum_{i<j} w[j, i] dW_i for increments of shape (..., n, d)."""
    dW = np.asarray(dW, dtype=float)
    if dW.shape[-2] != kernels.grid.n:
        raise ConfigError(f"expected {kernels.grid.n} increments, got {dW.shape[-2]}")
    return np.einsum("ji,...id->...jd", kernels.fbm_weights, dW)


def wiener_to_fbm(W: Path, kernels: FractionalKernelSet) -> Path:
    W.grid.check_same(kernels.grid)
    dW = np.diff(W.values, axis=0)
    return Path(W.grid, fbm_from_increments(dW, kernels))


def sample_noise_pair(kernels: FractionalKernelSet, d: int, seed: SeedSpec,
                      path_index: int) -> NoisePair:
    W = sample_wiener(kernels.grid, d, seed, path_index)
    return NoisePair(W, wiener_to_fbm(W, kernels), kernels.H, seed.master_seed, path_index)


def sample_fbm_batch(kernels: FractionalKernelSet, d: int, seed: SeedSpec, path_indices):
    """(W, BH) arrays of shape (N, n+1, d) for the given path indices."""
    dW = wiener_increments(kernels.grid, d, seed, path_indices)
    return increments_to_path(dW), fbm_from_increments(dW, kernels)


def covariance_check(BH: np.ndarray, grid: TimeGrid, H: float, times, coord: int = 0):
    """Empirical covariance of B^H at node times vs R_H, with standard errors.

    Returns a list of dicts with keys t, s, empirical, exact, stderr, z.
    """
    X = np.asarray(BH)[..., coord]
    N = X.shape[0]
    if N < 2:
        raise ConfigError("covariance check needs at least 2 paths")
    rows = []
    idx = [grid.index_of(t) for t in times]
    for a, ja in zip(times, idx):
        for b, jb in zip(times, idx):
            if jb > ja:
                continue
            prod = X[:, ja] * X[:, jb]
            emp = prod.mean()
            se = prod.std(ddof=1) / np.sqrt(N)
            ex = covariance_RH(a, b, H)
            rows.append(dict(t=float(a), s=float(b), empirical=float(emp), exact=float(ex),
                             stderr=float(se), z=float((emp - ex) / se) if se > 0 else 0.0))
    return rows
