"""Euler schemes for the degenerate system, its coupled copy and its linearization.

All solvers are batched: states carry a leading path axis and each step is a
single vectorized update. The noise enters through fBm increments; with a
deterministic sigma the left-point sum is the Young integral at first order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bridge import BridgeSet
from .errors import ConfigError, CouplingError, DivergenceError
from .fbm import NoisePair
from .grid import Path, TimeGrid
from .model import DegenerateModel

DIVERGENCE_BOUND = 1e12


@dataclass(frozen=True)
class Trajectory:
    Z: Path
    z0: np.ndarray
    noise: NoisePair | None = None


@dataclass(frozen=True)
class VariationalTrajectory:
    J: Path
    v: np.ndarray


def _as_batch(dBH, grid, d):
    dBH = np.asarray(dBH, dtype=float)
    single = dBH.ndim == 2
    if single:
        dBH = dBH[None]
    if dBH.shape[1:] != (grid.n, d):
        raise ConfigError(f"noise increments must have shape (N, {grid.n}, {d}), got {dBH.shape}")
    return dBH, single


def _initial(model, z, N):
    z = np.asarray(z, dtype=float)
    if z.shape[-1] != model.d1 + model.d2:
        raise ConfigError(f"initial point needs {model.d1 + model.d2} entries, got {z.shape[-1]}")
    return np.broadcast_to(z, (N, model.d1 + model.d2)).copy()


def _guard(state, k):
    bad = ~np.isfinite(state) | (np.abs(state) > DIVERGENCE_BOUND)
    if bad.any():
        raise DivergenceError(f"state left the bound {DIVERGENCE_BOUND:g} at step {k}", step=k)


def euler_batch(model: DegenerateModel, z, dBH, grid: TimeGrid) -> np.ndarray:
    """Euler paths of shape (N, n+1, d1+d2) from fBm increments of shape (N, n, d)."""
    dBH, single = _as_batch(dBH, grid, model.d)
    N = dBH.shape[0]
    d1 = model.d1
    t = grid.nodes
    sig = model.sigma(t)
    Z = np.empty((N, grid.n + 1, d1 + model.d2))
    Z[:, 0] = _initial(model, z, N)
    h = grid.dt
    for k in range(grid.n):
        x, y = Z[:, k, :d1], Z[:, k, d1:]
        Z[:, k + 1, :d1] = x + (x @ model.A.T + y @ model.B.T) * h
        Z[:, k + 1, d1:] = y + model.drift.value(t[k], x, y) * h + dBH[:, k] @ sig[k].T
        _guard(Z[:, k + 1], k + 1)
    return Z[0] if single else Z


def euler_solve(model: DegenerateModel, z, noise: NoisePair, grid: TimeGrid) -> Trajectory:
    noise.BH.grid.check_same(grid)
    dBH = np.diff(noise.BH.values, axis=0)
    Z = euler_batch(model, z, dBH, grid)
    return Trajectory(Path(grid, Z), np.asarray(z, float), noise)


def coupled_batch(model: DegenerateModel, Z: np.ndarray, z_tilde, eps: float,
                  bridge: BridgeSet, dBH, grid: TimeGrid) -> np.ndarray:
    """Coupled paths with the drift frozen along the original paths Z.

    The eps h~' dt forcing is integrated exactly over each step (h~ is known in
    closed form), so the Y difference equals eps h~(t) at every node.
    """
    dBH, single = _as_batch(dBH, grid, model.d)
    Z = np.asarray(Z, dtype=float)
    if single:
        Z = Z[None]
    N = Z.shape[0]
    d1 = model.d1
    z_tilde = np.asarray(z_tilde, dtype=float)
    t = grid.nodes
    sig = model.sigma(t)
    dh = np.diff(bridge.h_tilde, axis=0)
    Ze = np.empty_like(Z)
    Ze[:, 0] = Z[:, 0] + eps * z_tilde
    h = grid.dt
    for k in range(grid.n):
        x, y = Ze[:, k, :d1], Ze[:, k, d1:]
        b = model.drift.value(t[k], Z[:, k, :d1], Z[:, k, d1:])
        Ze[:, k + 1, :d1] = x + (x @ model.A.T + y @ model.B.T) * h
        Ze[:, k + 1, d1:] = y + b * h + dBH[:, k] @ sig[k].T + eps * dh[k]
        _guard(Ze[:, k + 1], k + 1)
    return Ze[0] if single else Ze


def coupling_residual(Z, Ze, eps, bridge: BridgeSet, d1: int) -> np.ndarray:
    """max over nodes of |(Ze - Z) - eps (kappa, h~)| per path."""
    target = np.concatenate([bridge.kappa, bridge.h_tilde], axis=-1)
    diff = np.asarray(Ze) - np.asarray(Z) - eps * target
    return np.abs(diff).max(axis=(-2, -1))


def solve_coupled(model: DegenerateModel, z, z_tilde, eps: float, bridge: BridgeSet,
                  noise: NoisePair, grid: TimeGrid, factor: float = 5.0):
    """Original and coupled trajectories driven by the same noise.

    Raises :class:`CouplingError` if the difference departs from the closed
    form eps (kappa(t), h~(t)) by more than ``factor * dt * eps * (1 + |z~|)``.
    """
    z_tilde = np.asarray(z_tilde, dtype=float)
    if not np.allclose(bridge.v, z_tilde):
        raise ConfigError("bridge was built for a different direction than z~")
    orig = euler_solve(model, z, noise, grid)
    dBH = np.diff(noise.BH.values, axis=0)
    Ze = coupled_batch(model, orig.Z.values, z_tilde, eps, bridge, dBH, grid)
    res = float(coupling_residual(orig.Z.values, Ze, eps, bridge, model.d1))
    tol = factor * grid.dt * abs(eps) * (1 + np.linalg.norm(z_tilde))
    if res > tol:
        raise CouplingError(f"coupling difference off the closed form by {res:.3g} > {tol:.3g}",
                            residual=res)
    z_e = np.asarray(z, float) + eps * z_tilde
    return orig, Trajectory(Path(grid, Ze), z_e, noise)


def variational_batch(model: DegenerateModel, Z: np.ndarray, v, grid: TimeGrid) -> np.ndarray:
    """Euler solution of dJ = [[A, B], [grad_x b, grad_y b]] J dt, J_0 = v."""
    Z = np.asarray(Z, dtype=float)
    single = Z.ndim == 2
    if single:
        Z = Z[None]
    N = Z.shape[0]
    d1 = model.d1
    v = np.asarray(v, dtype=float)
    J = np.empty_like(Z)
    J[:, 0] = np.broadcast_to(v, (N, Z.shape[-1]))
    t = grid.nodes
    h = grid.dt
    for k in range(grid.n):
        Gx, Gy = model.drift.grad(t[k], Z[:, k, :d1], Z[:, k, d1:])
        jx, jy = J[:, k, :d1], J[:, k, d1:]
        J[:, k + 1, :d1] = jx + (jx @ model.A.T + jy @ model.B.T) * h
        J[:, k + 1, d1:] = jy + (np.einsum("nij,nj->ni", Gx, jx)
                                 + np.einsum("nij,nj->ni", Gy, jy)) * h
    return J[0] if single else J


def variational_solve(model: DegenerateModel, trajectory: Trajectory, v,
                      grid: TimeGrid) -> VariationalTrajectory:
    J = variational_batch(model, trajectory.Z.values, v, grid)
    return VariationalTrajectory(Path(grid, J), np.asarray(v, float))
