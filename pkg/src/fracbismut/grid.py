"""Uniform time grids, sample paths, Hölder seminorms and per-path RNG streams."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import ConfigError, GridMismatchError

log = logging.getLogger(__name__)

EXACT_HOLDER_MAX_STEPS = 4096
HOLDER_BAND = 512


@dataclass(frozen=True)
class TimeGrid:
    """Nodes t_k = k T / n, k = 0..n."""

    T: float
    n: int

    def __post_init__(self):
        if not (np.isfinite(self.T) and self.T > 0):
            raise ConfigError(f"T must be positive, got {self.T!r}")
        if int(self.n) != self.n or self.n < 2:
            raise ConfigError(f"steps n must be an integer >= 2, got {self.n!r}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "T", float(self.T))

    @property
    def dt(self) -> float:
        return self.T / self.n

    @cached_property
    def nodes(self) -> np.ndarray:
        t = np.arange(self.n + 1) * self.dt
        t[-1] = self.T
        t.setflags(write=False)
        return t

    def index_of(self, t: float) -> int:
        """Index of the node equal to ``t`` (within rounding); raises otherwise."""
        k = int(round(t / self.dt))
        if k < 0 or k > self.n or abs(k * self.dt - t) > 1e-9 * max(1.0, self.T):
            raise ConfigError(f"time {t} is not a node of {self}")
        return k

    def check_same(self, other: "TimeGrid") -> None:
        if self != other:
            raise GridMismatchError(f"grid mismatch: {self} vs {other}")


def make_uniform_grid(T: float, n: int) -> TimeGrid:
    return TimeGrid(T, n)


@dataclass(frozen=True)
class Path:
    """Values of an m-dimensional path at the n+1 grid nodes, shape (n+1, m)."""

    grid: TimeGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or v.shape[0] != self.grid.n + 1:
            raise ConfigError(
                f"path needs {self.grid.n + 1} value slots, got shape {v.shape}"
            )
        if not np.all(np.isfinite(v)):
            raise ConfigError("path values must be finite")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def __getitem__(self, k):
        return self.values[k]


@dataclass(frozen=True)
class SeedSpec:
    """Counter-based stream derivation: (master_seed, path_index) -> Philox state.

    The 64-bit master seed is the Philox key; the path index occupies the high
    words of the 256-bit counter, so each path owns a disjoint block of 2**128
    draws and generation is independent of evaluation order.
    """

    master_seed: int

    def __post_init__(self):
        s = int(self.master_seed)
        if s < 0 or s >= 2**64:
            raise ConfigError(f"master seed must fit in 64 bits, got {self.master_seed}")
        object.__setattr__(self, "master_seed", s)

    def generator(self, path_index: int) -> np.random.Generator:
        if path_index < 0:
            raise ConfigError("path index must be nonnegative")
        counter = [0, 0, int(path_index) & (2**64 - 1), int(path_index) >> 64]
        return np.random.Generator(np.random.Philox(key=self.master_seed, counter=counter))

    def normals(self, path_indices, shape) -> np.ndarray:
        """Standard normals of ``shape`` for each path index, stacked on axis 0."""
        idx = np.atleast_1d(np.asarray(path_indices, dtype=np.int64))
        out = np.empty((idx.size, *shape))
        for r, i in enumerate(idx):
            out[r] = self.generator(int(i)).standard_normal(shape)
        return out


def holder_seminorm(values, dt: float, lam: float, max_lag: int | None = None):
    """Grid Hölder seminorm of one or many paths.

    ``values`` has shape (..., n+1, m) or (..., n+1). Returns ``(norms, banded)``
    where ``norms`` has the leading batch shape and ``banded`` tells whether
    only lags up to ``max_lag`` were scanned.
    """
    if not (0 < lam <= 1):
        raise ConfigError(f"Hölder exponent must lie in (0, 1], got {lam}")
    v = np.asarray(values, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    npts = v.shape[-2]
    if npts < 2:
        raise ConfigError("Hölder seminorm needs at least 2 nodes")
    n = npts - 1
    if max_lag is None:
        max_lag = n if n <= EXACT_HOLDER_MAX_STEPS else HOLDER_BAND
    max_lag = min(max_lag, n)
    banded = max_lag < n
    best = np.zeros(v.shape[:-2])
    for k in range(1, max_lag + 1):
        d = v[..., k:, :] - v[..., :-k, :]
        inc = np.sqrt(np.einsum("...m,...m->...", d, d)).max(axis=-1)
        np.maximum(best, inc / (k * dt) ** lam, out=best)
    return best, banded


def holder_norm(f: Path, lam: float) -> float:
    """sup over node pairs of |f(t_j) - f(t_i)| / |t_j - t_i|^lam."""
    val, banded = holder_seminorm(f.values, f.grid.dt, lam)
    if banded:
        log.warning("holder_norm: n=%d > %d, banded approximation with |j-i| <= %d",
                    f.grid.n, EXACT_HOLDER_MAX_STEPS, HOLDER_BAND)
    return float(val)
