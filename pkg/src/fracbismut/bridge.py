"""Controllability machinery and the bridge functions that steer g(T) to zero.

For the linear first component dX = (AX + BY)dt the direction fields are

    g~(t) = a1(t) v2 - a2(t) B^* e^{(T-t)A^*} U_T^{-1} (e^{TA} v1 + m),
    g(t)  = e^{tA} v1 + int_0^t e^{(t-s)A} B g~(s) ds,

with U_T = int a2(s) e^{(T-s)A} B B^* e^{(T-s)A^*} ds and
m = int a1(s) e^{(T-s)A} B v2 ds. In the polynomial mode a1 is chosen so that
int a1(s) e^{(T-s)A} B ds = 0 and m is dropped.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from math import comb, factorial

import numpy as np
from scipy import linalg, special

from .errors import ConfigError, DegeneracyError
from .grid import TimeGrid
from .model import DegenerateModel

log = logging.getLogger(__name__)

RANK_RTOL = 1e-10
MODES = ("exact", "polynomial")


def nilpotency_index(A, rtol: float = 1e-12) -> int | None:
    """Smallest k >= 1 with A^k = 0, or None."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    scale = max(1.0, float(np.abs(A).max(initial=0.0)))
    P = np.eye(A.shape[0])
    for k in range(1, A.shape[0] + 1):
        P = P @ A
        if np.abs(P).max(initial=0.0) <= rtol * scale ** k:
            return k
    return None


def matrix_exp(A, t=1.0) -> np.ndarray:
    """e^{tA} for scalar or array t; shape (*t.shape, d, d).

    Nilpotent A uses the terminating series, otherwise scaling and squaring.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    t = np.asarray(t, dtype=float)
    d = A.shape[0]
    k = nilpotency_index(A)
    if k is not None:
        out = np.broadcast_to(np.eye(d), t.shape + (d, d)).copy()
        P = np.eye(d)
        for j in range(1, k):
            P = P @ A
            out += (t[..., None, None] ** j / factorial(j)) * P
        return out
    flat = t.reshape(-1)
    out = np.stack([linalg.expm(s * A) for s in flat]) if flat.size else np.empty((0, d, d))
    return out.reshape(t.shape + (d, d))


def kalman_rank(A, B) -> int | None:
    """Smallest k0 in [0, d1-1] with rank [B, AB, ..., A^k0 B] = d1, or None."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    d1 = A.shape[0]
    blocks = []
    P = B
    for k in range(d1):
        blocks.append(P)
        sv = np.linalg.svd(np.hstack(blocks), compute_uv=False)
        if sv.size and sv[0] > 0 and np.sum(sv > RANK_RTOL * sv[0]) == d1:
            return k
        P = A @ P
    return None


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AlphaFunctions:
    """Polynomial weights a1 (a1(0)=1, a1(T)=0) and a2 = t(T-t)/T^2.

    a1(t) = sum_i coeffs[i-1] ((T-t)/T)^i.
    """

    T: float
    coeffs: tuple
    mode: str
    system_used: str
    validation_residual: float | None = None

    def _u(self, t):
        return (self.T - np.asarray(t, dtype=float)) / self.T

    def a1(self, t):
        u = self._u(t)
        return sum(c * u ** (i + 1) for i, c in enumerate(self.coeffs))

    def a1_prime(self, t):
        u = self._u(t)
        return sum(-(i + 1) * c * u ** i / self.T for i, c in enumerate(self.coeffs))

    def a2(self, t):
        t = np.asarray(t, dtype=float)
        return t * (self.T - t) / self.T ** 2

    def a2_prime(self, t):
        t = np.asarray(t, dtype=float)
        return (self.T - 2 * t) / self.T ** 2

    def metadata(self):
        return dict(mode=self.mode, a1_coefficients=list(self.coeffs), system_used=self.system_used,
                    validation_residual=self.validation_residual,
                    a2="t(T-t)/T^2")


def _binomial_system(n0):
    m = n0 + 1
    rows = [np.ones(m)]
    for j in range(1, n0 + 2):
        rows.append([1.0 / comb(i + j + 1, j + 1) for i in range(1, m + 1)])
    rhs = np.zeros(len(rows))
    rhs[0] = 1.0
    return np.array(rows), rhs


def _moment_system(n0):
    m = n0 + 1
    rows = [np.ones(m)]
    for k in range(n0):
        rows.append([1.0 / (i + k + 1) for i in range(1, m + 1)])
    rhs = np.zeros(m)
    rhs[0] = 1.0
    return np.array(rows), rhs


def a1_moment_integral(af: AlphaFunctions, A, B, q: int = 64) -> np.ndarray:
    """int_0^T a1(t) e^{(T-t)A} B dt by Gauss-Legendre quadrature."""
    x, w = special.roots_legendre(q)
    t = (x + 1) * af.T / 2
    E = matrix_exp(A, af.T - t)
    return np.einsum("k,kij,jl->il", w * af.a1(t) * af.T / 2, E, np.atleast_2d(B))


def alpha_functions(grid: TimeGrid, n0: int | None = None, A=None, B=None,
                    tol: float = 1e-8) -> AlphaFunctions:
    """Weights for the bridge.

    ``n0=None`` gives the linear a1 = (T-t)/T. Otherwise a1 has degree n0+1
    and must satisfy int a1 e^{(T-t)A} B dt = 0, which requires A^{n0} = 0.
    The binomial system is tried first; it is overdetermined, so the
    moment system int a1(t)(T-t)^k dt = 0, k < n0, is the usual outcome.
    """
    T = grid.T
    if n0 is None:
        return AlphaFunctions(T, (1.0,), "exact", "linear")
    if int(n0) != n0 or n0 < 1:
        raise ConfigError(f"nilpotency index must be a positive integer, got {n0}")
    n0 = int(n0)
    if A is None or B is None:
        raise ConfigError("the polynomial mode needs A and B for validation")
    A = np.atleast_2d(np.asarray(A, float))
    if np.abs(np.linalg.matrix_power(A, n0)).max() > 1e-12 * max(1.0, np.abs(A).max()) ** n0:
        raise ConfigError(f"A^{n0} != 0; the polynomial mode does not apply")
    Bn = max(float(np.linalg.norm(np.atleast_2d(B), 2)), 1e-300)
    tried = []
    for label, (M, rhs) in (("binomial", _binomial_system(n0)), ("moment", _moment_system(n0))):
        sol, res, rank, _ = np.linalg.lstsq(M, rhs, rcond=None)
        if rank < M.shape[1]:
            tried.append(f"{label}: singular (rank {rank})")
            continue
        af = AlphaFunctions(T, tuple(float(c) for c in sol), "polynomial", label)
        resid = float(np.linalg.norm(a1_moment_integral(af, A, B), 2)) / (Bn * T)
        if resid <= tol:
            if label != "binomial":
                log.info("a1 coefficients: binomial system rejected (%s); using moment system",
                         "; ".join(tried))
            return AlphaFunctions(T, af.coeffs, "polynomial", label, resid)
        tried.append(f"{label}: validation residual {resid:.3g}")
    raise DegeneracyError("no admissible a1 coefficients: " + "; ".join(tried))


@dataclass(frozen=True)
class Gramian:
    U: np.ndarray
    U_inv: np.ndarray
    eigenvalues: np.ndarray
    eig_min_path: np.ndarray  # smallest eigenvalue of U_t at every node

    @property
    def eig_min(self):
        return float(self.eigenvalues[0])


def gramian(A, B, alpha2, grid: TimeGrid) -> Gramian:
    """U_t = int_0^t a2(s) e^{(T-s)A} B B^* e^{(T-s)A^*} ds by the trapezoid rule."""
    alpha2 = np.asarray(alpha2, dtype=float)
    if np.any(alpha2 < 0):
        raise ConfigError("a2 must be nonnegative")
    B = np.atleast_2d(np.asarray(B, dtype=float))
    E = matrix_exp(A, grid.T - grid.nodes)
    EB = E @ B
    f = alpha2[:, None, None] * EB @ np.swapaxes(EB, -1, -2)
    h = grid.dt
    cum = np.zeros_like(f)
    cum[1:] = np.cumsum(0.5 * h * (f[1:] + f[:-1]), axis=0)
    U = 0.5 * (cum[-1] + cum[-1].T)
    eig = np.linalg.eigvalsh(U)
    eig_path = np.array([np.linalg.eigvalsh(0.5 * (c + c.T))[0] for c in cum])
    scale = max(float(np.abs(eig).max(initial=0.0)), 0.0)
    if scale == 0.0 or eig[0] <= RANK_RTOL * scale:
        raise DegeneracyError(f"Gramian is singular (smallest eigenvalue {eig[0]:.3g}, "
                              f"largest {scale:.3g})", residual=float(eig[0]))
    return Gramian(U, np.linalg.inv(U), eig, eig_path)


# ---------------------------------------------------------------------------


@dataclass
class BridgeSet:
    grid: TimeGrid
    v: np.ndarray
    mode: str
    alphas: AlphaFunctions
    gram: Gramian
    k0: int
    g: np.ndarray  # (n+1, d1)
    gt: np.ndarray  # (n+1, d2), also h~ with (x~, y~) = v
    gt_prime: np.ndarray
    certificate: dict = field(default_factory=dict)

    @property
    def kappa(self):
        return self.g

    @property
    def h_tilde(self):
        return self.gt

    @property
    def alpha1(self):
        return self.alphas.a1(self.grid.nodes)

    @property
    def alpha2(self):
        return self.alphas.a2(self.grid.nodes)


def convolve_exp(A, q, grid: TimeGrid, init=None) -> np.ndarray:
    """e^{t_j A} init + int_0^{t_j} e^{(t_j-s)A} q(s) ds at every node (trapezoid).

    ``q`` has shape (n+1, d1). The recursion F_{j+1} = P F_j + h/2 (P q_j + q_{j+1})
    with P = e^{hA} reproduces the composite trapezoid rule exactly.
    """
    q = np.asarray(q, dtype=float)
    P = matrix_exp(A, grid.dt)
    h = grid.dt
    F = np.zeros_like(q)
    F[0] = 0.0 if init is None else init
    for j in range(grid.n):
        F[j + 1] = P @ (F[j] + 0.5 * h * q[j]) + 0.5 * h * q[j + 1]
    return F


def propagate_g(grad1, grad2, v1, gt, grid: TimeGrid) -> np.ndarray:
    """Euler solution of g' = grad1(t) g + grad2(t) g~(t), g(0) = v1.

    ``grad1``/``grad2`` are constant matrices or per-node arrays of shape
    (n+1, d1, d1) / (n+1, d1, d2).
    """
    n = grid.n
    G1 = np.broadcast_to(np.asarray(grad1, float), (n + 1,) + np.shape(grad1)[-2:])
    G2 = np.broadcast_to(np.asarray(grad2, float), (n + 1,) + np.shape(grad2)[-2:])
    g = np.zeros((n + 1, G1.shape[-1]))
    g[0] = v1
    for k in range(n):
        g[k + 1] = g[k] + (G1[k] @ g[k] + G2[k] @ gt[k]) * grid.dt
    return g


def build_bridge(model: DegenerateModel, v, grid: TimeGrid, mode: str = "exact",
                 n0: int | None = None, residual_factor: float = 10.0) -> BridgeSet:
    if mode not in MODES:
        raise ConfigError(f"unknown bridge mode {mode!r}; choose from {MODES}")
    v = np.asarray(v, dtype=float).reshape(-1)
    d1, d2 = model.d1, model.d2
    if v.size != d1 + d2:
        raise ConfigError(f"direction must have {d1 + d2} entries, got {v.size}")
    v1, v2 = v[:d1], v[d1:]
    A, B = model.A, model.B
    k0 = kalman_rank(A, B)
    if k0 is None:
        raise DegeneracyError("Kalman rank condition fails for (A, B)")
    if mode == "polynomial":
        n0 = n0 or nilpotency_index(A)
        if n0 is None:
            raise ConfigError("polynomial mode needs a nilpotent A")
        alphas = alpha_functions(grid, n0, A, B)
    else:
        alphas = alpha_functions(grid)
    t = grid.nodes
    a1, a2 = alphas.a1(t), alphas.a2(t)
    a1p, a2p = alphas.a1_prime(t), alphas.a2_prime(t)
    gram = gramian(A, B, a2, grid)

    E = matrix_exp(A, grid.T - t)  # e^{(T-t)A}
    m = np.zeros(d1)
    if mode == "exact":
        f = a1[:, None] * (E @ (B @ v2))
        m = grid.dt * (f.sum(axis=0) - 0.5 * (f[0] + f[-1]))
    c = gram.U_inv @ (matrix_exp(A, grid.T) @ v1 + m)
    Et_c = np.swapaxes(E, -1, -2) @ c  # e^{(T-t)A^*} c
    gt = a1[:, None] * v2 - a2[:, None] * (Et_c @ B)
    gt_prime = a1p[:, None] * v2 - (a2p[:, None] * Et_c - a2[:, None] * (Et_c @ A)) @ B
    gt[0] = v2
    gt[-1] = 0.0

    g = convolve_exp(A, gt @ B.T, grid, init=v1)
    vnorm = float(np.linalg.norm(v))
    resid = float(np.linalg.norm(g[-1]))
    g_euler = propagate_g(A, B, v1, gt, grid)
    cert = dict(
        mode=mode, k0=k0, alphas=alphas.metadata(),
        gramian_eigenvalues=gram.eigenvalues.tolist(),
        gramian_eig_min=gram.eig_min,
        g_T_residual=resid, g_T_tolerance=residual_factor * grid.dt * vnorm,
        g_T_residual_euler=float(np.linalg.norm(g_euler[-1])),
        gt_0=gt[0].tolist(), gt_T=gt[-1].tolist(),
        a1_moment=float(np.linalg.norm(m)) if mode == "exact" else alphas.validation_residual,
    )
    if resid > residual_factor * grid.dt * vnorm:
        raise DegeneracyError(f"bridge residual |g(T)| = {resid:.3g} exceeds "
                              f"{residual_factor} dt |v|", residual=resid)
    return BridgeSet(grid, v, mode, alphas, gram, k0, g, gt, gt_prime, cert)
