"""Fractional integrals/derivatives and the Volterra kernel operators of fBm.

All operators act on functions sampled at the nodes of a uniform
:class:`~fracbismut.grid.TimeGrid` starting at 0, along the last axis of the
input array, so batches of paths go through a single matrix product.

Singular kernels are never sampled on their singularity: the factor
``(x - y)^p`` is integrated exactly against the piecewise-linear interpolant
of the smooth factor (product integration). Power weights ``s^{+-(H-1/2)}``
at the left endpoint are evaluated at the midpoint of the first cell,
``s_0 := h/2``.

The kernel is normalized so that ``int K(t,r) K(s,r) dr`` equals the fBm
covariance ``(t^{2H} + s^{2H} - |t-s|^{2H}) / 2``. With that normalization
the inverse operator carries the factor ``1 / (c_H Gamma(H - 1/2))``.
"""

from __future__ import annotations

import logging
from functools import cached_property, lru_cache

import numpy as np
from scipy import linalg, special

from .errors import ConfigError, KernelValidationError
from .grid import TimeGrid

log = logging.getLogger(__name__)

POWER_OFFSET = 0.5  # first-cell evaluation point for power weights, in units of h
_QUAD_INTERIOR = 6
_QUAD_SPECIAL = 12


def check_hurst(H: float, diagnostic: bool = False) -> float:
    H = float(H)
    if diagnostic and H == 0.5:
        return H
    if not (0.5 < H < 1.0):
        raise ConfigError(f"H must lie in (1/2, 1), got {H}"
                          + (" (H = 1/2 is admitted only in diagnostic mode)" if H == 0.5 else ""))
    return H


def c_H(H: float) -> float:
    """sqrt(H(2H-1) / B(2-2H, H-1/2)); the Brownian limit H -> 1/2 is 0."""
    if H == 0.5:
        return 0.0
    return float(np.sqrt(H * (2 * H - 1) / special.beta(2 - 2 * H, H - 0.5)))


def inverse_normalization(H: float) -> float:
    """1 / (c_H Gamma(H - 1/2)); tends to 1 as H -> 1/2."""
    if H == 0.5:
        return 1.0
    return 1.0 / (c_H(H) * special.gamma(H - 0.5))


def kernel_value(t, s, H: float):
    """Volterra kernel K_H(t, s), zero for s >= t. Vectorized over t and s.

    Uses the closed form of ``int_s^t c_H (u/s)^{H-1/2} (u-s)^{H-3/2} du``:
    ``c_H s^{-a} t^a (t-s)^a / a * 2F1(-a, 1; a+1; 1 - s/t)`` with a = H - 1/2.
    """
    t, s = np.broadcast_arrays(np.asarray(t, float), np.asarray(s, float))
    out = np.zeros(t.shape)
    m = s < t
    if H == 0.5:
        out[m] = 1.0
        return out if out.ndim else float(out)
    if np.any(m & (s <= 0)):
        raise ConfigError("K_H(t, s) is singular at s = 0")
    a = H - 0.5
    tt, ss = t[m], s[m]
    out[m] = (c_H(H) * ss ** (-a) * tt ** a * (tt - ss) ** a / a
              * special.hyp2f1(-a, 1.0, a + 1.0, 1.0 - ss / tt))
    return out if out.ndim else float(out)


def kernel_time_derivative(t, s, H: float):
    """dK_H/dt (t, s) = c_H (t/s)^{H-1/2} (t-s)^{H-3/2} for 0 < s < t, else 0."""
    t, s = np.broadcast_arrays(np.asarray(t, float), np.asarray(s, float))
    out = np.zeros(t.shape)
    m = s < t
    a = H - 0.5
    out[m] = c_H(H) * (t[m] / s[m]) ** a * (t[m] - s[m]) ** (a - 1)
    return out if out.ndim else float(out)


# ---------------------------------------------------------------------------
# product-integration weights (integer units, h = 1)

def _power_hat_weights(n: int, p: float):
    """Weights of int over the cell at lag k of u^p times the two hat functions.

    The cell at lag k spans distances u in [k-1, k] from the evaluation node;
    ``wl[k]`` multiplies the node farther away (u = k), ``wr[k]`` the nearer
    one (u = k-1). Index 0 is unused; lag 1 is only valid when p > -1.
    """
    k = np.arange(n + 1, dtype=float)
    a = np.maximum(k - 1, 0.0)
    b = k
    with np.errstate(divide="ignore", invalid="ignore"):
        if p == -1.0:
            m0 = np.log(b / a)
        else:
            m0 = (b ** (p + 1) - a ** (p + 1)) / (p + 1)
        m1 = (b ** (p + 2) - a ** (p + 2)) / (p + 2)
        wr = b * m0 - m1  # y - y_left = b - u
        wl = m0 - wr
    wl[0] = wr[0] = 0.0
    return wl, wr


def _lower_toeplitz(first_col_by_lag: np.ndarray, col0_by_lag: np.ndarray) -> np.ndarray:
    """Lower-triangular matrix M[j, i] = c[j - i] with column 0 replaced."""
    M = linalg.toeplitz(first_col_by_lag, np.zeros_like(first_col_by_lag))
    M[:, 0] = col0_by_lag
    return M


@lru_cache(maxsize=32)
def _rl_matrix_units(n: int, alpha: float) -> np.ndarray:
    wl, wr = _power_hat_weights(n + 1, alpha - 1.0)
    lag = np.arange(n + 1)
    # node i receives wl from cell i (lag j-i) and wr from cell i-1 (lag j-i+1)
    c = np.where(lag >= 1, wl[lag], 0.0) + wr[lag + 1]
    col0 = np.where(lag >= 1, wl[lag], 0.0)
    M = _lower_toeplitz(c, col0)
    M.setflags(write=False)
    return M


def rl_integral_left(f, alpha: float, grid: TimeGrid) -> np.ndarray:
    """Left Riemann-Liouville integral I^alpha_{0+} f at every node.

    Exact for piecewise-linear f.
    """
    if not alpha > 0:
        raise ConfigError(f"fractional order must be positive, got {alpha}")
    f = np.asarray(f, dtype=float)
    _check_len(f, grid)
    M = _rl_matrix_units(grid.n, float(alpha))
    return f @ M.T * (grid.dt ** alpha / special.gamma(alpha))


@lru_cache(maxsize=32)
def _weyl_increment_units(n: int, alpha: float) -> np.ndarray:
    wl, wr = _power_hat_weights(n + 1, -alpha - 1.0)
    lag = np.arange(n + 1)
    adjacent = 1.0 / (1.0 - alpha)  # int_0^1 u^{-alpha-1} * u du, linear increment model
    first = np.where(lag == 1, adjacent, np.where(lag >= 2, wl[lag], 0.0))
    c = first + np.where(lag >= 1, wr[np.minimum(lag + 1, n + 1)], 0.0)
    C = _lower_toeplitz(c, first)
    np.fill_diagonal(C, 0.0)
    C.setflags(write=False)
    return C


def weyl_increment_weights(grid: TimeGrid, alpha: float) -> np.ndarray:
    """Matrix C with int_0^{x_j} (f(x_j)-f(y)) (x_j-y)^{-alpha-1} dy = sum_m C[j,m] (f_j - f_m).

    Shared by the Weyl derivative, the inverse kernel operator and the
    term-wise weight decomposition in :mod:`fracbismut.gradient`.
    """
    return _weyl_increment_units(grid.n, float(alpha)) * grid.dt ** (-alpha)


def _left_power_nodes(grid: TimeGrid) -> np.ndarray:
    s = np.array(grid.nodes, dtype=float)
    s[0] = POWER_OFFSET * grid.dt
    return s


def weyl_derivative_left(f, alpha: float, grid: TimeGrid) -> np.ndarray:
    """Weyl (Marchaud) derivative D^alpha_{0+} f at every node.

    At x = 0 only the boundary term is kept, evaluated at x = h/2.
    """
    if not (0 < alpha < 1):
        raise ConfigError(f"Weyl derivative order must lie in (0, 1), got {alpha}")
    f = np.asarray(f, dtype=float)
    _check_len(f, grid)
    C = weyl_increment_weights(grid, alpha)
    x = _left_power_nodes(grid)
    inc = f * C.sum(axis=1) - f @ C.T
    return (f * x ** (-alpha) + alpha * inc) / special.gamma(1 - alpha)


def _flip(f):
    return np.asarray(f, dtype=float)[..., ::-1]


def rl_integral_right(f, alpha: float, grid: TimeGrid) -> np.ndarray:
    """Right integral I^alpha_{T-} f without the complex phase (-1)^{-alpha}."""
    return _flip(rl_integral_left(_flip(f), alpha, grid))


def weyl_derivative_right(f, alpha: float, grid: TimeGrid) -> np.ndarray:
    """Right Weyl derivative D^alpha_{T-} f without the phase (-1)^alpha."""
    return _flip(weyl_derivative_left(_flip(f), alpha, grid))


def zahle_integral(f, g, alpha: float, grid: TimeGrid) -> float:
    """int_0^T f dg through fractional integration by parts.

    The two phases (-1)^alpha (-1)^{1-alpha} combine into a minus sign.
    """
    df = weyl_derivative_left(f, alpha, grid)
    g = np.asarray(g, dtype=float)
    dg = weyl_derivative_right(g - g[-1], 1 - alpha, grid)
    prod = df * dg
    h = grid.dt
    # df ~ x^{-alpha} near 0 (sampled at h/2), dg bounded; dg ~ (T-x)^alpha vanishes at T
    first = prod[0] * (h / 2) ** alpha * h ** (1 - alpha) / (1 - alpha)
    return float(-(first + _trapezoid_from_node1(prod, h)))


def _trapezoid_from_node1(y, h):
    """Trapezoid rule over nodes 1..n along the last axis."""
    return h * (y[..., 1:].sum(axis=-1) - 0.5 * (y[..., 1] + y[..., -1]))


def _check_len(f, grid):
    if f.shape[-1] != grid.n + 1:
        raise ConfigError(f"sampled function has {f.shape[-1]} values, grid needs {grid.n + 1}")


# ---------------------------------------------------------------------------
# kernel tables

def _kappa(j, sigma, H):
    """K_H(j, sigma) in integer time units (h = 1)."""
    return kernel_value(j, sigma, H)


def _jacobi_01(q, a, b):
    """Nodes/weights for int_0^1 x^b (1-x)^a F(x) dx."""
    y, w = special.roots_jacobi(q, a, b)
    return (y + 1) / 2, w / 2 ** (a + b + 1)


@lru_cache(maxsize=8)
def _kernel_cell_tables(n: int, H: float):
    """Per-cell kernel integrals in integer units.

    Returns ``(hat, ms)``: ``hat[j, i]`` is the weight of node i in
    ``int_0^j K(j, s) f(s) ds`` for piecewise-linear f, and ``ms[j, i]`` the
    mean of K(j, s)^2 over cell [i, i+1].
    """
    a = H - 0.5
    hat = np.zeros((n + 1, n + 1))
    ms = np.zeros((n + 1, n))
    if a == 0.0:
        hat = _rl_matrix_units(n, 1.0).copy()
        ms[np.tril_indices(n + 1, -1, n)] = 1.0
        return hat, ms
    xg, wg = special.roots_legendre(_QUAD_INTERIOR)
    xg, wg = (xg + 1) / 2, wg / 2
    q = _QUAD_SPECIAL
    xa, wa = _jacobi_01(q, 0.0, -a)            # cell 0, weight x^-a
    xb, wb = _jacobi_01(q, 0.0, -2 * a)        # cell 0, weight x^-2a
    xc, wc = _jacobi_01(q, a, 0.0)             # cell next to j, weight (1-x)^a
    xd, wd = _jacobi_01(q, 2 * a, 0.0)         # weight (1-x)^2a
    xe, we = _jacobi_01(q, a, -a)              # j = 1, both
    xf, wf = _jacobi_01(q, 2 * a, -2 * a)
    for j in range(1, n + 1):
        if j == 1:
            m = _kappa(1.0, xe, H) * xe ** a * (1 - xe) ** (-a)
            hat[1, 0] += we @ ((1 - xe) * m)
            hat[1, 1] += we @ (xe * m)
            m2 = _kappa(1.0, xf, H) * xf ** a * (1 - xf) ** (-a)
            ms[1, 0] = wf @ (m2 ** 2)
            continue
        # cell 0
        m = _kappa(j, xa, H) * xa ** a
        hat[j, 0] += wa @ ((1 - xa) * m)
        hat[j, 1] += wa @ (xa * m)
        m2 = _kappa(j, xb, H) * xb ** a
        ms[j, 0] = wb @ (m2 ** 2)
        # cell j-1, next to the evaluation node
        sig = j - 1 + xc
        m = _kappa(j, sig, H) * (1 - xc) ** (-a)
        hat[j, j - 1] += wc @ ((1 - xc) * m)
        hat[j, j] += wc @ (xc * m)
        sig = j - 1 + xd
        m2 = _kappa(j, sig, H) * (1 - xd) ** (-a)
        ms[j, j - 1] = wd @ (m2 ** 2)
        if j >= 3:
            i = np.arange(1, j - 1)
            k = _kappa(float(j), i[:, None] + xg[None, :], H)
            hat[j, 1:j - 1] += k @ (wg * (1 - xg))
            hat[j, 2:j] += k @ (wg * xg)
            ms[j, 1:j - 1] = (k ** 2) @ wg
    return hat, ms


@lru_cache(maxsize=8)
def _kernel_node_table(n: int, H: float) -> np.ndarray:
    """N[j, i] = K(j, s_i) in integer units, s_0 = POWER_OFFSET."""
    s = np.arange(n + 1, dtype=float)
    s[0] = POWER_OFFSET
    j = np.arange(n + 1, dtype=float)
    N = kernel_value(j[:, None], s[None, :], H)
    N.setflags(write=False)
    return N


class FractionalKernelSet:
    """Kernel weights for one grid and Hurst parameter.

    Tables are built lazily and cached per (n, H) in integer time units; the
    horizon only enters through the scale factor ``h^(H-1/2)``. On
    construction the covariance identity is checked on a probe set and a
    :class:`KernelValidationError` is raised if the relative error exceeds
    ``tol``.
    """

    def __init__(self, grid: TimeGrid, H: float, *, diagnostic: bool = False,
                 tol: float = 5e-2, validate: bool = True):
        self.grid = grid
        self.H = check_hurst(H, diagnostic)
        self.alpha = self.H - 0.5
        self.c_H = c_H(self.H)
        self.tol = tol
        self.probe_errors: dict = {}
        if validate:
            self.validate()

    def __repr__(self):
        return f"FractionalKernelSet(T={self.grid.T}, n={self.grid.n}, H={self.H})"

    @property
    def _scale(self):
        return self.grid.dt ** self.alpha

    @cached_property
    def node_values(self) -> np.ndarray:
        """K(t_j, s_i) with s_0 = h/2; shape (n+1, n+1)."""
        return _kernel_node_table(self.grid.n, self.H) * self._scale

    @cached_property
    def _cells(self):
        return _kernel_cell_tables(self.grid.n, self.H)

    @cached_property
    def kh_matrix(self) -> np.ndarray:
        return self._cells[0] * (self._scale * self.grid.dt)

    @cached_property
    def fbm_weights(self) -> np.ndarray:
        """Cell weights sqrt(mean over cell i of K(t_j, s)^2); shape (n+1, n)."""
        return np.sqrt(self._cells[1]) * self._scale

    @cached_property
    def kh_star_matrix(self) -> np.ndarray:
        N = self.node_values
        n = self.grid.n
        S = np.zeros((n + 1, n + 1))
        S[:, :n] = (N[1:, :] - N[:-1, :]).T
        S = np.triu(S)
        return S

    # -- operators ---------------------------------------------------------
    def apply_KH(self, f) -> np.ndarray:
        f = np.asarray(f, dtype=float)
        _check_len(f, self.grid)
        return f @ self.kh_matrix.T

    def apply_KH_star(self, phi) -> np.ndarray:
        """(K* phi)(s_i) = int_{s_i}^T phi(r) dK/dr(r, s_i) dr, phi constant on [t_k, t_{k+1})."""
        phi = np.asarray(phi, dtype=float)
        _check_len(phi, self.grid)
        return phi @ self.kh_star_matrix.T

    def apply_KH_inverse(self, hprime) -> np.ndarray:
        return apply_KH_inverse(hprime, self.grid, self.H)

    def l2_inner(self, a, b) -> np.ndarray:
        """int_0^T a b ds for node samples with s_0 = h/2 and a b ~ s^{1-2H} near 0."""
        prod = np.asarray(a, float) * np.asarray(b, float)
        h, al = self.grid.dt, self.alpha
        first = prod[..., 0] * (POWER_OFFSET * h) ** (2 * al) * h ** (1 - 2 * al) / (1 - 2 * al)
        return first + _trapezoid_from_node1(prod, h)

    def kernel_covariance(self, t: float, s: float) -> float:
        """int_0^{t^s} K(t, r) K(s, r) dr for node times t, s."""
        N = self.node_values
        j, k = self.grid.index_of(t), self.grid.index_of(s)
        return float(self.l2_inner(N[j], N[k]))

    def probe_pairs(self):
        T = self.grid.T
        fr = [0.25, 0.5, 0.75, 1.0]
        pairs = []
        for a in fr:
            for b in fr:
                if b <= a:
                    pairs.append((_snap(a * T, self.grid), _snap(b * T, self.grid)))
        return pairs

    def validate(self) -> None:
        from .fbm import covariance_RH

        worst = 0.0
        for t, s in self.probe_pairs():
            if s <= 0:
                continue
            err = abs(self.kernel_covariance(t, s) - covariance_RH(t, s, self.H))
            rel = err / covariance_RH(max(t, s), max(t, s), self.H)
            self.probe_errors[(t, s)] = rel
            worst = max(worst, rel)
        if worst > self.tol:
            raise KernelValidationError(
                f"covariance identity off by {worst:.3g} > tol {self.tol} "
                f"(n={self.grid.n}, H={self.H})", residual=worst)
        log.debug("kernel set %r validated, worst probe error %.2e", self, worst)


def _snap(t, grid):
    return grid.nodes[int(round(t / grid.dt))]


def apply_KH(f, kernels: FractionalKernelSet, grid: TimeGrid | None = None) -> np.ndarray:
    if grid is not None:
        grid.check_same(kernels.grid)
    return kernels.apply_KH(f)


def apply_KH_star(phi, kernels: FractionalKernelSet, grid: TimeGrid | None = None) -> np.ndarray:
    if grid is not None:
        grid.check_same(kernels.grid)
    return kernels.apply_KH_star(phi)


def apply_KH_inverse(hprime, grid: TimeGrid, H: float) -> np.ndarray:
    """(K_H^{-1} h)(t) = t^a D^a_{0+}[s^{-a} h'](t) / (c_H Gamma(a)), a = H - 1/2.

    ``hprime`` is the derivative h' sampled at the nodes. Returns h' unchanged
    for H = 1/2.
    """
    hprime = np.asarray(hprime, dtype=float)
    _check_len(hprime, grid)
    if H == 0.5:
        return hprime.copy()
    a = H - 0.5
    s = _left_power_nodes(grid)
    g = hprime * s ** (-a)
    return s ** a * weyl_derivative_left(g, a, grid) * inverse_normalization(H)
