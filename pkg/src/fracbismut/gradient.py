"""Malliavin weights and three estimators of the semigroup gradient.

The weight is the Itô sum M_T = sum_k <u(t_k), W_{k+1} - W_k> of the adapted
integrand

    u = K_H^{-1}( int_0^. theta(s) eta(s) ds ),
    eta = grad_x b(Z) g + grad_y b(Z) g~ - g~',   theta = sigma^* (sigma sigma^*)^{-1},

so that grad_v P_T f(z) = E[f(Z_T) M_T]. The pathwise (variational equation)
and central finite-difference estimators run on the same noise and serve as
independent oracles.

Two discretizations of u are available. ``weight="continuous"`` applies the
quadrature K_H^{-1} (or its J-term split). ``weight="discrete"`` (default)
inverts the noise map the simulator actually uses, B^H_{t_j} = sum_i w[j,i] dW_i,
against the Euler form of the coupling, so the discrete integration by parts is
exact; the two agree in the interior to O(dt) but the continuous one carries a
bias of order dt^{2-2H} from the singular first cell.
"""

from __future__ import annotations

import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import special
from scipy.linalg import solve_triangular

from .bridge import BridgeSet, build_bridge, propagate_g
from .errors import ConfigError, DivergenceError
from .fbm import fbm_from_increments, wiener_increments
from .fracops import (FractionalKernelSet, _left_power_nodes, apply_KH_inverse,
                      inverse_normalization, weyl_increment_weights)
from .grid import SeedSpec, TimeGrid
from .model import DegenerateModel
from .sde import coupled_batch, euler_batch, variational_batch

log = logging.getLogger(__name__)

WORKERS_ENV = "FRACBISMUT_WORKERS"
DEFAULT_CHUNK = 5000


# ---------------------------------------------------------------------------
# test functions


@dataclass(frozen=True)
class TestFunction:
    __test__ = False  # not a pytest class

    name: str
    fn: object
    grad: object
    bounded: bool
    params: dict = field(default_factory=dict)

    def __call__(self, z):
        return self.fn(np.asarray(z, dtype=float))

    def gradient(self, z):
        return self.grad(np.asarray(z, dtype=float))


def _unit(D, i):
    e = np.zeros(D)
    e[i] = 1.0
    return e


def make_test_function(name: str, D: int, index: int = 0, **params) -> TestFunction:
    """Catalog: coord (alias x = coordinate 0), tanh, one_plus_tanh, constant.

    ``coord`` is unbounded and so lies outside C_b^1; it is kept because the
    linear closed forms need it.
    """
    if not 0 <= index < D:
        raise ConfigError(f"coordinate index {index} out of range for dimension {D}")
    e = _unit(D, index)
    if name in ("coord", "x"):
        return TestFunction("coord", lambda z: z[..., index],
                            lambda z: np.broadcast_to(e, z.shape), False, dict(index=index))
    scale = float(params.get("scale", 1.0))
    if name == "tanh":
        return TestFunction("tanh", lambda z: np.tanh(scale * z[..., index]),
                            lambda z: (scale / np.cosh(scale * z[..., index]) ** 2)[..., None] * e,
                            True, dict(index=index, scale=scale))
    if name == "one_plus_tanh":
        return TestFunction("one_plus_tanh", lambda z: 1.0 + np.tanh(scale * z[..., index]),
                            lambda z: (scale / np.cosh(scale * z[..., index]) ** 2)[..., None] * e,
                            True, dict(index=index, scale=scale))
    if name == "constant":
        c = float(params.get("value", 1.0))
        return TestFunction("constant", lambda z: np.full(z.shape[:-1], c),
                            lambda z: np.zeros(z.shape), True, dict(value=c))
    raise ConfigError(f"unknown test function {name!r}; catalog: coord, x, tanh, "
                      "one_plus_tanh, constant")


# ---------------------------------------------------------------------------
# integrands


def theta_nodes(model: DegenerateModel, grid: TimeGrid) -> np.ndarray:
    """theta(t_k) = sigma^*(sigma sigma^*)^{-1}, shape (n+1, d, d2)."""
    return model.sigma.theta(grid.nodes)


def drift_response(model: DegenerateModel, Z: np.ndarray, bridge: BridgeSet,
                   grid: TimeGrid) -> np.ndarray:
    """xi = grad_x b(Z) kappa + grad_y b(Z) h~ along each path, shape (..., n+1, d2)."""
    d1 = model.d1
    Gx, Gy = model.drift.grad(grid.nodes[:, None], Z[..., :d1], Z[..., d1:])
    return (np.einsum("...ij,...j->...i", Gx, np.broadcast_to(bridge.g, Z[..., :d1].shape))
            + np.einsum("...ij,...j->...i", Gy, np.broadcast_to(bridge.gt, Z[..., d1:].shape)))


def eta_integrand(model: DegenerateModel, Z: np.ndarray, bridge: BridgeSet,
                  grid: TimeGrid) -> np.ndarray:
    """eta = grad_x b g + grad_y b g~ - g~'."""
    return drift_response(model, np.asarray(Z, float), bridge, grid) - bridge.gt_prime


def _time_last(a):
    return np.swapaxes(a, -1, -2)


def compact_integrand(phi: np.ndarray, grid: TimeGrid, H: float) -> np.ndarray:
    """u = K_H^{-1}(int_0^. phi) for phi of shape (..., n+1, d)."""
    return _time_last(apply_KH_inverse(_time_last(phi), grid, H))


def discrete_integrand(dS: np.ndarray, kernels: FractionalKernelSet) -> np.ndarray:
    """u solving sum_{l<=j} w[j+1, l] u_l dt = sum_{k<=j} dS_k for every j.

    ``dS`` holds per-step shifts of B^H, shape (..., n, d). The system is lower
    triangular, so u_j only uses dS_0..dS_j and stays adapted. Returns shape
    (..., n+1, d) with a zero last row, matching the node layout of u.
    """
    dS = np.asarray(dS, dtype=float)
    n = kernels.grid.n
    if dS.shape[-2] != n:
        raise ConfigError(f"expected {n} shift steps, got {dS.shape[-2]}")
    L = kernels.fbm_weights[1:] * kernels.grid.dt
    S = np.moveaxis(np.cumsum(dS, axis=-2), -2, 0)
    u = solve_triangular(L, S.reshape(n, -1), lower=True, check_finite=False)
    u = np.moveaxis(u.reshape(S.shape), 0, -2)
    return np.concatenate([u, np.zeros_like(u[..., :1, :])], axis=-2)


def euler_bridge(model: DegenerateModel, bridge: BridgeSet, grid: TimeGrid) -> np.ndarray:
    """g under the Euler step g_{k+1} = g_k + (A g_k + B g~_k) dt, g_0 = v1."""
    return propagate_g(model.A, model.B, bridge.v[:model.d1], bridge.gt, grid)


def bismut_shift(model: DegenerateModel, Z: np.ndarray, bridge: BridgeSet,
                 grid: TimeGrid) -> np.ndarray:
    """Per-step B^H shift theta_k [(grad_x b g + grad_y b g~)_k dt - (g~_{k+1} - g~_k)].

    Uses the Euler g, so shifting the noise by it moves the Euler solution by
    exactly (g_k, g~_k) at first order.
    """
    d1 = model.d1
    Z = np.asarray(Z, dtype=float)
    gE = euler_bridge(model, bridge, grid)[:-1]
    Gx, Gy = model.drift.grad(grid.nodes[:-1, None], Z[..., :-1, :d1], Z[..., :-1, d1:])
    xi = (np.einsum("...ij,...j->...i", Gx, np.broadcast_to(gE, Z[..., :-1, :d1].shape))
          + np.einsum("...ij,...j->...i", Gy, np.broadcast_to(bridge.gt[:-1],
                                                              Z[..., :-1, d1:].shape)))
    step = xi * grid.dt - np.diff(bridge.gt, axis=0)
    return np.einsum("kij,...kj->...ki", theta_nodes(model, grid)[:-1], step)


@dataclass
class WeightBreakdown:
    """u = scale * (J1 + J2 + J3 + J4); M and qv are per path."""

    u: np.ndarray
    J: np.ndarray | None
    scale: float
    M: np.ndarray | None = None
    qv: np.ndarray | None = None

    def term_weights(self, dW):
        """Itô sums of each J term (with the common scale), shape (4, N)."""
        if self.J is None:
            raise ConfigError("breakdown has no J terms")
        return self.scale * np.einsum("t...kd,...kd->t...", self.J[..., :-1, :], dW)


def weight_J_terms(eta: np.ndarray, theta: np.ndarray, grid: TimeGrid, H: float) -> WeightBreakdown:
    """Term-wise assembly of u from eta (..., n+1, d2) and theta (n+1, d, d2).

    J1 = t^{-a} theta eta
    J2 = a t^a int (t^{-a} - s^{-a}) (t-s)^{-a-1} theta(s) eta(s) ds
    J3 = a int (theta(t) - theta(s)) (t-s)^{-a-1} ds eta(t)
    J4 = a int theta(s) (eta(t) - eta(s)) (t-s)^{-a-1} ds
    with a = H - 1/2; all four integrals share the Weyl increment weights,
    so the sum equals :func:`compact_integrand` to rounding.
    """
    eta = np.asarray(eta, dtype=float)
    phi = np.einsum("kij,...kj->...ki", theta, eta)
    a = H - 0.5
    if a == 0.0:
        J = np.stack([phi] + [np.zeros_like(phi)] * 3)
        return WeightBreakdown(phi.copy(), J, 1.0)
    x = _left_power_nodes(grid)
    C = weyl_increment_weights(grid, a)
    xa = x ** (-a)
    J1 = xa[:, None] * phi
    Q2 = C * (xa[:, None] - xa[None, :])
    J2 = a * (x ** a)[:, None] * np.einsum("jm,...md->...jd", Q2, phi)
    Ctheta = np.einsum("jm,mab->jab", C, theta)
    Theta3 = C.sum(axis=1)[:, None, None] * theta - Ctheta
    J3 = a * np.einsum("kij,...kj->...ki", Theta3, eta)
    J4 = a * (np.einsum("kij,...kj->...ki", Ctheta, eta) - np.einsum("jm,...md->...jd", C, phi))
    J = np.stack([J1, J2, J3, J4])
    scale = inverse_normalization(H) / special.gamma(1.5 - H)
    return WeightBreakdown(scale * J.sum(axis=0), J, scale)


def expanded_integrand(xi: np.ndarray, gt_prime: np.ndarray, theta: np.ndarray,
                       grid: TimeGrid, H: float) -> np.ndarray:
    """The five-term form of the coupling weight integrand.

    Terms: s^{-a} theta(s) eta(s) / a; s^a theta eta(s) int (s^{-a} - r^{-a}) (s-r)^{-a-1} dr;
    eta(s) int (s/r)^a (theta(s) - theta(r)) (s-r)^{-a-1} dr;
    int (s/r)^a theta(r) (xi(s) - xi(r)) (s-r)^{-a-1} dr;
    -int (s/r)^a theta(r) (h'(s) - h'(r)) (s-r)^{-a-1} dr; all times a.
    """
    xi = np.asarray(xi, dtype=float)
    hp = np.broadcast_to(np.asarray(gt_prime, dtype=float), xi.shape)
    eta = xi - hp
    phi = np.einsum("kij,...kj->...ki", theta, eta)
    a = H - 0.5
    if a == 0.0:
        return phi
    x = _left_power_nodes(grid)
    xa = x ** (-a)
    C = weyl_increment_weights(grid, a)
    Cw = C * (x ** a)[:, None] * xa[None, :]  # (s/r)^a weights
    e1 = xa[:, None] * phi
    e2 = a * ((x ** a) * (C * (xa[:, None] - xa[None, :])).sum(axis=1))[:, None] * phi
    Cth = np.einsum("jm,mab->jab", Cw, theta)
    e3 = a * np.einsum("kij,...kj->...ki", Cw.sum(axis=1)[:, None, None] * theta - Cth, eta)
    phi_xi = np.einsum("kij,...kj->...ki", theta, xi)
    phi_hp = np.einsum("kij,...kj->...ki", theta, hp)
    e4 = a * (np.einsum("kij,...kj->...ki", Cth, xi) - np.einsum("jm,...md->...jd", Cw, phi_xi))
    e5 = -a * (np.einsum("kij,...kj->...ki", Cth, hp) - np.einsum("jm,...md->...jd", Cw, phi_hp))
    scale = inverse_normalization(H) / special.gamma(1.5 - H)
    return scale * (e1 + e2 + e3 + e4 + e5)


def ito_sum(u: np.ndarray, dW: np.ndarray) -> np.ndarray:
    """sum_k <u(t_k), dW_k> over k = 0..n-1 (left point)."""
    return np.einsum("...kd,...kd->...", u[..., :-1, :], dW)


def quadratic_variation(u: np.ndarray, dt: float) -> np.ndarray:
    return np.einsum("...kd,...kd->...", u[..., :-1, :], u[..., :-1, :]) * dt


WEIGHTS = ("discrete", "continuous")


def malliavin_weight(model: DegenerateModel, Z: np.ndarray, bridge: BridgeSet, dW: np.ndarray,
                     grid: TimeGrid, H: float, breakdown: bool = False,
                     kernels: FractionalKernelSet | None = None,
                     weight: str = "discrete") -> WeightBreakdown:
    """M_T for paths Z driven by Wiener increments dW (the same noise).

    With ``breakdown`` the J terms of the continuous integrand are attached;
    for the discrete weight they are a diagnostic and do not sum to u.
    """
    if weight not in WEIGHTS:
        raise ConfigError(f"unknown weight {weight!r}; choose from {WEIGHTS}")
    eta = eta_integrand(model, Z, bridge, grid)
    th = theta_nodes(model, grid)
    if breakdown:
        wb = weight_J_terms(eta, th, grid, H)
    else:
        wb = WeightBreakdown(compact_integrand(np.einsum("kij,...kj->...ki", th, eta), grid, H),
                             None, 1.0) if weight == "continuous" else WeightBreakdown(None, None, 1.0)
    if weight == "discrete":
        wb.u = discrete_integrand(bismut_shift(model, Z, bridge, grid),
                                  _kernels_for(grid, H, kernels))
    wb.M = ito_sum(wb.u, dW)
    wb.qv = quadratic_variation(wb.u, grid.dt)
    return wb


# ---------------------------------------------------------------------------
# Monte Carlo plumbing


@dataclass
class McEstimate:
    mean: float | np.ndarray
    stderr: float | np.ndarray
    N: int
    seed: int
    wall_time: float = 0.0
    extras: dict = field(default_factory=dict)

    @classmethod
    def from_samples(cls, samples, seed, t0=None, **extras):
        s = np.asarray(samples, dtype=float)
        N = s.shape[0]
        if N < 2:
            raise ConfigError("a Monte Carlo estimate needs N >= 2")
        mean = s.mean(axis=0)
        se = s.std(axis=0, ddof=1) / np.sqrt(N)
        wt = time.perf_counter() - t0 if t0 is not None else 0.0
        if np.ndim(mean) == 0:
            mean, se = float(mean), float(se)
        return cls(mean, se, N, seed, wt, extras)

    def to_dict(self):
        conv = (lambda a: a.tolist() if isinstance(a, np.ndarray) else a)
        return dict(mean=conv(self.mean), stderr=conv(self.stderr), N=self.N, seed=self.seed,
                    wall_time=self.wall_time, **{k: conv(v) for k, v in self.extras.items()})


def z_score(a: McEstimate, b: McEstimate) -> float:
    se = np.hypot(a.stderr, b.stderr)
    return float(abs(a.mean - b.mean) / se) if se > 0 else (0.0 if a.mean == b.mean else np.inf)


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer") from None


def _chunks(N, chunk):
    return [range(s, min(N, s + chunk)) for s in range(0, N, chunk)]


def map_chunks(fn, N, chunk=DEFAULT_CHUNK):
    """Apply fn to path-index chunks; results are returned in index order."""
    parts = _chunks(N, chunk)
    nw = worker_count()
    if nw == 1 or len(parts) == 1:
        return [fn(p) for p in parts]
    with ThreadPoolExecutor(nw) as ex:
        return list(ex.map(fn, parts))


@dataclass
class NoiseBatch:
    dW: np.ndarray
    dBH: np.ndarray


def noise_batch(kernels: FractionalKernelSet, d: int, seed: SeedSpec, idx) -> NoiseBatch:
    dW = wiener_increments(kernels.grid, d, seed, idx)
    BH = fbm_from_increments(dW, kernels)
    return NoiseBatch(dW, np.diff(BH, axis=-2))


def _kernels_for(grid, H, kernels):
    if kernels is not None:
        kernels.grid.check_same(grid)
        if kernels.H != H:
            raise ConfigError(f"kernel set built for H={kernels.H}, requested H={H}")
        return kernels
    return FractionalKernelSet(grid, H, diagnostic=(H == 0.5))


# ---------------------------------------------------------------------------
# estimators


METHODS = ("bismut", "pathwise", "fd")


def estimate_gradient(model: DegenerateModel, z, v, f: TestFunction, grid: TimeGrid, H: float,
                      N: int = 50000, seed: int = 0, methods=METHODS, eps: float = 1e-3,
                      mode: str = "exact", kernels: FractionalKernelSet | None = None,
                      chunk: int = DEFAULT_CHUNK, term_variances: bool = False,
                      weight: str = "discrete") -> dict:
    """Run the requested estimators on one shared set of paths.

    Returns a dict method -> McEstimate; the Bismut entry carries the mean
    weight E[M_T] (with its standard error) in ``extras``.
    """
    methods = tuple(methods)
    unknown = set(methods) - set(METHODS)
    if unknown:
        raise ConfigError(f"unknown estimator(s) {sorted(unknown)}")
    if N < 2:
        raise ConfigError("N must be at least 2")
    if eps <= 0 and "fd" in methods:
        raise ConfigError("finite-difference step must be positive")
    kernels = _kernels_for(grid, H, kernels)
    model.check_sigma(grid.nodes)
    spec = SeedSpec(seed)
    z = np.asarray(z, dtype=float)
    v = np.asarray(v, dtype=float)
    bridge = build_bridge(model, v, grid, mode) if "bismut" in methods else None
    t0 = time.perf_counter()

    def work(idx):
        nb = noise_batch(kernels, model.d, spec, idx)
        out = {}
        Z = euler_batch(model, z, nb.dBH, grid)
        if "bismut" in methods:
            wb = malliavin_weight(model, Z, bridge, nb.dW, grid, H, breakdown=term_variances,
                                  kernels=kernels, weight=weight)
            fz = f(Z[:, -1])
            out["bismut"] = fz * wb.M
            out["weight"] = wb.M
            out["qv"] = wb.qv
            if term_variances:
                out["terms"] = fz * wb.term_weights(nb.dW)
        if "pathwise" in methods:
            J = variational_batch(model, Z, v, grid)
            out["pathwise"] = np.einsum("nd,nd->n", f.gradient(Z[:, -1]), J[:, -1])
        if "fd" in methods:
            Zp = euler_batch(model, z + eps * v, nb.dBH, grid)
            Zm = euler_batch(model, z - eps * v, nb.dBH, grid)
            out["fd"] = (f(Zp[:, -1]) - f(Zm[:, -1])) / (2 * eps)
        return out

    parts = map_chunks(work, N, chunk)
    cat = {k: np.concatenate([p[k] for p in parts], axis=-1) for k in parts[0]}
    res = {}
    for m in methods:
        extras = {}
        if m == "bismut":
            w = McEstimate.from_samples(cat["weight"], seed)
            extras = dict(mean_weight=w.mean, mean_weight_stderr=w.stderr,
                          mean_qv=float(cat["qv"].mean()), bridge=bridge.certificate["mode"],
                          weight=weight,
                          g_T_residual=bridge.certificate["g_T_residual"])
            if term_variances:
                extras["J_term_variances"] = cat["terms"].var(axis=-1, ddof=1).tolist()
        if m == "fd":
            extras = dict(eps=eps)
        res[m] = McEstimate.from_samples(cat[m], seed, t0, **extras)
    return res


def estimate_gradient_bismut(model, z, v, f, grid, N=50000, seed=0, H=0.75, **kw) -> McEstimate:
    return estimate_gradient(model, z, v, f, grid, H, N, seed, ("bismut",), **kw)["bismut"]


def estimate_gradient_pathwise(model, z, v, f, grid, N=50000, seed=0, H=0.75, **kw) -> McEstimate:
    return estimate_gradient(model, z, v, f, grid, H, N, seed, ("pathwise",), **kw)["pathwise"]


def estimate_gradient_fd(model, z, v, f, grid, N=50000, seed=0, H=0.75, eps=1e-3,
                         **kw) -> McEstimate:
    return estimate_gradient(model, z, v, f, grid, H, N, seed, ("fd",), eps=eps, **kw)["fd"]


def pairwise_z(results: dict) -> dict:
    keys = [k for k in METHODS if k in results]
    return {f"{a}-{b}": z_score(results[a], results[b])
            for i, a in enumerate(keys) for b in keys[i + 1:]}


# ---------------------------------------------------------------------------
# Girsanov density of the coupling


EXPONENT_GUARD = 700.0


def girsanov_log_density(model: DegenerateModel, Z, Ze, eps: float, bridge: BridgeSet,
                         dW, grid: TimeGrid, H: float, kernels: FractionalKernelSet | None = None,
                         weight: str = "discrete") -> np.ndarray:
    """log R_eps = -sum <u_eps, dW> - 1/2 sum |u_eps|^2 dt along each path.

    u_eps turns the coupled paths into solutions driven by shifted noise:
    sigma dS_k = (b(Z_k) - b(Ze_k)) dt + eps (h~_{k+1} - h~_k).
    """
    if weight not in WEIGHTS:
        raise ConfigError(f"unknown weight {weight!r}; choose from {WEIGHTS}")
    d1 = model.d1
    t = grid.nodes[:, None]
    th = theta_nodes(model, grid)
    bz = model.drift.value(t, Z[..., :d1], Z[..., d1:])
    be = model.drift.value(t, Ze[..., :d1], Ze[..., d1:])
    if weight == "discrete":
        step = (bz - be)[..., :-1, :] * grid.dt + eps * np.diff(bridge.gt, axis=0)
        u = discrete_integrand(np.einsum("kij,...kj->...ki", th[:-1], step),
                               _kernels_for(grid, H, kernels))
    else:
        psi = np.einsum("kij,...kj->...ki", th, bz - be + eps * bridge.gt_prime)
        u = compact_integrand(psi, grid, H)
    expo = -ito_sum(u, dW) - 0.5 * quadratic_variation(u, grid.dt)
    if np.any(np.abs(expo) > EXPONENT_GUARD):
        raise DivergenceError(f"Girsanov exponent exceeds {EXPONENT_GUARD} in magnitude")
    return expo


def girsanov_weight(model, Z, Ze, eps, bridge, dW, grid, H, kernels=None,
                    weight="discrete") -> np.ndarray:
    return np.exp(girsanov_log_density(model, Z, Ze, eps, bridge, dW, grid, H, kernels, weight))


def girsanov_check(model: DegenerateModel, z, z_tilde, f: TestFunction, grid: TimeGrid, H: float,
                   eps_list=(0.05, 0.01), N: int = 20000, seed: int = 0,
                   mode: str = "exact", kernels=None, chunk: int = DEFAULT_CHUNK,
                   weight: str = "discrete") -> dict:
    """E R_eps and the finite-eps weak derivative [E R_eps f(Z^eps_T) - E f(Z_T)] / eps.

    Everything is computed on one set of paths, together with the Bismut
    estimate, so the weak derivative and its eps -> 0 limit share noise.
    """
    kernels = _kernels_for(grid, H, kernels)
    spec = SeedSpec(seed)
    z = np.asarray(z, dtype=float)
    z_tilde = np.asarray(z_tilde, dtype=float)
    bridge = build_bridge(model, z_tilde, grid, mode)

    def work(idx):
        nb = noise_batch(kernels, model.d, spec, idx)
        Z = euler_batch(model, z, nb.dBH, grid)
        fz = f(Z[:, -1])
        out = dict(bismut=fz * malliavin_weight(model, Z, bridge, nb.dW, grid, H, kernels=kernels,
                                                weight=weight).M)
        for e in eps_list:
            Ze = coupled_batch(model, Z, z_tilde, e, bridge, nb.dBH, grid)
            R = girsanov_weight(model, Z, Ze, e, bridge, nb.dW, grid, H, kernels, weight)
            out[f"R_{e}"] = R
            out[f"weak_{e}"] = (R * f(Ze[:, -1]) - fz) / e
        return out

    parts = map_chunks(work, N, chunk)
    cat = {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}
    out = dict(bismut=McEstimate.from_samples(cat["bismut"], seed))
    for e in eps_list:
        out[f"R_{e}"] = McEstimate.from_samples(cat[f"R_{e}"], seed)
        out[f"weak_{e}"] = McEstimate.from_samples(cat[f"weak_{e}"], seed)
    return out


def integrand_forms_error(model: DegenerateModel, z, v, grid: TimeGrid, H: float, N: int = 100,
                          seed: int = 0, mode: str = "exact", kernels=None) -> float:
    """Largest pathwise relative sup-norm difference of the expanded and compact integrands."""
    kernels = _kernels_for(grid, H, kernels)
    bridge = build_bridge(model, v, grid, mode)
    nb = noise_batch(kernels, model.d, SeedSpec(seed), range(N))
    Z = euler_batch(model, np.asarray(z, float), nb.dBH, grid)
    th = theta_nodes(model, grid)
    compact = compact_integrand(np.einsum("kij,...kj->...ki", th,
                                          eta_integrand(model, Z, bridge, grid)), grid, H)
    expanded = expanded_integrand(drift_response(model, Z, bridge, grid), bridge.gt_prime, th,
                                  grid, H)
    den = np.maximum(np.abs(compact).max(axis=(-2, -1)), np.finfo(float).tiny)
    return float((np.abs(expanded - compact).max(axis=(-2, -1)) / den).max())
