"""Operator identity checks with measured errors, shared by the CLI and the tests."""

from __future__ import annotations

import numpy as np
from scipy import special

from .fbm import covariance_RH
from .fracops import FractionalKernelSet, rl_integral_left, weyl_derivative_left
from .grid import TimeGrid

PROBE_FRACTIONS = (0.125, 0.25, 0.5, 0.75, 1.0)
CUTOFF = 0.05


def _rel_l2(err, ref, mask):
    return float(np.sqrt(np.sum(err[mask] ** 2) / np.sum(ref[mask] ** 2)))


def roundtrip_error(kernels: FractionalKernelSet, f=None, cutoff: float = CUTOFF) -> float:
    """Relative L2([cutoff T, T]) error of K^{-1}((K f)') against f; default f(t) = t^2."""
    g = kernels.grid
    x = g.nodes
    fx = x ** 2 if f is None else np.asarray(f(x), float)
    hp = np.gradient(kernels.apply_KH(fx), g.dt, edge_order=2)
    u = kernels.apply_KH_inverse(hp)
    return _rel_l2(u - fx, fx, x >= cutoff * g.T)


def _lattice(grid, fractions):
    return [grid.nodes[grid.index_of(round(a * grid.T / grid.dt) * grid.dt)] for a in fractions]


def covariance_identity_errors(kernels: FractionalKernelSet, fractions=PROBE_FRACTIONS) -> dict:
    """|int K(t,r)K(s,r)dr - R(t,s)| / R(t v s, t v s) on the (t, s) lattice."""
    g, H = kernels.grid, kernels.H
    out = {}
    for t in _lattice(g, fractions):
        for s in _lattice(g, fractions):
            ref = covariance_RH(max(t, s), max(t, s), H)
            out[(t, s)] = abs(kernels.kernel_covariance(t, s) - covariance_RH(t, s, H)) / ref
    return out


def indicator(grid: TimeGrid, t: float) -> np.ndarray:
    """Node samples of 1_[0,t) read as left-point piecewise constant."""
    return (np.arange(grid.n + 1) < grid.index_of(t)).astype(float)


def isometry_errors(kernels: FractionalKernelSet, fractions=PROBE_FRACTIONS) -> dict:
    """|<K* 1_[0,t), K* 1_[0,s)> - R(t,s)| / R(t v s, t v s) on the (t, s) lattice."""
    g, H = kernels.grid, kernels.H
    lat = _lattice(g, fractions)
    star = {t: kernels.apply_KH_star(indicator(g, t)) for t in lat}
    out = {}
    for t in lat:
        for s in lat:
            ref = covariance_RH(max(t, s), max(t, s), H)
            out[(t, s)] = abs(float(kernels.l2_inner(star[t], star[s]))
                              - covariance_RH(t, s, H)) / ref
    return out


def semigroup_error(grid: TimeGrid, a: float, b: float, f=None) -> float:
    """max |I^a I^b f - I^{a+b} f| on the nodes; default f(x) = x cos x."""
    x = grid.nodes
    fx = x * np.cos(x) if f is None else np.asarray(f(x), float)
    lhs = rl_integral_left(rl_integral_left(fx, b, grid), a, grid)
    return float(np.max(np.abs(lhs - rl_integral_left(fx, a + b, grid))))


def power_law_error(grid: TimeGrid, alpha: float) -> float:
    """max |I^alpha 1 - x^alpha / Gamma(1+alpha)| on the nodes (exact for product integration)."""
    x = grid.nodes
    exact = x ** alpha / special.gamma(1 + alpha)
    return float(np.max(np.abs(rl_integral_left(np.ones_like(x), alpha, grid) - exact)))


def derivative_inverse_error(grid: TimeGrid, alpha: float, cutoff: float = CUTOFF) -> float:
    """Relative L2([cutoff T, T]) error of D^alpha I^alpha f against f for f(x) = x^2."""
    x = grid.nodes
    f = x ** 2
    d = weyl_derivative_left(rl_integral_left(f, alpha, grid), alpha, grid)
    return _rel_l2(d - f, f, x >= cutoff * grid.T)


def brownian_reduction_error(grid: TimeGrid) -> float:
    """Largest deviation of the H = 1/2 operators from their classical counterparts.

    K is the integral of the piecewise-linear interpolant, K* the restriction
    to [0, T), K^{-1} the identity on h' and the fBm weights those of W.
    """
    k = FractionalKernelSet(grid, 0.5, diagnostic=True)
    x = grid.nodes
    f = np.cos(3 * x)
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (f[1:] + f[:-1])) * grid.dt])
    errs = [np.max(np.abs(k.apply_KH_inverse(f) - f)),
            np.max(np.abs(k.apply_KH_star(f) - np.where(np.arange(grid.n + 1) < grid.n, f, 0.0))),
            np.max(np.abs(k.apply_KH(f) - cum)),
            np.max(np.abs(k.fbm_weights - np.tri(grid.n + 1, grid.n, -1)))]
    return float(max(errs))


def operator_checks(H: float, n: int = 2048, T: float = 1.0, tol: float = 1e-2) -> dict:
    """Run every operator identity and report measured errors with pass flags."""
    grid = TimeGrid(T, n)
    k = FractionalKernelSet(grid, H, diagnostic=(H == 0.5))
    half = TimeGrid(T, n // 2)
    kh = FractionalKernelSet(half, H, diagnostic=(H == 0.5))
    rt, rt_half = roundtrip_error(k), roundtrip_error(kh)
    cov = max(covariance_identity_errors(k).values())
    iso = max(isometry_errors(k).values())
    semi = max(semigroup_error(grid, a, b) for a in (0.2, 0.3, 0.5) for b in (0.2, 0.3, 0.5)
               if a + b < 1)
    pw = power_law_error(grid, 0.5)
    dinv = derivative_inverse_error(grid, 0.4)
    bro = brownian_reduction_error(grid)
    checks = {
        "roundtrip": dict(error=rt, tol=tol, passed=rt <= tol),
        "roundtrip_refinement": dict(ratio=rt / rt_half if rt_half > 0 else 0.0, tol=0.75,
                                     passed=(rt_half == 0 or rt / rt_half <= 0.75)),
        "covariance_identity": dict(error=cov, tol=tol, passed=cov <= tol),
        "isometry": dict(error=iso, tol=tol, passed=iso <= tol),
        "semigroup": dict(error=semi, tol=1e-6, passed=semi <= 1e-6),
        "power_law": dict(error=pw, tol=1e-12, passed=pw <= 1e-12),
        "derivative_inverse": dict(error=dinv, tol=tol, passed=dinv <= tol),
        "brownian_reduction": dict(error=bro, tol=1e-12, passed=bro <= 1e-12),
    }
    return dict(H=H, n=n, T=T, checks=checks, passed=all(c["passed"] for c in checks.values()))
