"""Monte Carlo probes of the Harnack, log-Harnack and gradient-entropy inequalities.

The analytic exponent involves generic constants, so the probes measure the
smallest exponent making each inequality hold for the estimated expectations
(``phi_min``) and, when a constant C is supplied, compare it to the analytic
bound.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bridge import build_bridge, kalman_rank
from .errors import ConfigError
from .fbm import fbm_from_increments, wiener_increments
from .gradient import (DEFAULT_CHUNK, McEstimate, TestFunction, _kernels_for, malliavin_weight,
                       map_chunks, noise_batch)
from .grid import SeedSpec, TimeGrid, holder_seminorm
from .model import DegenerateModel
from .sde import euler_batch


@dataclass(frozen=True)
class HarnackConstants:
    """a(T), a~(T), b(T), b~(T) for a caller-supplied generic constant C."""

    C: float
    T: float
    H: float
    delta: float
    gamma: float
    rho: float
    lam: float
    k0: int
    d1: int

    def __post_init__(self):
        if not self.C > 0 or not self.T > 0:
            raise ConfigError("C and T must be positive")

    @classmethod
    def from_model(cls, model: DegenerateModel, C: float, T: float, H: float):
        k0 = kalman_rank(model.A, model.B)
        if k0 is None:
            raise ConfigError("Kalman rank condition fails; no Harnack constants")
        r = model.regularity
        r.check(H)
        return cls(C, T, H, r.delta, r.gamma, r.rho, r.lambda_for(H), k0, model.d1)

    @property
    def a(self):
        T, d, g, r, k = self.T, self.delta, self.gamma, self.rho, self.k0
        inner = (T ** 2 + 1 + T ** (-2 * (1 - d)) + T ** (-2 * (1 - g)) + T ** (-2 * (1 - r))
                 + T ** (-2 * (2 - d)) + T ** -2 + T ** -4)
        return self.C * T ** (2 - 2 * self.H) * (1 + T ** (2 * d) + T ** (2 * g) + T ** (2 * r)
                                                   + T ** 2 + T ** (-4 * k) * inner)

    @property
    def a_tilde(self):
        T, d = self.T, self.delta
        return self.C * T ** (2 - 2 * self.H) * (1 + T ** (2 * d) + T ** (2 * self.gamma)
                                                   + T ** (2 * self.rho) + T ** 2 + T ** 4
                                                   + T ** (-2 * (1 - d)) + T ** -2)

    @property
    def _b_base(self):
        return self.C * self.T ** (2 * (self.lam * self.gamma - self.H + 1))

    @property
    def b(self):
        return self._b_base * (1 + self.T ** (-2 * (2 * self.k0 + 1)))

    @property
    def b_tilde(self):
        return self._b_base

    def as_dict(self):
        return dict(C=self.C, a=self.a, a_tilde=self.a_tilde, b=self.b, b_tilde=self.b_tilde,
                    k0=self.k0, gamma=self.gamma, lam=self.lam)


def _bracket(dz, p, c: HarnackConstants):
    if c.gamma >= 1:
        raise ConfigError("the exponent gamma/(1-gamma) needs gamma < 1; "
                          "set regularity.gamma below 1 to evaluate the bound")
    if not p > 1:
        raise ConfigError(f"p must exceed 1, got {p}")
    dz = np.asarray(dz, dtype=float)
    dx = float(np.sum(dz[:c.d1] ** 2))
    dy = float(np.sum(dz[c.d1:] ** 2))
    Q = c.b * dx + c.b_tilde * dy
    boost = 1 + max(1.0, p ** 2 / (p - 1) ** 2 * Q) ** (c.gamma / (1 - c.gamma))
    return c.a * dx + c.a_tilde * dy + boost * Q


def phi_bound(z, z_hat, p: float, constants: HarnackConstants) -> float:
    """Analytic Harnack exponent Phi(z, z_hat)."""
    dz = np.asarray(z_hat, float) - np.asarray(z, float)
    br = _bracket(dz, p, constants)
    return p / (p - 1) * br


def log_harnack_bound(z, z_hat, p: float, constants: HarnackConstants) -> float:
    """Bracket of the log-Harnack inequality; p enters only through the boost factor."""
    dz = np.asarray(z_hat, float) - np.asarray(z, float)
    return _bracket(dz, p, constants)


# ---------------------------------------------------------------------------


def terminal_values(model, z, grid, H, seed, idx_range, funcs, kernels=None,
                    chunk=DEFAULT_CHUNK):
    """Per-path values of each callable in ``funcs`` at Z_T, for path indices idx_range."""
    kernels = _kernels_for(grid, H, kernels)
    spec = SeedSpec(seed)
    start = idx_range.start

    def work(r):
        idx = range(start + r.start, start + r.stop)
        nb = noise_batch(kernels, model.d, spec, idx)
        ZT = euler_batch(model, z, nb.dBH, grid)[:, -1]
        return [fn(ZT) for fn in funcs]

    parts = map_chunks(work, len(idx_range), chunk)
    return [np.concatenate([p[i] for p in parts]) for i in range(len(funcs))]


@dataclass
class HarnackReport:
    kind: str
    p: float | None
    z: list
    z_tilde: list
    lhs: McEstimate
    rhs: McEstimate
    phi_min: float
    phi_min_stderr: float
    inconclusive: bool = False
    phi_analytic: float | None = None
    dominated: bool | None = None
    extras: dict = field(default_factory=dict)

    def to_dict(self):
        return dict(kind=self.kind, p=self.p, z=self.z, z_tilde=self.z_tilde,
                    lhs=self.lhs.to_dict(), rhs=self.rhs.to_dict(), phi_min=self.phi_min,
                    phi_min_stderr=self.phi_min_stderr, inconclusive=self.inconclusive,
                    phi_analytic=self.phi_analytic, dominated=self.dominated, **self.extras)


def _check_positive(f: TestFunction, strict: bool):
    if f.name not in ("one_plus_tanh", "constant"):
        raise ConfigError(f"test function {f.name!r} is not positive; use one_plus_tanh or constant")
    if f.name == "constant" and (f.params["value"] <= 0 if strict else f.params["value"] < 0):
        raise ConfigError("constant test function must be positive")


def check_harnack(model: DegenerateModel, z, z_tilde, f: TestFunction, p: float, grid: TimeGrid,
                  H: float, N: int = 20000, seed: int = 0, constants: HarnackConstants | None = None,
                  kernels=None) -> HarnackReport:
    """(P_T f(z))^p <= P_T f^p(z + z~) e^Phi; phi_min = p log P_T f(z) - log P_T f^p(z + z~).

    The two sides use disjoint path index blocks [0, N) and [N, 2N).
    """
    if not p > 1:
        raise ConfigError(f"p must exceed 1, got {p}")
    _check_positive(f, strict=False)
    z = np.asarray(z, float)
    zt = np.asarray(z_tilde, float)
    (fl,) = terminal_values(model, z, grid, H, seed, range(0, N), [f], kernels)
    (fr,) = terminal_values(model, z + zt, grid, H, seed, range(N, 2 * N),
                            [lambda Z: f(Z) ** p], kernels)
    lhs = McEstimate.from_samples(fl, seed)
    rhs = McEstimate.from_samples(fr, seed)
    inconclusive = lhs.mean - 2 * lhs.stderr <= 0 or rhs.mean <= 0
    if inconclusive:
        phi, se = float("nan"), float("nan")
    else:
        phi = p * np.log(lhs.mean) - np.log(rhs.mean)
        se = float(np.hypot(p * lhs.stderr / lhs.mean, rhs.stderr / rhs.mean))
    rep = HarnackReport("harnack", p, z.tolist(), zt.tolist(), lhs, rhs, float(phi), se,
                        inconclusive)
    if constants is not None:
        rep.phi_analytic = phi_bound(z, z + zt, p, constants)
        rep.dominated = bool(not inconclusive and phi <= rep.phi_analytic)
    return rep


def check_log_harnack(model: DegenerateModel, z, z_tilde, f: TestFunction, grid: TimeGrid,
                      H: float, N: int = 20000, seed: int = 0, p: float = 2.0,
                      constants: HarnackConstants | None = None, kernels=None) -> HarnackReport:
    """P_T log f(z) <= log P_T f(z + z~) + bracket.

    ``phi_min`` = P_T log f(z) - log P_T f(z + z~); ``gap`` is its excess over the
    Jensen offset at coincident points, log P_T f(z) - log P_T f(z + z~), which
    tends to 0 with z~.
    """
    _check_positive(f, strict=True)
    z = np.asarray(z, float)
    zt = np.asarray(z_tilde, float)
    logf, fz = terminal_values(model, z, grid, H, seed, range(0, N),
                               [lambda Z: np.log(f(Z)), f], kernels)
    (fr,) = terminal_values(model, z + zt, grid, H, seed, range(N, 2 * N), [f], kernels)
    lhs = McEstimate.from_samples(logf, seed)
    rhs = McEstimate.from_samples(fr, seed)
    pf = McEstimate.from_samples(fz, seed)
    phi = lhs.mean - np.log(rhs.mean)
    se = float(np.hypot(lhs.stderr, rhs.stderr / rhs.mean))
    gap = float(np.log(pf.mean) - np.log(rhs.mean))
    gap_se = float(np.hypot(pf.stderr / pf.mean, rhs.stderr / rhs.mean))
    rep = HarnackReport("log_harnack", p, z.tolist(), zt.tolist(), lhs, rhs, float(phi), se,
                        False, extras=dict(gap=gap, gap_stderr=gap_se,
                                           jensen_offset=float(lhs.mean - np.log(pf.mean))))
    if constants is not None:
        rep.phi_analytic = log_harnack_bound(z, z + zt, p, constants)
        rep.dominated = bool(phi <= rep.phi_analytic)
    return rep


def gradient_entropy_check(model: DegenerateModel, z, v, f: TestFunction, thetas, grid: TimeGrid,
                           H: float, N: int = 20000, seed: int = 0, mode: str = "polynomial",
                           constants: HarnackConstants | None = None, p: float = 2.0,
                           kernels=None) -> dict:
    """|grad_v P_T f| - theta Ent(f) <= bracket / theta * P_T f, for each theta.

    Per theta it reports the smallest admissible bracket ``min_bracket``, the
    two intermediate bounds theta log E exp(M/theta) P_T f and
    (theta/2) log E exp(2<M>/theta^2) P_T f on the same paths, and
    ``qv_bracket`` = (theta^2/2) log E exp(2<M>/theta^2), the bracket the
    quadratic-variation route actually delivers.
    """
    _check_positive(f, strict=True)
    thetas = [float(t) for t in thetas]
    if any(t <= 0 for t in thetas):
        raise ConfigError("theta must be positive")
    kernels = _kernels_for(grid, H, kernels)
    spec = SeedSpec(seed)
    z = np.asarray(z, float)
    bridge = build_bridge(model, v, grid, mode)

    def work(idx):
        nb = noise_batch(kernels, model.d, spec, idx)
        Z = euler_batch(model, z, nb.dBH, grid)
        wb = malliavin_weight(model, Z, bridge, nb.dW, grid, H, kernels=kernels)
        fz = f(Z[:, -1])
        return dict(f=fz, flogf=fz * np.log(fz), fM=fz * wb.M, M=wb.M, qv=wb.qv)

    parts = map_chunks(work, N)
    cat = {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}
    Pf = cat["f"].mean()
    grad = McEstimate.from_samples(cat["fM"], seed)
    ent = float(cat["flogf"].mean() - Pf * np.log(Pf))
    rows = []
    for th in thetas:
        lhs = abs(grad.mean) - th * ent
        young = th * _log_mean_exp(cat["M"] / th) * Pf
        qvb = th / 2 * _log_mean_exp(2 * cat["qv"] / th ** 2) * Pf
        rows.append(dict(theta=th, lhs=float(lhs), young_bound=float(young), qv_bound=float(qvb),
                         min_bracket=float(max(th * lhs / Pf, 0.0)),
                         qv_bracket=float(th * qvb / Pf)))
    out = dict(gradient=grad.to_dict(), entropy=ent, P_T_f=float(Pf), per_theta=rows,
               min_bracket=max(r["min_bracket"] for r in rows))
    if constants is not None:
        out["analytic_bracket"] = _bracket(np.asarray(v, float), p, constants)
    return out


def _log_mean_exp(x):
    m = x.max()
    return float(m + np.log(np.mean(np.exp(x - m))))


def weight_qv_regression(model, z, v, grid, H, lam=None, gamma=1.0, N=2000, seed=0,
                         mode="polynomial", kernels=None) -> dict:
    """Least-squares fit <M>_T ~ c1 + c2 |B^H|_lam^{2 gamma} across paths."""
    kernels = _kernels_for(grid, H, kernels)
    lam = H - 0.05 if lam is None else lam
    bridge = build_bridge(model, v, grid, mode)
    dW = wiener_increments(grid, model.d, SeedSpec(seed), range(N))
    BH = fbm_from_increments(dW, kernels)
    Z = euler_batch(model, z, np.diff(BH, axis=-2), grid)
    qv = malliavin_weight(model, Z, bridge, dW, grid, H, kernels=kernels).qv
    hn, _ = holder_seminorm(BH, grid.dt, lam)
    X = np.column_stack([np.ones(N), hn ** (2 * gamma)])
    (c1, c2), *_ = np.linalg.lstsq(X, qv, rcond=None)
    return dict(c1=float(c1), c2=float(c2), holder_mean=float(hn.mean()), qv_mean=float(qv.mean()))
