"""The degenerate system dX = (AX + BY)dt, dY = b(t, X, Y)dt + sigma(t)dB^H.

Drifts and diffusion coefficients come from small catalogs whose gradients
are written out in closed form, so pathwise derivatives and Malliavin weights
never rely on numerical differentiation.
"""

from __future__ import annotations

import json
import pathlib
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

# ---------------------------------------------------------------------------
# drift catalog


def _mat(x, shape, name):
    a = np.asarray(x, dtype=float)
    if a.ndim == 1 and len(shape) == 2 and shape[0] * shape[1] == a.size:
        a = a.reshape(shape)
    if a.shape != tuple(shape):
        raise ConfigError(f"{name} must have shape {shape}, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ConfigError(f"{name} must be finite")
    return a


class Drift:
    """b(t, x, y) -> R^{d2}, batched over leading axes of x and y."""

    name = "drift"

    def __init__(self, d1: int, d2: int):
        self.d1, self.d2 = d1, d2

    def value(self, t, x, y):
        raise NotImplementedError

    def grad(self, t, x, y):
        """(grad_x, grad_y) of shapes (..., d2, d1) and (..., d2, d2)."""
        raise NotImplementedError

    def lipschitz(self) -> float:
        raise NotImplementedError

    def params(self) -> dict:
        raise NotImplementedError


class LinearDrift(Drift):
    """b = Gx x + Gy y + c."""

    name = "linear"

    def __init__(self, d1, d2, Gx=None, Gy=None, c=None):
        super().__init__(d1, d2)
        self.Gx = _mat(np.zeros((d2, d1)) if Gx is None else Gx, (d2, d1), "Gx")
        self.Gy = _mat(-np.eye(d2) if Gy is None else Gy, (d2, d2), "Gy")
        self.c = _mat(np.zeros(d2) if c is None else c, (d2,), "c")

    def _lin(self, x, y):
        return x @ self.Gx.T + y @ self.Gy.T + self.c

    def value(self, t, x, y):
        return self._lin(np.asarray(x, float), np.asarray(y, float))

    def grad(self, t, x, y):
        lead = np.broadcast_shapes(np.shape(x)[:-1], np.shape(y)[:-1])
        return (np.broadcast_to(self.Gx, lead + self.Gx.shape),
                np.broadcast_to(self.Gy, lead + self.Gy.shape))

    def lipschitz(self):
        return float(np.linalg.norm(np.hstack([self.Gx, self.Gy]), 2))

    def params(self):
        return dict(Gx=self.Gx.tolist(), Gy=self.Gy.tolist(), c=self.c.tolist())


class _SmoothPerturbed(LinearDrift):
    """b = Gx x + Gy y + c + amp * phi(P x + Q y) with a bounded smooth phi."""

    def __init__(self, d1, d2, Gx=None, Gy=None, c=None, amp=0.3, P=None, Q=None):
        super().__init__(d1, d2, Gx, Gy, c)
        self.amp = float(amp)
        if P is None:
            P = np.eye(d2, d1)
        self.P = _mat(P, (d2, d1), "P")
        self.Q = _mat(np.zeros((d2, d2)) if Q is None else Q, (d2, d2), "Q")

    def _arg(self, x, y):
        return x @ self.P.T + y @ self.Q.T

    def value(self, t, x, y):
        x, y = np.asarray(x, float), np.asarray(y, float)
        return self._lin(x, y) + self.amp * self._phi(self._arg(x, y))

    def grad(self, t, x, y):
        x, y = np.asarray(x, float), np.asarray(y, float)
        dphi = self.amp * self._dphi(self._arg(x, y))[..., :, None]
        return self.Gx + dphi * self.P, self.Gy + dphi * self.Q

    def lipschitz(self):
        base = np.hstack([self.Gx, self.Gy])
        pert = abs(self.amp) * np.linalg.norm(np.hstack([self.P, self.Q]), 2)
        return float(np.linalg.norm(base, 2) + pert)

    def params(self):
        return dict(super().params(), amp=self.amp, P=self.P.tolist(), Q=self.Q.tolist())


class SinPerturbedDrift(_SmoothPerturbed):
    name = "sin_perturbed"
    _phi = staticmethod(np.sin)
    _dphi = staticmethod(np.cos)


class TanhSaturatedDrift(_SmoothPerturbed):
    name = "tanh_saturated"
    _phi = staticmethod(np.tanh)

    @staticmethod
    def _dphi(u):
        return 1.0 / np.cosh(u) ** 2


DRIFTS = {c.name: c for c in (LinearDrift, SinPerturbedDrift, TanhSaturatedDrift)}

# ---------------------------------------------------------------------------
# diffusion catalog


class Sigma:
    """Deterministic sigma(t) = S0 + t S1, shape (d2, d)."""

    def __init__(self, d2, d, S0=None, S1=None, name="constant"):
        self.d2, self.d = d2, d
        self.name = name
        self.S0 = _mat(np.eye(d2, d) if S0 is None else S0, (d2, d), "sigma S0")
        self.S1 = _mat(np.zeros((d2, d)) if S1 is None else S1, (d2, d), "sigma S1")

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        return self.S0 + t[..., None, None] * self.S1

    @property
    def is_constant(self):
        return not np.any(self.S1)

    def theta(self, t):
        """sigma^* (sigma sigma^*)^{-1} at times t, shape (..., d, d2)."""
        s = self(t)
        st = np.swapaxes(s, -1, -2)
        return st @ np.linalg.inv(s @ st)

    def params(self):
        out = dict(S0=self.S0.tolist())
        if self.name == "affine_time":
            out["S1"] = self.S1.tolist()
        return out


def make_sigma(d2, d, name="constant", **params):
    if name == "constant":
        return Sigma(d2, d, params.get("S0", params.get("value")), None, "constant")
    if name == "affine_time":
        return Sigma(d2, d, params.get("S0"), params.get("S1"), "affine_time")
    raise ConfigError(f"unknown sigma {name!r}; catalog: constant, affine_time")


# ---------------------------------------------------------------------------


@dataclass
class Regularity:
    """Hölder data of the coefficients, used by the regularity checks and bounds."""

    delta: float = 1.0  # sigma theta Hölder order
    gamma: float = 1.0  # spatial Hölder order of grad b
    rho: float = 1.0  # temporal Hölder order of grad b
    lam: float | None = None  # analysis exponent; default H - 0.05
    K: float | None = None

    def check(self, H: float):
        bad = []
        if not (max(1 - H, H - 0.5) < self.delta <= 1):
            bad.append(f"delta={self.delta} not in ({max(1 - H, H - 0.5):g}, 1]")
        if not (1 - 1 / (2 * H) < self.gamma <= 1):
            bad.append(f"gamma={self.gamma} not in ({1 - 1 / (2 * H):g}, 1]")
        if not (H - 0.5 < self.rho <= 1):
            bad.append(f"rho={self.rho} not in ({H - 0.5:g}, 1]")
        lam = self.lambda_for(H)
        if not (1 - self.delta < lam < H):
            bad.append(f"lambda={lam} not in ({1 - self.delta:g}, {H:g})")
        if not lam * self.gamma > H - 0.5:
            bad.append(f"lambda*gamma={lam * self.gamma:g} <= H-1/2")
        if bad:
            raise ConfigError("regularity data inadmissible: " + "; ".join(bad))

    def lambda_for(self, H):
        return H - 0.05 if self.lam is None else self.lam


@dataclass
class DegenerateModel:
    A: np.ndarray
    B: np.ndarray
    drift: Drift
    sigma: Sigma
    regularity: Regularity = field(default_factory=Regularity)

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        d1 = self.A.shape[0]
        if self.A.shape != (d1, d1):
            raise ConfigError(f"A must be square, got {self.A.shape}")
        self.B = _mat(self.B, (d1, self.drift.d2), "B")
        if self.drift.d1 != d1:
            raise ConfigError("drift d1 does not match A")
        if self.sigma.d2 != self.drift.d2:
            raise ConfigError("sigma rows do not match d2")

    @property
    def d1(self):
        return self.A.shape[0]

    @property
    def d2(self):
        return self.B.shape[1]

    @property
    def d(self):
        return self.sigma.d

    def check_sigma(self, nodes, cond_max=1e12):
        """sigma sigma^* must be invertible with bounded inverse on the nodes."""
        s = self.sigma(nodes)
        ss = s @ np.swapaxes(s, -1, -2)
        c = np.linalg.cond(ss)
        if not np.all(np.isfinite(c)) or c.max() > cond_max:
            raise ConfigError(f"sigma sigma^* not invertible on the grid (cond {np.max(c):.3g})")
        return float(np.max(np.linalg.norm(np.linalg.inv(ss), 2, axis=(-2, -1))))

    def split(self, z):
        z = np.asarray(z, dtype=float)
        return z[..., :self.d1], z[..., self.d1:]

    def to_dict(self):
        return dict(d1=self.d1, d2=self.d2, d=self.d, A=self.A.tolist(), B=self.B.tolist(),
                    drift=dict(name=self.drift.name, **self.drift.params()),
                    sigma=dict(name=self.sigma.name, **self.sigma.params()),
                    regularity=dict(delta=self.regularity.delta, gamma=self.regularity.gamma,
                                    rho=self.regularity.rho, lam=self.regularity.lam))


def model_from_dict(cfg: dict) -> DegenerateModel:
    known = {"d1", "d2", "d", "A", "B", "drift", "sigma", "regularity", "name", "description"}
    extra = set(cfg) - known
    if extra:
        raise ConfigError(f"unknown model keys: {sorted(extra)}")
    try:
        d1, d2 = int(cfg["d1"]), int(cfg["d2"])
        d = int(cfg.get("d", d2))
        A = _mat(cfg["A"], (d1, d1), "A")
        B = _mat(cfg["B"], (d1, d2), "B")
    except KeyError as e:
        raise ConfigError(f"model is missing key {e}") from None
    dcfg = dict(cfg.get("drift", {"name": "linear"}))
    name = dcfg.pop("name", "linear")
    if name not in DRIFTS:
        raise ConfigError(f"unknown drift {name!r}; catalog: {sorted(DRIFTS)}")
    try:
        drift = DRIFTS[name](d1, d2, **dcfg)
    except TypeError as e:
        raise ConfigError(f"bad drift parameters: {e}") from None
    scfg = dict(cfg.get("sigma", {"name": "constant"}))
    sigma = make_sigma(d2, d, scfg.pop("name", "constant"), **scfg)
    rcfg = cfg.get("regularity", {}) or {}
    try:
        reg = Regularity(**rcfg)
    except TypeError as e:
        raise ConfigError(f"bad regularity data: {e}") from None
    return DegenerateModel(A, B, drift, sigma, reg)


def load_model(path) -> DegenerateModel:
    path = pathlib.Path(path)
    if not path.exists():
        raise ConfigError(f"model file {path} not found")
    text = path.read_text()
    if path.suffix.lower() in (".yaml", ".yml"):
        import yaml

        cfg = yaml.safe_load(text)
    else:
        try:
            cfg = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"cannot parse {path}: {e}") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path} does not contain a mapping")
    return model_from_dict(cfg)


# ready-made models used by tests, examples and the acceptance suite

def kinetic_model(drift="linear", amp=0.3, sigma=1.0) -> DegenerateModel:
    """Scalar kinetic model: A = 0, B = 1, b = -y (+ perturbation)."""
    if drift == "linear":
        dr = LinearDrift(1, 1, Gx=[[0.0]], Gy=[[-1.0]])
    elif drift in ("sin_perturbed", "tanh_saturated"):
        dr = DRIFTS[drift](1, 1, Gx=[[0.0]], Gy=[[-1.0]], amp=amp)
    else:
        raise ConfigError(f"unknown drift {drift!r}")
    return DegenerateModel(np.zeros((1, 1)), np.ones((1, 1)), dr, Sigma(1, 1, [[sigma]]))


def nilpotent_model() -> DegenerateModel:
    """d1 = 2 chain: A = [[0,1],[0,0]], B = (0,1)^T, scalar Y."""
    return DegenerateModel(np.array([[0.0, 1.0], [0.0, 0.0]]), np.array([[0.0], [1.0]]),
                           LinearDrift(2, 1, Gx=[[0.0, 0.0]], Gy=[[-1.0]]), Sigma(1, 1))
