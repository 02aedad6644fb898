"""Command line interface: ``fracbismut <subcommand> [flags]``.

Every run writes a manifest (resolved configuration, version, phase timings,
check outcomes, exit status), also when it fails.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import os
import pathlib
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .bridge import MODES, build_bridge
from .checks import operator_checks
from .errors import ConfigError, FracBismutError
from .fbm import covariance_check, sample_fbm_batch
from .fracops import FractionalKernelSet, check_hurst
from .gradient import (METHODS, WORKERS_ENV, estimate_gradient, girsanov_check,
                       integrand_forms_error, make_test_function, pairwise_z)
from .grid import SeedSpec, TimeGrid
from .harnack import HarnackConstants, check_harnack, check_log_harnack
from .model import Regularity, kinetic_model, load_model, nilpotent_model
from .sde import euler_batch

SCHEMA = "fracbismut/1"
COMMANDS = ("check-ops", "sample-fbm", "bridge", "simulate", "gradient", "harnack")
CSV_COMMANDS = ("sample-fbm", "bridge", "simulate")
BUILTIN_MODELS = {
    "kinetic": lambda: kinetic_model("linear"),
    "kinetic_sin": lambda: kinetic_model("sin_perturbed"),
    "kinetic_tanh": lambda: kinetic_model("tanh_saturated"),
    "nilpotent": nilpotent_model,
}
DEFAULT_PATHS = {"sample-fbm": 1000, "simulate": 1000, "harnack": 20000}
DEFAULT_STEPS = {"check-ops": 2048}


@dataclass
class ExperimentConfig:
    command: str
    model: str = "kinetic"
    hurst: float = 0.75
    T: float = 1.0
    steps: int = 256
    paths: int = 50000
    seed: int = 0
    out: str | None = None
    manifest: str | None = None
    format: str = "json"
    fixed_order: bool = False
    diagnostic: bool = False
    z: list | None = None
    v: list | None = None
    ztilde: list | None = None
    f: str = "one_plus_tanh"
    f_index: int = 0
    method: str = "all"
    eps: float = 1e-3
    mode: str = "exact"
    p: float = 2.0
    C: float | None = None
    gamma: float | None = None
    sweep: list | None = None
    girsanov: list | None = None
    reference: float | None = None

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        extra = set(d) - names
        if extra:
            raise ConfigError(f"unknown configuration key(s): {sorted(extra)}")
        if "command" not in d:
            raise ConfigError("configuration needs a 'command'")
        cfg = cls(**d)
        cfg.validate()
        return cfg

    def validate(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"command: unknown {self.command!r}; choose from {COMMANDS}")
        check_hurst(self.hurst, self.diagnostic)
        if not self.T > 0:
            raise ConfigError(f"T: must be positive, got {self.T}")
        if int(self.steps) != self.steps or self.steps < 2:
            raise ConfigError(f"steps: need an integer >= 2, got {self.steps}")
        if int(self.paths) != self.paths or self.paths < 2:
            raise ConfigError(f"paths: need an integer >= 2, got {self.paths}")
        if self.format not in ("json", "csv"):
            raise ConfigError(f"format: json or csv, got {self.format!r}")
        if self.format == "csv" and self.command not in CSV_COMMANDS:
            raise ConfigError(f"format: csv is available for {CSV_COMMANDS} only")
        if self.method not in METHODS + ("all",):
            raise ConfigError(f"method: choose from {METHODS + ('all',)}, got {self.method!r}")
        if self.mode not in MODES:
            raise ConfigError(f"mode: choose from {MODES}, got {self.mode!r}")
        if not self.eps > 0:
            raise ConfigError(f"eps: must be positive, got {self.eps}")
        if not self.p > 1:
            raise ConfigError(f"p: must exceed 1, got {self.p}")
        if self.C is not None and not self.C > 0:
            raise ConfigError(f"C: must be positive, got {self.C}")
        if self.girsanov is not None and any(e <= 0 for e in self.girsanov):
            raise ConfigError("girsanov: eps values must be positive")
        if self.sweep is not None and any(r <= 0 for r in self.sweep):
            raise ConfigError("sweep: scales must be positive")
        if self.command == "harnack" and self.C is not None:
            gamma = self.gamma if self.gamma is not None else resolve_model(self).regularity.gamma
            if gamma >= 1:
                raise ConfigError("gamma: the analytic Harnack exponent needs gamma < 1 "
                                  "(pass --gamma or set regularity.gamma in the model file)")


def resolve_model(cfg: ExperimentConfig):
    if cfg.model in BUILTIN_MODELS:
        model = BUILTIN_MODELS[cfg.model]()
    else:
        model = load_model(cfg.model)
    if cfg.gamma is not None:
        r = model.regularity
        model.regularity = Regularity(r.delta, cfg.gamma, r.rho, r.lam, r.K)
    return model


def _floats(text):
    try:
        return [float(x) for x in text.split(",") if x.strip() != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON or YAML file of configuration keys; flags override")
    common.add_argument("--model", help=f"model file or builtin ({', '.join(BUILTIN_MODELS)})")
    common.add_argument("--hurst", type=float)
    common.add_argument("--T", type=float)
    common.add_argument("--steps", type=int)
    common.add_argument("--paths", type=int)
    common.add_argument("--seed", type=int)
    common.add_argument("--out")
    common.add_argument("--manifest", help="manifest path (default: <out>.manifest.json or stderr)")
    common.add_argument("--format", choices=("json", "csv"))
    common.add_argument("--fixed-order", action="store_true", default=None, dest="fixed_order",
                        help="single worker, no timings in results: byte-identical reruns")
    common.add_argument("--diagnostic", action="store_true", default=None,
                        help="admit H = 1/2 (Brownian reduction)")

    p = argparse.ArgumentParser(prog="fracbismut", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("check-ops", parents=[common], help="operator identity errors")
    sub.add_parser("sample-fbm", parents=[common], help="fBm paths and covariance check")
    b = sub.add_parser("bridge", parents=[common], help="bridge functions and certificate")
    b.add_argument("--v", type=_floats)
    b.add_argument("--mode", choices=MODES)
    s = sub.add_parser("simulate", parents=[common], help="Euler trajectories")
    s.add_argument("--z", type=_floats)
    g = sub.add_parser("gradient", parents=[common], help="gradient estimators")
    g.add_argument("--z", type=_floats)
    g.add_argument("--v", type=_floats)
    g.add_argument("--f")
    g.add_argument("--f-index", type=int, dest="f_index")
    g.add_argument("--method", choices=METHODS + ("all",))
    g.add_argument("--eps", type=float)
    g.add_argument("--mode", choices=MODES)
    g.add_argument("--reference", type=float, help="known gradient; adds a 4-SE check per method")
    g.add_argument("--girsanov", type=_floats,
                   help="eps values for the Girsanov density check, e.g. 0.05,0.01")
    h = sub.add_parser("harnack", parents=[common], help="Harnack and log-Harnack probes")
    h.add_argument("--z", type=_floats)
    h.add_argument("--ztilde", type=_floats, help="direction; pass negative values as --ztilde=-1,0")
    h.add_argument("--f")
    h.add_argument("--f-index", type=int, dest="f_index")
    h.add_argument("--p", type=float)
    h.add_argument("--C", type=float, help="generic constant; enables the analytic exponent")
    h.add_argument("--gamma", type=float, help="override regularity.gamma of the model")
    h.add_argument("--sweep", type=_floats, help="scales applied to --ztilde, e.g. 0.4,0.2,0.1")
    return p


def _read_config_file(path) -> dict:
    path = pathlib.Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} not found")
    text = path.read_text()
    if path.suffix.lower() in (".yaml", ".yml"):
        import yaml

        data = yaml.safe_load(text)
    else:
        try:
            data = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"cannot parse {path}: {e}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path} does not contain a mapping")
    return data


def parse_config(argv=None) -> ExperimentConfig:
    """Flags over file values over per-command defaults."""
    ns = vars(build_parser().parse_args(argv))
    cmd = ns.pop("command")
    file = ns.pop("config", None)
    data = {"command": cmd, "paths": DEFAULT_PATHS.get(cmd, 50000),
            "steps": DEFAULT_STEPS.get(cmd, 256)}
    if file:
        fdata = _read_config_file(file)
        if fdata.get("command", cmd) != cmd:
            raise ConfigError(f"command: file says {fdata['command']!r}, flags say {cmd!r}")
        data.update(fdata)
    data.update({k: v for k, v in ns.items() if v is not None})
    return ExperimentConfig.from_dict(data)


# ---------------------------------------------------------------------------


@dataclass
class RunManifest:
    config: dict
    version: str = __version__
    phases: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)
    status: str = "running"
    exit_code: int | None = None
    error: str | None = None

    def phase(self, name):
        return _Phase(self, name)

    def check(self, name, passed, hard=True, **values):
        self.checks.append(dict(name=name, passed=bool(passed), hard=hard, **values))

    def to_dict(self):
        return dict(schema=SCHEMA, **dataclasses.asdict(self))


class _Phase:
    def __init__(self, manifest, name):
        self.m, self.name = manifest, name

    def __enter__(self):
        self.t0 = time.perf_counter()

    def __exit__(self, *exc):
        self.m.phases[self.name] = self.m.phases.get(self.name, 0.0) + time.perf_counter() - self.t0


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


def dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n"


def _strip_timing(obj):
    if isinstance(obj, dict):
        return {k: _strip_timing(v) for k, v in obj.items() if k != "wall_time"}
    if isinstance(obj, list):
        return [_strip_timing(v) for v in obj]
    return obj


def _vector(x, D, name, default=None):
    if x is None:
        if default is None:
            raise ConfigError(f"{name}: required")
        x = default
    if len(x) != D:
        raise ConfigError(f"{name}: need {D} entries, got {len(x)}")
    return np.asarray(x, dtype=float)


def _grid(cfg):
    return TimeGrid(cfg.T, cfg.steps)


def _kernels(cfg, grid, m):
    with m.phase("kernels"):
        return FractionalKernelSet(grid, cfg.hurst, diagnostic=cfg.diagnostic and cfg.hurst == 0.5)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


# -- subcommands -------------------------------------------------------------


def run_check_ops(cfg, m):
    with m.phase("checks"):
        rep = operator_checks(cfg.hurst, cfg.steps, cfg.T)
    for name, c in rep["checks"].items():
        m.check(name, c["passed"], **{k: v for k, v in c.items() if k != "passed"})
    return rep, None


def run_sample_fbm(cfg, m):
    grid = _grid(cfg)
    k = _kernels(cfg, grid, m)
    with m.phase("sample"):
        W, BH = sample_fbm_batch(k, 1, SeedSpec(cfg.seed), range(cfg.paths))
    times = [grid.nodes[grid.index_of(round(a * grid.n) * grid.dt)] for a in (0.25, 0.5, 0.75, 1.0)]
    with m.phase("covariance"):
        rows = covariance_check(BH, grid, cfg.hurst, times)
    worst = max(abs(r["z"]) for r in rows)
    m.check("covariance_within_4se", worst <= 4, hard=False, max_abs_z=worst)
    summary = dict(H=cfg.hurst, n=cfg.steps, T=cfg.T, N=cfg.paths, seed=cfg.seed,
                   covariance=rows, max_abs_z=worst)
    table = None
    if cfg.format == "csv":
        t = grid.nodes
        table = (["path_index", "node_index", "t", "coordinate", "value"],
                 [(i, j, repr(float(t[j])), 0, repr(float(BH[i, j, 0])))
                  for i in range(cfg.paths) for j in range(grid.n + 1)])
    return summary, table


def run_bridge(cfg, m):
    model = resolve_model(cfg)
    grid = _grid(cfg)
    v = _vector(cfg.v, model.d1 + model.d2, "v")
    with m.phase("bridge"):
        br = build_bridge(model, v, grid, cfg.mode)
    cert = br.certificate
    m.check("g_T_residual", cert["g_T_residual"] <= cert["g_T_tolerance"],
            residual=cert["g_T_residual"], tol=cert["g_T_tolerance"])
    m.check("gramian_positive", cert["gramian_eig_min"] > 0, eig_min=cert["gramian_eig_min"])
    table = None
    if cfg.format == "csv":
        t = grid.nodes
        header = (["t"] + [f"g{i}" for i in range(model.d1)] + [f"gt{i}" for i in range(model.d2)]
                  + [f"gt_prime{i}" for i in range(model.d2)] + ["alpha1", "alpha2"])
        a1, a2 = br.alpha1, br.alpha2
        table = (header, [[repr(float(x)) for x in
                           [t[j], *br.g[j], *br.gt[j], *br.gt_prime[j], a1[j], a2[j]]]
                          for j in range(grid.n + 1)])
    return dict(certificate=cert, model=model.to_dict(), v=v.tolist(), T=cfg.T, n=cfg.steps), table


def run_simulate(cfg, m):
    model = resolve_model(cfg)
    grid = _grid(cfg)
    z = _vector(cfg.z, model.d1 + model.d2, "z", [0.0] * (model.d1 + model.d2))
    k = _kernels(cfg, grid, m)
    with m.phase("simulate"):
        _, BH = sample_fbm_batch(k, model.d, SeedSpec(cfg.seed), range(cfg.paths))
        Z = euler_batch(model, z, np.diff(BH, axis=-2), grid)
    mean, var = Z.mean(axis=0), Z.var(axis=0, ddof=1)
    summary = dict(model=model.to_dict(), z=z.tolist(), H=cfg.hurst, T=cfg.T, n=cfg.steps,
                   N=cfg.paths, seed=cfg.seed, terminal_mean=mean[-1].tolist(),
                   terminal_var=var[-1].tolist(),
                   terminal_mean_stderr=np.sqrt(var[-1] / cfg.paths).tolist())
    table = None
    if cfg.format == "csv":
        t = grid.nodes
        D = Z.shape[-1]
        table = (["path_index", "node_index", "t", "coordinate", "value"],
                 [(i, j, repr(float(t[j])), c, repr(float(Z[i, j, c])))
                  for i in range(cfg.paths) for j in range(grid.n + 1) for c in range(D)])
    return summary, table


def run_gradient(cfg, m):
    model = resolve_model(cfg)
    grid = _grid(cfg)
    D = model.d1 + model.d2
    z = _vector(cfg.z, D, "z", [0.0] * D)
    v = _vector(cfg.v, D, "v")
    f = make_test_function(cfg.f, D, cfg.f_index)
    k = _kernels(cfg, grid, m)
    methods = METHODS if cfg.method == "all" else (cfg.method,)
    with m.phase("estimate"):
        res = estimate_gradient(model, z, v, f, grid, cfg.hurst, cfg.paths, cfg.seed, methods,
                                eps=cfg.eps, mode=cfg.mode, kernels=k,
                                term_variances="bismut" in methods)
    ests = [dict(method=name, n=cfg.steps, H=cfg.hurst, T=cfg.T, **e.to_dict())
            for name, e in res.items()]
    out = dict(estimates=ests)
    if "bismut" in res:
        b = res["bismut"]
        zw = abs(b.extras["mean_weight"]) / b.extras["mean_weight_stderr"]
        m.check("mean_weight_within_4se", zw <= 4, hard=False, z=zw)
        with m.phase("integrand_forms"):
            err = integrand_forms_error(model, z, v, grid, cfg.hurst, min(100, cfg.paths),
                                        cfg.seed, cfg.mode, k)
        out["integrand_forms_error"] = err
        m.check("integrand_forms_1e-6", err <= 1e-6, error=err)
    if len(res) > 1:
        pz = pairwise_z(res)
        out["pairwise_z"] = pz
        m.check("pairwise_within_3se", max(pz.values()) <= 3, hard=False, max_z=max(pz.values()))
    if cfg.reference is not None:
        zr = {name: abs(e.mean - cfg.reference) / e.stderr if e.stderr > 0
              else float(e.mean != cfg.reference) * np.inf for name, e in res.items()}
        out["reference_z"] = zr
        m.check("reference_within_4se", max(zr.values()) <= 4, hard=False, z=zr)
    if cfg.girsanov:
        with m.phase("girsanov"):
            gr = girsanov_check(model, z, v, f, grid, cfg.hurst, tuple(cfg.girsanov), cfg.paths,
                                cfg.seed, cfg.mode, k)
        b = gr["bismut"]
        rows = []
        for e in cfg.girsanov:
            R, w = gr[f"R_{e}"], gr[f"weak_{e}"]
            zR = abs(R.mean - 1.0) / R.stderr if R.stderr > 0 else 0.0
            gap = abs(w.mean - b.mean)
            tol = 3 * float(np.hypot(w.stderr, b.stderr)) + 10 * e
            rows.append(dict(eps=e, R=R.to_dict(), weak_derivative=w.to_dict(), R_z=zR,
                             weak_gap=gap, weak_tol=tol))
            m.check(f"girsanov_R_{e}", zR <= 4, hard=False, z=zR)
            m.check(f"girsanov_weak_{e}", gap <= tol, hard=False, gap=gap, tol=tol)
        out["girsanov"] = dict(bismut=b.to_dict(), rows=rows)
    return out, None


def run_harnack(cfg, m):
    model = resolve_model(cfg)
    grid = _grid(cfg)
    D = model.d1 + model.d2
    z = _vector(cfg.z, D, "z", [0.0] * D)
    zt = _vector(cfg.ztilde, D, "ztilde", [-1.0] + [0.0] * (D - 1))
    f = make_test_function(cfg.f, D, cfg.f_index)
    k = _kernels(cfg, grid, m)
    consts = HarnackConstants.from_model(model, cfg.C, cfg.T, cfg.hurst) if cfg.C else None
    scales = [0.0] + list(cfg.sweep if cfg.sweep is not None else [1.0])
    rows = []
    with m.phase("estimate"):
        for r in scales:
            hr = check_harnack(model, z, r * zt, f, cfg.p, grid, cfg.hurst, cfg.paths, cfg.seed,
                               consts, kernels=k)
            lh = check_log_harnack(model, z, r * zt, f, grid, cfg.hurst, cfg.paths, cfg.seed,
                                   cfg.p, consts, kernels=k)
            rows.append(dict(scale=r, harnack=hr.to_dict(), log_harnack=lh.to_dict()))
    h0, l0 = rows[0]["harnack"], rows[0]["log_harnack"]
    m.check("jensen_floor_harnack", h0["phi_min"] <= 3 * h0["phi_min_stderr"], hard=False)
    m.check("jensen_floor_log_harnack", l0["phi_min"] <= 3 * l0["phi_min_stderr"], hard=False)
    out = dict(p=cfg.p, z=z.tolist(), ztilde=zt.tolist(), sweep=rows,
               constants=consts.as_dict() if consts else None)
    return out, None


RUNNERS = {"check-ops": run_check_ops, "sample-fbm": run_sample_fbm, "bridge": run_bridge,
           "simulate": run_simulate, "gradient": run_gradient, "harnack": run_harnack}


def run_experiment(cfg: ExperimentConfig, stdout=None, stderr=None) -> int:
    """Dispatch, write outputs and the manifest; return the exit status."""
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    m = RunManifest(cfg.to_dict())
    saved = os.environ.get(WORKERS_ENV)
    if cfg.fixed_order:
        os.environ[WORKERS_ENV] = "1"
    try:
        cfg.validate()
        result, table = RUNNERS[cfg.command](cfg, m)
        result = dict(schema=SCHEMA, command=cfg.command, **result)
        if cfg.fixed_order:
            result = _strip_timing(result)
        with m.phase("write"):
            _write_outputs(cfg, result, table, stdout)
        failed = [c["name"] for c in m.checks if c["hard"] and not c["passed"]]
        m.exit_code = 1 if failed else 0
        m.status = "failed" if failed else "ok"
        if failed:
            m.error = "hard checks failed: " + ", ".join(failed)
    except FracBismutError as e:
        m.status, m.exit_code, m.error = "error", e.exit_code, f"{type(e).__name__}: {e}"
        print(f"fracbismut: {m.error}", file=stderr)
    finally:
        if cfg.fixed_order:
            if saved is None:
                os.environ.pop(WORKERS_ENV, None)
            else:
                os.environ[WORKERS_ENV] = saved
        _write_manifest(cfg, m, stderr)
    return m.exit_code


def _write_outputs(cfg, result, table, stdout):
    text = dumps(result)
    if cfg.out is None:
        stdout.write(text)
        return
    out = pathlib.Path(cfg.out)
    if table is not None:
        out.write_text(_csv_text(*table))
        out.with_suffix(".summary.json").write_text(text)
    else:
        out.write_text(text)


def _manifest_path(cfg):
    if cfg.manifest:
        return pathlib.Path(cfg.manifest)
    if cfg.out:
        return pathlib.Path(cfg.out).with_suffix(".manifest.json")
    return None


def _write_manifest(cfg, m, stderr):
    text = dumps(m.to_dict())
    path = _manifest_path(cfg)
    if path is None:
        stderr.write(text)
    else:
        path.write_text(text)


def main(argv=None) -> int:
    try:
        cfg = parse_config(argv)
    except FracBismutError as e:
        print(f"fracbismut: {type(e).__name__}: {e}", file=sys.stderr)
        partial = RunManifest(dict(argv=list(sys.argv[1:] if argv is None else argv)),
                              status="error", exit_code=e.exit_code, error=str(e))
        sys.stderr.write(dumps(partial.to_dict()))
        return e.exit_code
    return run_experiment(cfg)


if __name__ == "__main__":
    sys.exit(main())
