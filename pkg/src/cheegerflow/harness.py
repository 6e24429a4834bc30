"""
Instance generators and experiment orchestration.

An experiment is described by a JSON config::

    {
      "space": "two_point.json" | {"generator": {"kind": "path", "size": 3}}
               | {"pgm": "image.pgm"} | {<inline space dict>},
      "u0": [1, -1] | {"csv": "u0.csv"} | {"random": "normal", "mean_zero": true},
      "flow": {"p": 1, "tau": 0.001, "t_final": 1.5},
      "tasks": ["flow", "verify-asymptotics"],
      "out": "results",
      "seed": 7
    }

Relative paths are resolved against the config file's directory. Every
floating-point number written is printed with 17 significant digits, and
no output depends on wall-clock time, so a fixed config and seed give
byte-identical artifacts.
"""

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import asymptotics, flow, io, pairing
from .functionals import energy, field_sup_norm
from .resolvent import ResolventError, resolvent_step
from .space import FinslerGridSpace, WeightedGraphSpace

log = logging.getLogger(__name__)

TASKS = ("flow", "resolvent", "lambda1", "verify-certificates", "verify-asymptotics",
         "verify-pairing", "denoise")
KINDS = ("path", "cycle", "star", "random-geometric", "grid")

EXIT_OK, EXIT_VERIFY, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2, 3


class ConfigError(ValueError):
    """Malformed or inconsistent experiment configuration (exit status 2)."""


# -- generators ---------------------------------------------------------------

@dataclass
class GeneratorSpec:
    """Deterministic instance family.

    ``weight_law`` and ``measure_law`` are ``"unit"`` or ``"uniform"``
    (i.i.d. on ``[0.5, 1.5]``). Random-geometric graphs place ``size`` points
    uniformly in the unit square and join pairs with
    ``w = exp(-dist^2 / sigma^2) >= threshold``; under ``"uniform"`` that
    weight is further multiplied by the random factor.
    """

    kind: str
    size: int
    weight_law: str = "unit"
    measure_law: str = "unit"
    sigma: float = 0.25
    threshold: float = float(np.exp(-4.0))
    alpha: float = 2.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown generator kind {self.kind!r}")
        if int(self.size) < 1:
            raise ConfigError("generator size must be positive")
        self.size = int(self.size)
        for law in (self.weight_law, self.measure_law):
            if law not in ("unit", "uniform"):
                raise ConfigError(f"unknown law {law!r}")


def _law(rng, law, n):
    return np.ones(n) if law == "unit" else rng.uniform(0.5, 1.5, n)


def generate(spec, seed=0):
    """Build the space described by ``spec``; the same seed gives the same space."""
    if isinstance(spec, dict):
        spec = GeneratorSpec(**spec)
    rng = np.random.default_rng(seed)
    n = spec.size
    if spec.kind == "grid":
        omega = _law(rng, spec.measure_law, n * n).reshape(n, n)
        return FinslerGridSpace((n, n), h=1.0 / n, omega=omega, alpha=spec.alpha)
    if spec.kind == "path":
        edges = [(i, i + 1) for i in range(n - 1)]
    elif spec.kind == "cycle":
        edges = [(i, i + 1) for i in range(n - 1)] + ([(0, n - 1)] if n > 2 else [])
    elif spec.kind == "star":
        edges = [(0, i) for i in range(1, n)]
    else:
        pts = rng.uniform(0.0, 1.0, (n, 2))
        i, j = np.triu_indices(n, 1)
        w = np.exp(-np.sum((pts[i] - pts[j]) ** 2, axis=1) / spec.sigma**2)
        keep = w >= spec.threshold
        edges = list(zip(i[keep].tolist(), j[keep].tolist()))
        base = w[keep]
        weights = base * _law(rng, spec.weight_law, base.size)
        nu = _law(rng, spec.measure_law, n)
        return WeightedGraphSpace(nu, np.array(edges, dtype=int).reshape(-1, 2), weights)
    weights = _law(rng, spec.weight_law, len(edges))
    nu = _law(rng, spec.measure_law, n)
    return WeightedGraphSpace(nu, np.array(edges, dtype=int).reshape(-1, 2), weights)


def is_connected(space):
    return bool(space.components().max() == 0)


# -- config -------------------------------------------------------------------

@dataclass
class ExperimentConfig:
    space: object
    tasks: list
    flow: dict = field(default_factory=dict)
    u0: object = None
    out: str = "out"
    seed: int = 0
    options: dict = field(default_factory=dict)
    base: str = "."

    def __post_init__(self):
        if not isinstance(self.tasks, (list, tuple)) or not self.tasks:
            raise ConfigError("tasks must be a nonempty list")
        bad = [t for t in self.tasks if t not in TASKS]
        if bad:
            raise ConfigError(f"unknown tasks {bad}; choose from {list(TASKS)}")
        try:
            self.seed = int(self.seed)
        except (TypeError, ValueError):
            raise ConfigError("seed must be an integer") from None
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        try:
            self.flow_config()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid flow settings: {exc}") from None

    def flow_config(self):
        return flow.FlowConfig(**self.flow)

    @classmethod
    def from_dict(cls, data, base="."):
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        known = {"space", "tasks", "flow", "u0", "out", "seed"}
        if "space" not in data:
            raise ConfigError("config needs a 'space' entry")
        options = {k: v for k, v in data.items() if k not in known}
        return cls(
            space=data["space"], tasks=data.get("tasks"), flow=dict(data.get("flow", {})),
            u0=data.get("u0"), out=data.get("out", "out"), seed=data.get("seed", 0),
            options=options, base=str(base),
        )

    @classmethod
    def load(cls, path):
        path = Path(path)
        try:
            data = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        return cls.from_dict(data, base=path.parent)


def _resolve(cfg, p):
    p = Path(p)
    return p if p.is_absolute() else Path(cfg.base) / p


def load_inputs(cfg):
    """``(space, u0)`` from the config's sources."""
    src = cfg.space
    image = None
    try:
        if isinstance(src, str):
            space = io.load_space(_resolve(cfg, src))
        elif isinstance(src, dict) and "generator" in src:
            space = generate(GeneratorSpec(**src["generator"]), cfg.seed)
        elif isinstance(src, dict) and "pgm" in src:
            space, image = io.grid_from_pgm(_resolve(cfg, src["pgm"]), h=src.get("h"),
                                            alpha=src.get("alpha", 2.0))
        elif isinstance(src, dict):
            space = io.space_from_dict(src)
        else:
            raise ConfigError("unrecognised space source")
        u0 = _load_u0(cfg, space, image)
    except ConfigError:
        raise
    except (OSError, KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"cannot load inputs: {exc}") from None
    return space, u0


def _load_u0(cfg, space, image):
    src = cfg.u0
    if src is None:
        if image is None:
            raise ConfigError("config needs 'u0' (literal, csv, pgm or random)")
        return image
    if isinstance(src, list):
        u0 = np.asarray(src, dtype=float)
    elif isinstance(src, dict) and "csv" in src:
        u0 = io.read_node_function(_resolve(cfg, src["csv"]))
    elif isinstance(src, dict) and "pgm" in src:
        img, maxval = io.read_pgm(_resolve(cfg, src["pgm"]))
        u0 = img.ravel() / maxval
    elif isinstance(src, dict) and "random" in src:
        rng = np.random.default_rng([cfg.seed, 1])
        law = src["random"]
        if law == "normal":
            u0 = rng.standard_normal(space.n_nodes)
        elif law == "uniform":
            u0 = rng.uniform(0.0, 1.0, space.n_nodes)
        else:
            raise ConfigError(f"unknown random law {law!r}")
        if src.get("mean_zero"):
            u0 = space.project_mean_zero(u0)
    else:
        raise ConfigError("unrecognised u0 source")
    if u0.shape != (space.n_nodes,) or not np.all(np.isfinite(u0)):
        raise ConfigError(f"u0 must hold {space.n_nodes} finite values")
    return u0


# -- output helpers -----------------------------------------------------------

def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _Float(obj)
    return obj


class _Float(float):
    """Float rendered with 17 significant digits by :func:`dumps`."""


def dumps(obj):
    """JSON with 17-digit floats, nan/inf as strings and sorted keys."""
    def enc(o, ind):
        pad = " " * ind
        if isinstance(o, dict):
            if not o:
                return "{}"
            items = [f'{pad} {json.dumps(k)}: {enc(o[k], ind + 1)}' for k in sorted(o)]
            return "{\n" + ",\n".join(items) + "\n" + pad + "}"
        if isinstance(o, list):
            if not o:
                return "[]"
            if all(not isinstance(v, (dict, list)) for v in o):
                return "[" + ", ".join(enc(v, ind) for v in o) + "]"
            return "[\n" + ",\n".join(pad + " " + enc(v, ind + 1) for v in o) + "\n" + pad + "]"
        if isinstance(o, bool) or o is None:
            return json.dumps(o)
        if isinstance(o, float):
            return format(o, ".17g") if np.isfinite(o) else json.dumps(str(o))
        return json.dumps(o)
    return enc(_clean(obj), 0) + "\n"


# -- tasks --------------------------------------------------------------------

@dataclass
class RunResult:
    status: int
    reports: dict
    artifacts: list
    messages: list

    def summary(self):
        lines = [f"status {self.status}"]
        for name, rep in self.reports.items():
            ok = rep.get("passed")
            lines.append(f"{name}: " + ("ok" if ok in (None, True) else "FAILED"))
            for key in ("extinction_time", "T_ex", "lambda1", "gap", "energy"):
                if key in rep and rep[key] is not None:
                    lines.append(f"  {key} = {flow.format_float(rep[key])}")
        lines.extend(self.messages)
        return "\n".join(lines) + "\n"


class _Runner:
    def __init__(self, cfg):
        self.cfg = cfg
        self.out = Path(cfg.out) if Path(cfg.out).is_absolute() else Path(cfg.base) / cfg.out
        self.reports = {}
        self.artifacts = []
        self.messages = []
        self.space, self.u0 = load_inputs(cfg)
        self.fc = cfg.flow_config()
        self._traj = None
        self._lam = None

    def write(self, name, text):
        self.out.mkdir(parents=True, exist_ok=True)
        path = self.out / name
        path.write_text(text)
        self.artifacts.append(str(path))
        return path

    def trajectory(self):
        if self._traj is None:
            self._traj = flow.evolve(self.space, self.u0, self.fc)
            if self._traj.failed:
                raise ResolventError(self._traj.error, np.nan, 0)
        return self._traj

    def lam(self):
        if self._lam is None:
            opts = self.cfg.options.get("lambda1", {})
            self._lam = asymptotics.lambda1(
                self.space, self.fc.p, restarts=int(opts.get("restarts", 32)), seed=self.cfg.seed,
            )
        return self._lam

    # each task returns a report dict with a "passed" entry where it verifies something

    def task_flow(self):
        tr = self.trajectory()
        tr.to_csv(self.out_path("trajectory.csv"))
        if self.cfg.options.get("dump_certificates"):
            self.write("certificates.json", dumps(tr.certificates_json()))
        scale = max(1.0, float(np.max(np.abs(tr.states))))
        return {
            "steps": len(tr) - 1,
            "t_final": float(tr.times[-1]),
            "extinction_time": asymptotics.extinction_time(tr),
            "energy_final": float(tr.energies()[-1]),
            "mass_drift": flow.mass_drift(tr),
            "max_gap": float(np.max(tr.gaps)),
            "passed": flow.mass_drift(tr) <= 1e-12 * scale * max(1.0, self.space.total_measure),
        }

    def out_path(self, name):
        self.out.mkdir(parents=True, exist_ok=True)
        path = self.out / name
        self.artifacts.append(str(path))
        return path

    def task_resolvent(self):
        sol = resolvent_step(self.space, self.u0, self.fc.p, self.fc.tau, inner_tol=self.fc.inner_tol,
                             inner_max_iters=self.fc.inner_max_iters, cert_tol=self.fc.cert_tol)
        io.write_node_function(self.out_path("resolvent_u.csv"), sol.u_next)
        return {
            "gap": sol.gap, "iterations": sol.iterations, "method": sol.method,
            "certificate": sol.certificate.to_dict(), "passed": sol.certificate.accepts,
        }

    def task_lambda1(self):
        est = self.lam()
        io.write_node_function(self.out_path("lambda1_minimizer.csv"), est.minimizer)
        return {"lambda1": est.lambda1, "method": est.method, "restarts": est.restarts, "mode": est.mode}

    def task_verify_certificates(self):
        tr = self.trajectory()
        tol = 10.0 * self.fc.inner_tol * max(1.0, float(np.max(np.abs(tr.states))))
        diss = flow.dissipation_violations(tr)
        evi = max(flow.check_evi(tr, np.zeros(self.space.n_nodes)), flow.check_evi(tr, tr.states[0]))
        rep = {
            "certificates_accepted": flow.certificates_accepted(tr),
            "rejected_steps": [k for k, c in enumerate(tr.certificates) if c is not None and not c.accepts],
            "max_dissipation_violation": float(np.max(diss, initial=-np.inf)),
            "max_evi_residual": evi,
            "mass_drift": flow.mass_drift(tr),
            "tolerance": tol,
        }
        rep["passed"] = bool(rep["certificates_accepted"] and rep["max_dissipation_violation"] <= tol
                             and evi <= tol)
        self.write("certificates.json", dumps(tr.certificates_json()))
        return rep

    def task_verify_asymptotics(self):
        tr = self.trajectory()
        rep = asymptotics.analyze(tr, self.lam().lambda1)
        self.write("asymptotics.json", rep.to_json() + "\n")
        rep.to_csv(self.out_path("asymptotics.csv"))
        d = rep.to_dict()
        d["T_ex"] = asymptotics.extinction_time(tr)
        return d

    def task_verify_pairing(self):
        sp = self.space
        rng = np.random.default_rng([self.cfg.seed, 2])
        trials = int(self.cfg.options.get("pairing_trials", 20))
        gg, co, inv, bound = 0.0, 0.0, 0.0, -np.inf
        for _ in range(trials):
            u = rng.standard_normal(sp.n_nodes)
            X = rng.uniform(-1.0, 1.0, sp.field_shape)
            scale = max(1.0, float(np.abs(u).max()), float(np.abs(X).max()))
            gg = max(gg, pairing.gauss_green_residual(sp, X, u) / scale)
            lhs, rhs = pairing.pairing_coarea(sp, X, u)
            co = max(co, abs(lhs - rhs) / max(1.0, abs(lhs)))
            bound = max(bound, pairing.pairing_bound_violation(sp, X, u))
            S = rng.random(sp.n_nodes) < 0.5
            two = np.where(S, 1.0, 0.0) + rng.standard_normal()
            knots = np.sort(rng.uniform(-3, 3, 4))
            T = pairing.piecewise_linear(knots, np.cumsum(rng.uniform(0.1, 2.0, 4)))
            inv = max(inv, pairing.theta_monotone_invariance(sp, X, two, T))
        rep = {"gauss_green": gg, "coarea": co, "theta_invariance": inv, "bound_violation": bound,
               "trials": trials}
        rep["passed"] = bool(gg <= 1e-12 and co <= 1e-10 and inv <= 1e-10 and bound <= 1e-12)
        return rep

    def task_denoise(self):
        sp = self.space
        if not isinstance(sp, FinslerGridSpace):
            raise ConfigError("denoise needs a grid space")
        opts = self.cfg.options.get("denoise", {})
        tau = float(opts.get("tau", self.fc.tau))
        tol = float(opts.get("inner_tol", 1e-6))
        sol = resolvent_step(sp, self.u0, 1, tau, inner_tol=tol,
                             inner_max_iters=int(opts.get("inner_max_iters", self.fc.inner_max_iters)))
        maxval = int(opts.get("maxval", 255))
        io.write_pgm(self.out_path("denoised.pgm"), sp.as_image(sol.u_next) * maxval, maxval)
        return {
            "tau": tau, "gap": sol.gap, "inner_tol": tol, "iterations": sol.iterations,
            "energy": energy(sp, sol.u_next, 1), "energy_input": energy(sp, self.u0, 1),
            "field_sup_norm": field_sup_norm(sp, sol.X),
            "passed": bool(sol.gap <= tol),
        }


def run(cfg):
    """Execute the configured tasks in order.

    Returns a :class:`RunResult`; its status is 0 when all verifications
    pass, 1 on a verification failure, 2 for configuration errors and 3 if
    a resolvent solve fails. ``report.json`` and ``summary.txt`` are written
    to the output directory whenever the inputs could be loaded.
    """
    if isinstance(cfg, dict):
        cfg = ExperimentConfig.from_dict(cfg)
    runner = _Runner(cfg)
    status = EXIT_OK
    for task in cfg.tasks:
        try:
            rep = getattr(runner, "task_" + task.replace("-", "_"))()
        except ResolventError as exc:
            runner.messages.append(f"{task}: solver failure: {exc}")
            runner.reports[task] = {"passed": False, "error": str(exc)}
            status = EXIT_SOLVER
            break
        runner.reports[task] = rep
        if rep.get("passed") is False:
            status = max(status, EXIT_VERIFY)
    result = RunResult(status, runner.reports, runner.artifacts, runner.messages)
    runner.write("report.json", dumps({"status": status, "tasks": list(cfg.tasks), "seed": cfg.seed,
                                       "flow": asdict(runner.fc), "reports": runner.reports}))
    runner.write("summary.txt", result.summary())
    result.artifacts = runner.artifacts
    return result
