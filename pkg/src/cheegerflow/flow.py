"""
Implicit Euler gradient flow of the Cheeger energy and its a posteriori checks.

Every step is one certified resolvent solve, so the discrete trajectory
inherits the step-wise properties of the continuous flow exactly: energy
dissipation, order preservation and contraction, the evolution variational
inequality, and mass conservation.
"""

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .functionals import energy
from .resolvent import ResolventError, resolvent_step

log = logging.getLogger(__name__)

CSV_COLUMNS = ("t", "energy", "l2", "l1", "linf", "mass", "gap", "dudt_l2")


@dataclass
class FlowConfig:
    """Fixed-step implicit Euler settings.

    ``extinction_eps=None`` means ``1e-9 * ||u0 - mean(u0)||`` (with a floor
    of ``1e-300``); extinction is measured against the componentwise mean
    of ``u0``, the stationary state reached by finite-measure flows.
    """

    p: float = 1.0
    tau: float = 1e-3
    t_final: float = 1.0
    inner_tol: float = 1e-9
    inner_max_iters: int = 200000
    extinction_eps: float = None
    stop_at_extinction: bool = True
    cert_tol: float = 1e-8
    mode: str = "fixed-step"

    def __post_init__(self):
        if not self.p >= 1:
            raise ValueError("p must be >= 1")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if not self.inner_tol > 0:
            raise ValueError("inner_tol must be positive")
        if not self.t_final >= 0:
            raise ValueError("t_final must be nonnegative")
        if self.mode != "fixed-step":
            raise ValueError("only fixed-step mode is supported")

    @property
    def n_steps(self):
        return int(round(self.t_final / self.tau))


@dataclass
class FlowTrajectory:
    space: object
    config: FlowConfig
    times: np.ndarray
    states: np.ndarray
    fields: list
    gaps: np.ndarray
    certificates: list
    extinction_index: int = None
    error: str = None
    reference: np.ndarray = field(default=None, repr=False)

    def __len__(self):
        return len(self.times)

    @property
    def failed(self):
        return self.error is not None

    @property
    def extinction_time(self):
        return None if self.extinction_index is None else float(self.times[self.extinction_index])

    def energies(self):
        return np.array([energy(self.space, u, self.config.p) for u in self.states])

    def norms(self, r=2):
        return np.array([self.space.norm(u, r) for u in self.states])

    def masses(self):
        return self.states @ self.space.nu

    def dudt_norms(self):
        out = np.full(len(self), np.nan)
        if len(self) > 1:
            d = np.diff(self.states, axis=0) / np.diff(self.times)[:, None]
            out[1:] = [self.space.norm(x) for x in d]
        return out

    def distance_to_reference(self):
        """``||u_k - mean(u0)||`` per step."""
        return np.array([self.space.norm(u - self.reference) for u in self.states])

    def diagnostics(self):
        return {
            "t": self.times,
            "energy": self.energies(),
            "l2": self.norms(2),
            "l1": self.norms(1),
            "linf": self.norms(np.inf),
            "mass": self.masses(),
            "gap": self.gaps,
            "dudt_l2": self.dudt_norms(),
        }

    def to_csv(self, path):
        diag = self.diagnostics()
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(CSV_COLUMNS)
            for k in range(len(self)):
                wr.writerow([format_float(diag[c][k]) for c in CSV_COLUMNS])

    def certificates_json(self):
        return [
            None if c is None else {"t": float(self.times[k]), **json.loads(c.to_json())}
            for k, c in enumerate(self.certificates)
        ]

    def dump_certificates(self, path):
        Path(path).write_text(json.dumps(self.certificates_json(), indent=1) + "\n")


def format_float(x):
    """17 significant digits, the round-trip precision of a double."""
    return format(float(x), ".17g")


def evolve(space, u0, config, raise_on_error=False, keep_certificates=True):
    """Run the implicit Euler scheme ``u_{k+1} = J_tau(u_k)``.

    Stops at ``config.t_final`` or, if ``stop_at_extinction``, at the first
    state within ``extinction_eps`` of the componentwise mean of ``u0``.
    A solver failure truncates the trajectory and records the error, unless
    ``raise_on_error`` is set.
    """
    u0 = space.check_function(u0)
    cfg = config
    ref = space.component_mean(u0)
    d0 = space.norm(u0 - ref)
    eps = cfg.extinction_eps if cfg.extinction_eps is not None else max(1e-9 * d0, 1e-300)
    times, states, fields, gaps, certs = [0.0], [u0], [space.zero_field()], [0.0], [None]
    ext = 0 if d0 <= eps else None
    error = None
    X = None
    for k in range(1, cfg.n_steps + 1):
        if ext is not None and cfg.stop_at_extinction:
            break
        try:
            sol = resolvent_step(
                space, states[-1], cfg.p, cfg.tau, inner_tol=cfg.inner_tol,
                inner_max_iters=cfg.inner_max_iters, X0=X, cert_tol=cfg.cert_tol,
            )
        except ResolventError as exc:
            if raise_on_error:
                raise
            error = str(exc)
            log.warning("trajectory truncated at step %d: %s", k, exc)
            break
        X = sol.X
        times.append(k * cfg.tau)
        states.append(sol.u_next)
        fields.append(sol.X)
        gaps.append(sol.gap)
        certs.append(sol.certificate if keep_certificates else None)
        if ext is None and space.norm(sol.u_next - ref) <= eps:
            ext = k
    return FlowTrajectory(
        space=space, config=cfg, times=np.array(times), states=np.array(states),
        fields=fields, gaps=np.array(gaps), certificates=certs, extinction_index=ext,
        error=error, reference=ref,
    )


# -- a posteriori checks ------------------------------------------------------

def _scale(traj):
    return max(1.0, float(np.max(np.abs(traj.states))))


def certificates_accepted(traj):
    """True when every step's subgradient certificate accepts."""
    return all(c is None or c.accepts for c in traj.certificates)


def dissipation_violations(traj):
    """``Ch(u_{k+1}) + ||u_{k+1} - u_k||^2 / (2 tau) - Ch(u_k)`` per step (should be <= 0)."""
    E = traj.energies()
    sp, tau = traj.space, traj.config.tau
    jumps = np.array([sp.norm(b - a) ** 2 for a, b in zip(traj.states[:-1], traj.states[1:])])
    return E[1:] + jumps / (2.0 * tau) - E[:-1]


def mass_series(traj):
    """``sum nu u_k`` per step; constant up to rounding."""
    return traj.masses()


def mass_drift(traj):
    m = mass_series(traj)
    return float(np.max(np.abs(m - m[0]))) if m.size else 0.0


@dataclass
class ComparisonReport:
    r: float
    initial: float
    series: np.ndarray
    max_violation: float
    contraction_violation: float

    def to_dict(self):
        d = asdict(self)
        d["series"] = self.series.tolist()
        return d


def compare_trajectories(traj_a, traj_b, r=2):
    """Positive-part ``L^r`` comparison and ``L^2`` contraction of two trajectories.

    ``max_violation`` is the largest ``||(u_a - u_b)^+||_r - ||(u_a0 - u_b0)^+||_r``;
    ``contraction_violation`` the largest step-to-step increase of
    ``||u_a - u_b||_2``. Trajectories are compared over their common length.
    """
    sp = traj_a.space
    n = min(len(traj_a), len(traj_b))
    diff = traj_a.states[:n] - traj_b.states[:n]
    pos = np.array([sp.norm(np.maximum(d, 0.0), r) for d in diff])
    l2 = np.array([sp.norm(d) for d in diff])
    inc = np.diff(l2)
    return ComparisonReport(
        r=float(r),
        initial=float(pos[0]),
        series=pos,
        max_violation=float(np.max(pos - pos[0], initial=0.0)),
        contraction_violation=float(np.max(inc, initial=0.0)),
    )


def check_comparison(space, u0_a, u0_b, config, r=2):
    """Evolve both data to ``t_final`` (no extinction stop) and compare them."""
    cfg = FlowConfig(**{**asdict(config), "stop_at_extinction": False})
    ta = evolve(space, u0_a, cfg, raise_on_error=True, keep_certificates=False)
    tb = evolve(space, u0_b, cfg, raise_on_error=True, keep_certificates=False)
    return compare_trajectories(ta, tb, r)


def evi_residuals(traj, w):
    """``<u_t, u_{k+1} - w> - Ch(w) + Ch(u_{k+1})`` per step (should be <= 0)."""
    sp, p, tau = traj.space, traj.config.p, traj.config.tau
    w = sp.check_function(w)
    Ew = energy(sp, w, p)
    E = traj.energies()
    out = []
    for k in range(len(traj) - 1):
        ut = (traj.states[k + 1] - traj.states[k]) / tau
        out.append(sp.inner(ut, traj.states[k + 1] - w) - Ew + E[k + 1])
    return np.array(out)


def check_evi(traj, w):
    """Largest EVI residual along the trajectory (0 for a one-point trajectory)."""
    return float(np.max(evi_residuals(traj, w), initial=0.0))


def check_variational_solution(traj, v_path, quadrature="implicit"):
    """``LHS - RHS`` of the time-integrated variational inequality.

    ``LHS = int_0^T <v_t, v - u> + Ch(v) - Ch(u) dt`` and
    ``RHS = ||(v - u)(T)||^2 / 2 - ||v(0) - u0||^2 / 2``. ``v_path`` holds one
    state per trajectory time. With ``quadrature="implicit"`` the integrand
    on ``[t_k, t_{k+1}]`` is evaluated at ``t_{k+1}`` with the difference
    quotient ``v_t``; the discrete trajectory then satisfies the inequality
    exactly (up to solver tolerance). ``"trapezoid"`` averages both
    endpoints and is only first-order consistent.
    """
    sp, p = traj.space, traj.config.p
    V = np.asarray(v_path, dtype=float)
    U = traj.states
    if V.shape != U.shape:
        raise ValueError("v_path must match the trajectory shape")
    t = traj.times
    Ev = np.array([energy(sp, v, p) for v in V])
    Eu = traj.energies()
    lhs = 0.0
    for k in range(len(t) - 1):
        dt = t[k + 1] - t[k]
        vt = (V[k + 1] - V[k]) / dt
        f1 = sp.inner(vt, V[k + 1] - U[k + 1]) + Ev[k + 1] - Eu[k + 1]
        if quadrature == "implicit":
            lhs += dt * f1
        elif quadrature == "trapezoid":
            f0 = sp.inner(vt, V[k] - U[k]) + Ev[k] - Eu[k]
            lhs += 0.5 * dt * (f0 + f1)
        else:
            raise ValueError(f"unknown quadrature {quadrature!r}")
    rhs = 0.5 * sp.norm(V[-1] - U[-1]) ** 2 - 0.5 * sp.norm(V[0] - U[0]) ** 2
    return float(lhs - rhs)


@dataclass
class TVRegularityReport:
    derivative_violation: float
    pointwise_violation: float
    nonnegative: bool
    slack: float

    @property
    def passed(self):
        return self.derivative_violation <= self.slack and (
            not self.nonnegative or self.pointwise_violation <= self.slack
        )

    def to_dict(self):
        d = asdict(self)
        d["passed"] = self.passed
        return d


def check_tv_regularity(traj, slack=1e-6):
    """Smoothing estimates of the total variation flow.

    ``||(u_k - u_{k-1}) / tau|| <= ||u0|| / t_k`` and, for ``u0 >= 0``,
    ``(u_k - u_{k-1}) / tau <= u_k / t_k`` pointwise. Reports the largest
    excesses; the pointwise one is ``-inf`` when ``u0`` has a negative value.
    """
    if traj.config.p != 1:
        raise ValueError("TV regularity estimates apply to p = 1 only")
    sp = traj.space
    u0 = traj.states[0]
    n0 = sp.norm(u0)
    nonneg = bool(np.all(u0 >= 0))
    dv, pv = -np.inf, -np.inf
    for k in range(1, len(traj)):
        tk = traj.times[k]
        ut = (traj.states[k] - traj.states[k - 1]) / (tk - traj.times[k - 1])
        dv = max(dv, sp.norm(ut) - n0 / tk)
        if nonneg:
            pv = max(pv, float(np.max(ut - traj.states[k] / tk)))
    return TVRegularityReport(float(dv), float(pv), nonneg, float(slack))
