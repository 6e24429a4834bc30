"""
Large-time behaviour of the Cheeger flow.

The first nonlinear eigenvalue ``lambda1 = inf p Ch_p(u) / ||u||^p`` over
functions with zero mean on every component governs the decay:
finite extinction for ``1 <= p < 2`` with

    ||u(t) - m||^(2-p) <= ||u0 - m||^(2-p) - (2-p) lambda1 t,

exponential decay for ``p = 2`` and algebraic decay for ``p > 2``. Near
extinction the rescaled solution ``(u - m) / (1 - t/T)^(1/(2-p))`` tends to
a profile ``w`` with ``w / ((2-p) T) in dCh_p(w)``.
"""

import csv
import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize

from .flow import format_float
from .functionals import energy, subgradient_membership
from .resolvent import resolvent_step
from .space import FinslerGridSpace, WeightedGraphSpace

log = logging.getLogger(__name__)


@dataclass
class EigenEstimate:
    lambda1: float
    minimizer: np.ndarray
    method: str
    restarts: int
    mode: str = "poincare"
    history: list = field(default_factory=list, repr=False)


def rayleigh_quotient(space, u, p):
    """``p Ch_p(u) / ||u||^p``; scale invariant, ``nan`` for ``u = 0``."""
    u = space.check_function(u)
    nrm = space.norm(u)
    if nrm == 0.0:
        return np.nan
    return p * energy(space, u, p) / nrm**p


def _mean_zero_basis(space):
    """Columns form a nu-orthonormal basis of the zero-mean-per-component functions."""
    n = space.n_nodes
    labels = space.components()
    sq = np.sqrt(space.nu)
    C = np.zeros((n, labels.max() + 1))
    C[np.arange(n), labels] = sq
    # orthogonal complement of the (scaled) component indicators in R^n
    Qfull = linalg.null_space(C.T)
    return Qfull / sq[:, None]


def _energy_batch(space, U, p):
    """``p Ch_p`` of every row of ``U``."""
    if isinstance(space, WeightedGraphSpace):
        D = np.abs(U[:, space.edges[:, 1]] - U[:, space.edges[:, 0]])
        return (D**p) @ space.weights
    return np.array([p * energy(space, u, p) for u in U])


def _oracle(space, p, resolution=1e-5):
    if space.n_nodes > 3:
        raise ValueError("oracle search is limited to spaces with at most 3 nodes")
    Q = _mean_zero_basis(space)
    k = Q.shape[1]
    if k == 0:
        raise ValueError("no nonconstant functions: lambda1 is undefined")
    if k == 1:
        u = Q[:, 0]
        return u, 1
    theta = np.arange(0.0, np.pi, resolution)
    U = np.cos(theta)[:, None] * Q[:, 0] + np.sin(theta)[:, None] * Q[:, 1]
    vals = _energy_batch(space, U, p)  # rows have unit norm
    i = int(np.argmin(vals))

    def f(th):
        v = np.cos(th) * Q[:, 0] + np.sin(th) * Q[:, 1]
        return float(_energy_batch(space, v[None, :], p)[0])

    res = optimize.minimize_scalar(
        f, bounds=(theta[i] - 2 * resolution, theta[i] + 2 * resolution), method="bounded",
        options={"xatol": 1e-14},
    )
    cands = [(vals[i], theta[i]), (res.fun, res.x)]
    if isinstance(space, WeightedGraphSpace):
        # kinks of the quotient, where one edge difference vanishes; minima of
        # the p = 1 quotient sit there
        a = Q[space.edges[:, 1]] - Q[space.edges[:, 0]]
        for th in np.mod(np.arctan2(-a[:, 0], a[:, 1]), np.pi):
            cands.append((f(th), th))
    th = min(cands)[1]
    return np.cos(th) * Q[:, 0] + np.sin(th) * Q[:, 1], theta.size


def _descent_smooth(space, p, c0, Q, maxiter=2000):
    # L-BFGS on the 0-homogeneous quotient in basis coordinates
    m = space._dual_metric()
    Km = space._Kmatrix()
    B = m.size

    def fg(c):
        u = Q @ c
        Y = space._K(u).reshape(B, -1)
        r = np.linalg.norm(Y, axis=1)
        num = np.dot(m, r**p)
        psi = (m * r ** (p - 2.0))[:, None] * Y if p != 2 else m[:, None] * Y
        psi = np.nan_to_num(psi)
        gnum = p * (Q.T @ (Km.T @ psi.T.reshape(-1)))
        cc = np.dot(c, c)
        den = cc ** (p / 2.0)
        val = num / den
        grad = gnum / den - p * val * c / cc
        return val, grad

    res = optimize.minimize(fg, c0, jac=True, method="L-BFGS-B",
                            options={"maxiter": maxiter, "ftol": 1e-15, "gtol": 1e-12})
    return res.x / np.linalg.norm(res.x)


def _inverse_power_tv(space, u0, max_iter=200, rtol=1e-13):
    """Inverse power method for ``TV(u) / ||u||`` on zero-mean functions.

    Each step minimises ``TV(u) - lambda <s, u>`` over the unit ball with
    ``s = u / ||u||``. For a one-homogeneous convex energy the minimiser is
    the normalised resolvent ``J(lambda s)`` (Moreau), computed exactly by
    the TV resolvent solver. The quotient decreases monotonically.
    """
    u = u0 / space.norm(u0)
    lam = rayleigh_quotient(space, u, 1)
    for _ in range(max_iter):
        sol = resolvent_step(space, lam * u, 1, 1.0, inner_tol=1e-12)
        z = space.project_mean_zero(sol.u_next)
        nz = space.norm(z)
        if nz <= 1e-14 * lam:
            break
        z /= nz
        new = rayleigh_quotient(space, z, 1)
        if not new < lam:
            break
        done = lam - new <= rtol * lam
        u, lam = z, new
        if done:
            break
    return u


def _spectral_start(space, Q):
    # Fiedler-type start: smallest eigenvector of the p = 2 quotient in the basis
    Km = space._Kmatrix()
    m = np.tile(space._dual_metric(), Km.shape[0] // space._dual_metric().size)
    KQ = Km @ Q
    E = KQ.T @ (m[:, None] * KQ)
    _, V = np.linalg.eigh(0.5 * (E + E.T))
    return V[:, 0]


def lambda1(space, p, mode="poincare", method="descent", restarts=32, seed=0):
    """First eigenvalue of the p-Cheeger energy.

    Parameters
    ----------
    space : Space
    p : float
        Exponent, ``p >= 1``.
    mode : {"poincare", "sobolev"}
        Poincare mode takes the infimum over zero-mean functions (per
        component). Sobolev mode (all nonzero functions) is degenerate on a
        finite space, where constants have zero energy, and raises.
    method : {"descent", "oracle"}
        ``descent`` runs ``restarts`` random starts plus a spectral start;
        L-BFGS on the quotient for ``p > 1``, the inverse power method for
        ``p = 1``. ``oracle`` is an exhaustive angular search on at most
        three nodes.

    Returns
    -------
    EigenEstimate
        ``lambda1`` equals the quotient of ``minimizer`` exactly.
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    if mode == "sobolev":
        raise ValueError("sobolev mode is degenerate on finite spaces (constants have zero energy)")
    if mode != "poincare":
        raise ValueError(f"unknown mode {mode!r}")
    if method == "oracle":
        u, _ = _oracle(space, p)
        return EigenEstimate(rayleigh_quotient(space, u, p), u, "oracle", 0, mode)
    if method != "descent":
        raise ValueError(f"unknown method {method!r}")
    Q = _mean_zero_basis(space)
    if Q.shape[1] == 0:
        raise ValueError("no nonconstant functions: lambda1 is undefined")
    rng = np.random.default_rng(seed)
    starts = [_spectral_start(space, Q)] + [rng.standard_normal(Q.shape[1]) for _ in range(restarts)]
    best_u, best, history = None, np.inf, []
    for c0 in starts:
        c0 = c0 / np.linalg.norm(c0)
        if p == 1:
            u = _inverse_power_tv(space, Q @ c0)
        else:
            u = Q @ _descent_smooth(space, p, c0, Q)
        val = rayleigh_quotient(space, u, p)
        history.append(val)
        if val < best:
            best, best_u = val, u
    best_u = best_u / space.norm(best_u)
    return EigenEstimate(rayleigh_quotient(space, best_u, p), best_u, "descent", restarts, mode, history)


# -- trajectory analysis ------------------------------------------------------

def _distances(traj, mode="poincare"):
    if mode == "sobolev":
        return traj.norms(2)
    return traj.distance_to_reference()


def default_eps(traj):
    if traj.config.extinction_eps is not None:
        return traj.config.extinction_eps
    return max(1e-9 * traj.space.norm(traj.states[0] - traj.reference), 1e-300)


def extinction_time(traj, eps=None, mode="poincare"):
    """First grid time with ``||u_k - mean(u0)|| <= eps`` (``||u_k||`` in sobolev mode)."""
    eps = default_eps(traj) if eps is None else eps
    d = _distances(traj, mode)
    hit = np.flatnonzero(d <= eps)
    return float(traj.times[hit[0]]) if hit.size else None


def _slack(traj):
    cfg = traj.config
    scale = max(1.0, float(np.max(np.abs(traj.states[0]))))
    return 10.0 * (cfg.inner_tol + cfg.tau) * scale


def decay_bound(d0, lam, p, t):
    """Upper bound on ``||u(t) - m||`` from the coercivity inequality."""
    t = np.asarray(t, dtype=float)
    if p < 2:
        base = np.maximum(d0 ** (2.0 - p) - (2.0 - p) * lam * t, 0.0)
        return base ** (1.0 / (2.0 - p))
    if p == 2:
        return d0 * np.exp(-lam * t)
    return (d0 ** (2.0 - p) + (p - 2.0) * lam * t) ** (-1.0 / (p - 2.0))


@dataclass
class DecayReport:
    p: float
    lambda1: float
    slack: float
    max_violation: float
    max_abs_deviation: float
    extinction_measured: float = None
    extinction_bound: float = None
    extinction_bound_printed: float = None
    extinction_violation: float = None
    extinct_flagged: bool = False
    passed: bool = True


def verify_decay_bounds(traj, lam, p=None, slack=None):
    """Decay and extinction-time bounds along a trajectory.

    ``max_violation`` is the largest excess of the measured distance to the
    mean over the bound; ``max_abs_deviation`` the largest ``|bound - measured|``
    (tightness). For ``p < 2`` the extinction time is compared with
    ``||u0 - m||^(2-p) / ((2-p) lambda1)``; the variant with exponent
    ``p - 2`` is recorded for reference only. For ``p >= 2`` extinction must
    not be flagged.
    """
    p = traj.config.p if p is None else p
    slack = _slack(traj) if slack is None else slack
    d = _distances(traj)
    d0 = d[0]
    bound = decay_bound(d0, lam, p, traj.times)
    rep = DecayReport(
        p=float(p), lambda1=float(lam), slack=float(slack),
        max_violation=float(np.max(d - bound)), max_abs_deviation=float(np.max(np.abs(d - bound))),
    )
    T = extinction_time(traj)
    rep.extinct_flagged = T is not None
    ok = rep.max_violation <= slack
    if p < 2:
        rep.extinction_measured = T
        rep.extinction_bound = d0 ** (2.0 - p) / ((2.0 - p) * lam)
        rep.extinction_bound_printed = d0 ** (p - 2.0) / ((2.0 - p) * lam) if d0 > 0 else np.inf
        if T is not None:
            rep.extinction_violation = T - rep.extinction_bound
            ok = ok and rep.extinction_violation <= slack
    else:
        ok = ok and not rep.extinct_flagged
    rep.passed = bool(ok)
    return rep


def lambda_series(traj, p=None):
    """``Lambda(t) = p Ch_p(u) / ||u - m||^p`` per step (nan once extinct)."""
    p = traj.config.p if p is None else p
    d = _distances(traj)
    E = traj.energies()
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(d > 0, p * E / d**p, np.nan)


@dataclass
class SandwichReport:
    extinction_time: float
    lower_margin: float
    upper_margin: float
    max_rel_deviation_lower: float
    max_rel_deviation_upper: float
    slack: float

    @property
    def holds(self):
        return self.lower_margin >= -self.slack and self.upper_margin >= -self.slack


def verify_sharper_bound(traj, lam, p=None, slack=None):
    """Sandwich ``(2-p) lambda1 (T-t) <= ||u - m||^(2-p) <= (2-p) Lambda(t) (T-t)``.

    Margins are ``min(middle - lower)`` and ``min(upper - middle)`` over
    steps before extinction. Deviations are measured uniformly in time,
    relative to the initial value ``||u0 - m||^(2-p)``.
    """
    p = traj.config.p if p is None else p
    if not 1 <= p < 2:
        raise ValueError("sharper bound needs 1 <= p < 2")
    T = extinction_time(traj)
    if T is None:
        raise ValueError("no extinction detected")
    slack = _slack(traj) if slack is None else slack
    t = traj.times
    sel = t < T
    d = _distances(traj)[sel]
    Lam = lambda_series(traj, p)[sel]
    mid = d ** (2.0 - p)
    lower = (2.0 - p) * lam * (T - t[sel])
    upper = (2.0 - p) * Lam * (T - t[sel])
    ref = mid[0] if mid.size and mid[0] > 0 else 1.0
    return SandwichReport(
        extinction_time=T,
        lower_margin=float(np.min(mid - lower, initial=np.inf)),
        upper_margin=float(np.min(upper - mid, initial=np.inf)),
        max_rel_deviation_lower=float(np.max(np.abs(mid - lower), initial=0.0) / ref),
        max_rel_deviation_upper=float(np.max(np.abs(upper - mid), initial=0.0) / ref),
        slack=float(slack),
    )


@dataclass
class ProfileResult:
    times: np.ndarray
    norms: np.ndarray
    w_star: np.ndarray
    norm_ok: bool
    member: bool
    member_distance: float
    member_plain: bool = None


def asymptotic_profile(traj, T_ex=None, p=None, eps=None, tol=1e-8, floor=None):
    """Rescaled states ``(u - m) / (1 - t/T)^(1/(2-p))`` and the limiting profile.

    The series runs up to the last step with ``||u - m|| > floor`` (default
    ``10 eps``); ``w_star`` is its last element. For ``1 < p < 2`` the
    implicit scheme collapses super-linearly once ``||u - m||`` drops below
    about ``tau^(1/(2-p))``, so a larger ``floor`` keeps the profile in the
    resolved range. Membership of ``w_star / ((2-p) T)`` in
    ``dCh_p(w_star)`` is decided by one resolvent solve with tolerance
    ``tol``; for ``p = 1`` the same test is run for ``w_star / T``.
    """
    p = traj.config.p if p is None else p
    if p >= 2:
        raise ValueError("asymptotic profiles need 1 <= p < 2")
    T_ex = extinction_time(traj, eps) if T_ex is None else T_ex
    if T_ex is None or T_ex <= 0:
        raise ValueError("extinction time must be positive")
    eps = default_eps(traj) if eps is None else eps
    sp = traj.space
    d = _distances(traj)
    floor = 10.0 * eps if floor is None else floor
    keep = np.flatnonzero((d > floor) & (traj.times < T_ex))
    if keep.size == 0:
        raise ValueError("no state before extinction")
    t = traj.times[keep]
    W = (traj.states[keep] - traj.reference) / ((1.0 - t / T_ex) ** (1.0 / (2.0 - p)))[:, None]
    norms = np.array([sp.norm(w) for w in W])
    w_star = W[-1]
    v = w_star / ((2.0 - p) * T_ex)
    member, sol = subgradient_membership(sp, w_star, v, p, tol=tol)
    scale = max(1.0, float(np.abs(w_star).max()), float(np.abs(v).max()))
    res = ProfileResult(
        times=t, norms=norms, w_star=w_star,
        norm_ok=bool(norms[-1] <= d[0] + _slack(traj)),
        member=bool(member), member_distance=sp.norm(sol.u_next - w_star) / scale,
    )
    if p == 1:
        res.member_plain = bool(subgradient_membership(sp, w_star, w_star / T_ex, p, tol=tol)[0])
    return res


def ground_state_check(traj, lam, p=None, eps=None, rtol=1e-4):
    """``|Lambda(t_last) - lambda1| <= rtol lambda1`` at the last step with ``||u - m|| > 10 eps``."""
    if extinction_time(traj, eps) is None:
        raise ValueError("no extinction detected")
    eps = default_eps(traj) if eps is None else eps
    d = _distances(traj)
    keep = np.flatnonzero(d > 10.0 * eps)
    Lam = lambda_series(traj, p)[keep[-1]]
    return bool(abs(Lam - lam) <= rtol * lam), float(Lam)


@dataclass
class AsymptoticsReport:
    p: float
    lambda1: float
    decay: DecayReport
    times: np.ndarray
    distances: np.ndarray
    Lambda: np.ndarray
    sandwich: SandwichReport = None
    profile: ProfileResult = None
    ground_state: bool = None
    Lambda_last: float = None

    @property
    def passed(self):
        ok = self.decay.passed
        if self.sandwich is not None:
            ok = ok and self.sandwich.holds
        if self.profile is not None:
            ok = ok and self.profile.norm_ok
        return bool(ok)

    def to_dict(self):
        out = {
            "p": self.p,
            "lambda1": self.lambda1,
            "passed": self.passed,
            "decay": vars(self.decay),
            "ground_state": self.ground_state,
            "Lambda_last": self.Lambda_last,
        }
        if self.sandwich is not None:
            out["sandwich"] = {**vars(self.sandwich), "holds": self.sandwich.holds}
        if self.profile is not None:
            pr = self.profile
            out["profile"] = {
                "w_star": pr.w_star.tolist(), "norm_ok": pr.norm_ok, "member": pr.member,
                "member_distance": pr.member_distance, "member_plain": pr.member_plain,
            }
        return out

    def to_json(self):
        return json.dumps(_finite(self.to_dict()), indent=1, sort_keys=True)

    def to_csv(self, path):
        prof = {}
        if self.profile is not None:
            prof = dict(zip(self.profile.times.tolist(), self.profile.norms.tolist()))
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["t", "distance", "Lambda", "profile_norm"])
            for t, d, L in zip(self.times, self.distances, self.Lambda):
                wr.writerow([format_float(t), format_float(d), format_float(L),
                             format_float(prof.get(float(t), np.nan))])


def _finite(obj):
    # JSON has no nan/inf; map them to strings, floats to 17 digits via repr
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if np.isfinite(x) else str(x)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def analyze(traj, lam):
    """Full report: decay bounds, and for extinguishing flows the sandwich, profile and ground-state flag."""
    p = traj.config.p
    rep = AsymptoticsReport(
        p=float(p), lambda1=float(lam), decay=verify_decay_bounds(traj, lam),
        times=traj.times, distances=_distances(traj), Lambda=lambda_series(traj),
    )
    T = extinction_time(traj)
    if p < 2 and T is not None and T > 0:
        rep.sandwich = verify_sharper_bound(traj, lam)
        try:
            rep.profile = asymptotic_profile(traj, T)
        except ValueError as exc:
            log.info("profile unavailable: %s", exc)
        rep.ground_state, rep.Lambda_last = ground_state_check(traj, lam)
    return rep
