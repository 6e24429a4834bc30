"""
Resolvent (implicit Euler) solver for Cheeger energies.

Solves ``min_u Ch_p(u) + (1/(2 tau)) ||u - g||^2`` together with the dual
field ``X`` of the Fenchel-Rockafellar pair

    max_X  -E*(X) - (1/(2 tau)) ||tau div X + g||^2 + (1/(2 tau)) ||g||^2.

The step ``tau`` is folded into the energy (``Ch_p`` is linear in the edge
weights), so the iterations always see ``tau Ch_p + (1/2)||. - g||^2``.

Stages
------
1. Accelerated primal-dual splitting (Chambolle-Pock with the strongly
   convex data term) on ``min_u max_Y <Ku, Y> - E*(Y) + G(u)``; step sizes
   from a power-iteration estimate of ``||K||`` with a 1% margin.
2. Exact polishing, attempted from warm starts and between primal-dual
   chunks: an active-set solve for ``p = 1`` on graphs, Newton on the primal
   (``p >= 2``) or on the dual (``1 < p < 2``).

The returned state is always recomputed as ``u = g + tau div X`` so the
divergence equation and mass conservation hold to rounding.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, sparse
from scipy.sparse import csgraph
from scipy.sparse import linalg as splinalg

from .functionals import (
    SubgradientCertificate,
    duality_gap,
    primal_from_dual,
    verify_certificate,
)
from .space import FinslerGridSpace, WeightedGraphSpace, conjugate_exponent

log = logging.getLogger(__name__)

DENSE_LIMIT = 600
# Newton decrement (relative to the objective) below which line searches
# can no longer resolve a decrease in double precision
LOCAL_DECREMENT = 1e-12


class ResolventError(RuntimeError):
    """Inner solver stopped before reaching the requested duality gap."""

    def __init__(self, message, best_gap, iterations, best=None):
        super().__init__(f"{message} (best relative gap {best_gap:.3e} after {iterations} iterations)")
        self.best_gap = best_gap
        self.iterations = iterations
        self.best = best


@dataclass
class ResolventSolution:
    u_next: np.ndarray
    X: np.ndarray
    gap: float
    iterations: int
    certificate: SubgradientCertificate
    method: str = "pdhg"
    primal: float = np.nan
    dual: float = np.nan
    history: list = field(default_factory=list, repr=False)


# -- block geometry -----------------------------------------------------------
#
# The dual variable Y lives on "blocks": edges of a graph (size 1, metric w)
# or nodes of a grid (size dim, metric nu). ``Y`` is kept as (B, d).

def _blocks(space):
    if isinstance(space, WeightedGraphSpace):
        return space.n_edges, 1
    return space.n_nodes, space.dim


def _as_blocks(space, Y):
    B, d = _blocks(space)
    return np.asarray(Y, dtype=float).reshape(B, d)


def _K(space, u):
    return _as_blocks(space, space._K(u))


def _Kadj(space, Y):
    # adjoint of K between the metric-weighted dual space and L^2(nu)
    if isinstance(space, WeightedGraphSpace):
        return -space.divergence(Y[:, 0])
    return -space.divergence(space._field_from_dual(Y))


def _to_field(space, Y):
    if isinstance(space, WeightedGraphSpace):
        return Y[:, 0].copy()
    return space._field_from_dual(Y)


def _from_field(space, X):
    return _as_blocks(space, space._dual_from_field(X))


def _tangent_exponent(space):
    if isinstance(space, WeightedGraphSpace):
        return 2.0  # blocks are scalars, every l^alpha coincides
    return space.alpha


def operator_norm_sq(space, n_iter=500, rtol=1e-12, seed=0):
    """Power-iteration estimate of ``||K||^2`` in the nu/metric-weighted norms."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(space.n_nodes)
    x /= space.norm(x)
    est = 0.0
    for _ in range(n_iter):
        y = _Kadj(space, _K(space, x))
        new = space.inner(x, y)
        nrm = space.norm(y)
        if nrm == 0.0:
            return 0.0
        x = y / nrm
        if abs(new - est) <= rtol * abs(new):
            est = new
            break
        est = new
    return est


def _support_check(space, p):
    alpha = _tangent_exponent(space)
    if isinstance(space, FinslerGridSpace):
        if p == 1 and alpha not in (1.0, 2.0, np.inf):
            raise NotImplementedError("grid TV resolvent supports alpha in {1, 2, inf}")
        if p > 1 and alpha != 2.0:
            raise NotImplementedError("grid p-Laplacian resolvent requires alpha = 2")


# -- proximal maps ------------------------------------------------------------

def scalar_power_prox(y, sigma, q, max_iter=60, tol=1e-14):
    """Solve ``r + sigma r^(q-1) = |y|`` for ``r >= 0``; returns ``sign(y) r``.

    This is the prox of ``sigma |.|^q / q``. Newton with a bisection
    safeguard on the bracket ``[0, min(|y|, (|y|/sigma)^(1/(q-1)))]``.
    """
    y = np.asarray(y, dtype=float)
    a = np.abs(y)
    if q == 2.0:
        return y / (1.0 + sigma)
    lo = np.zeros_like(a)
    hi = np.minimum(a, (a / sigma) ** (1.0 / (q - 1.0)))
    r = 0.5 * (lo + hi)
    for _ in range(max_iter):
        f = r + sigma * r ** (q - 1.0) - a
        lo = np.where(f < 0, r, lo)
        hi = np.where(f > 0, r, hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            df = 1.0 + sigma * (q - 1.0) * r ** (q - 2.0)
            step = r - f / df
        bad = ~np.isfinite(step) | (step <= lo) | (step >= hi)
        r_new = np.where(bad, 0.5 * (lo + hi), step)
        if np.all(np.abs(r_new - r) <= tol * r_new):
            r = r_new
            break
        r = r_new
    return np.sign(y) * r


def _project_l1_ball(Y):
    # row-wise Euclidean projection onto {||y||_1 <= 1}
    a = np.abs(Y)
    inside = a.sum(axis=1) <= 1.0
    s = -np.sort(-a, axis=1)
    css = np.cumsum(s, axis=1) - 1.0
    k = np.arange(1, Y.shape[1] + 1)
    cond = s - css / k > 0
    rho = cond.shape[1] - 1 - np.argmax(cond[:, ::-1], axis=1)
    theta = css[np.arange(Y.shape[0]), rho] / (rho + 1)
    out = np.sign(Y) * np.maximum(a - theta[:, None], 0.0)
    out[inside] = Y[inside]
    return out


def prox_conjugate(Y, sigma, p, alpha=2.0):
    """Prox of ``sigma E*`` per block (metric weights cancel block-wise)."""
    if p == 1:
        if Y.shape[1] == 1 or np.isinf(alpha):
            return np.clip(Y, -1.0, 1.0)
        if alpha == 2.0:
            r = np.linalg.norm(Y, axis=1)
            return Y / np.maximum(1.0, r)[:, None]
        return _project_l1_ball(Y)
    q = conjugate_exponent(p)
    if Y.shape[1] == 1:
        return scalar_power_prox(Y, sigma, q)
    r = np.linalg.norm(Y, axis=1)
    rn = scalar_power_prox(r, sigma, q)
    with np.errstate(invalid="ignore", divide="ignore"):
        f = np.where(r > 0, rn / r, 0.0)
    return Y * f[:, None]


# -- polishing ----------------------------------------------------------------

def _solve(H, b):
    if sparse.issparse(H):
        if H.shape[0] <= DENSE_LIMIT:
            H = H.toarray()
        else:
            return splinalg.spsolve(H.tocsc(), b)
    try:
        return np.linalg.solve(H, b)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(H, b, rcond=None)[0]


def _block_hessian(Y, m, e):
    """Stacked sparse Hessian of ``sum_b m_b |Y_b|^e / e`` (Euclidean block norm)."""
    B, d = Y.shape
    r = np.linalg.norm(Y, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        base = np.where(r > 0, r ** (e - 2.0), 0.0 if e > 2 else (1.0 if e == 2 else np.inf))
        yhat = np.where(r[:, None] > 0, Y / r[:, None], 0.0)
    rows, cols, vals = [], [], []
    idx = np.arange(B)
    for a in range(d):
        for c in range(d):
            v = m * base * ((a == c) + (e - 2.0) * yhat[:, a] * yhat[:, c])
            rows.append(a * B + idx)
            cols.append(c * B + idx)
            vals.append(v)
    return sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(B * d, B * d)
    )


def _stacked(Y):
    return Y.T.reshape(-1)


def _unstacked(y, B, d):
    return y.reshape(d, B).T


def _operator(space):
    """``(Km, dense)``: the stacked matrix of ``K``, densified for small problems."""
    Km = space._Kmatrix()
    dense = Km.shape[0] <= DENSE_LIMIT and Km.shape[1] <= DENSE_LIMIT
    return (Km.toarray() if dense else Km.tocsr()), dense


def _hessian_term(Y, m, e, dense):
    """Per-block Hessian of ``sum m |Y|^e / e``: a diagonal (scalar blocks) or a matrix."""
    if Y.shape[1] == 1:
        r = np.abs(Y[:, 0])
        if e == 2:
            return m.copy()
        with np.errstate(divide="ignore"):
            return m * (e - 1.0) * r ** (e - 2.0)
    H = _block_hessian(Y, m, e)
    return H.toarray() if dense else H


def _sandwich(Km, h, dense):
    # Km^T h Km for a diagonal or full block Hessian h
    if h.ndim == 1:
        return Km.T @ (h[:, None] * Km) if dense else Km.T @ sparse.diags(h) @ Km
    return Km.T @ h @ Km


def _plus_diag(H, dvec):
    if sparse.issparse(H):
        return H + sparse.diags(dvec)
    H = np.array(H, copy=True)
    H[np.diag_indices_from(H)] += dvec
    return H


def newton_primal(space, g, p, tau, u0, max_iter=100):
    """Damped Newton on ``tau Ch_p(u) + (1/2)||u - g||^2`` for ``p >= 2``."""
    nu = space.nu
    m = space._dual_metric()
    Km, dense = _operator(space)

    def f(u):
        Y = _K(space, u)
        r = np.linalg.norm(Y, axis=1)
        return tau * np.dot(m, r**p) / p + 0.5 * np.dot(nu, (u - g) ** 2)

    u = np.array(u0, dtype=float)
    fu = f(u)
    last = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        Y = _K(space, u)
        r = np.linalg.norm(Y, axis=1)
        psi = (m * r ** (p - 2.0))[:, None] * Y if p != 2 else m[:, None] * Y
        grad = tau * (Km.T @ _stacked(psi)) + nu * (u - g)
        H = _plus_diag(tau * _sandwich(Km, _hessian_term(Y, m, p, dense), dense), nu)
        step = _solve(H, -grad)
        dec = -np.dot(grad, step)
        if not np.isfinite(dec) or dec <= 1e-30 * (1.0 + abs(fu)):
            break
        size = np.max(np.abs(step))
        if dec <= LOCAL_DECREMENT * (1.0 + abs(fu)):
            # decrease below the rounding of f: full steps while they keep shrinking
            if size >= last:
                break
            u, fu, last = u + step, f(u + step), size
            continue
        t = 1.0
        while True:
            cand = u + t * step
            fc = f(cand)
            if fc <= fu - 1e-4 * t * dec or t < 1e-12:
                break
            t *= 0.5
        if fc > fu:
            break
        done = np.max(np.abs(t * step)) <= 1e-15 * (1.0 + np.max(np.abs(u)))
        u, fu = cand, fc
        if done:
            break
    Y = _K(space, u)
    r = np.linalg.norm(Y, axis=1)
    with np.errstate(invalid="ignore"):
        Ystar = np.where(r[:, None] > 0, (r ** (p - 2.0))[:, None] * Y, 0.0) if p != 2 else Y
    return _to_field(space, Ystar), it


def newton_dual(space, g, p, tau, Y0, max_iter=300, target=1e-15):
    """Damped Newton on the dual objective for ``1 < p < 2`` (so ``q > 2``)."""
    q = conjugate_exponent(p)
    nu = space.nu
    m = space._dual_metric()
    Km, dense = _operator(space)
    B, d = _blocks(space)
    Mst = np.tile(m, d)
    if dense:
        MK = Mst[:, None] * Km
        KNK = tau * (MK / nu) @ MK.T
    else:
        MK = sparse.diags(Mst) @ Km
        KNK = tau * (MK @ sparse.diags(1.0 / nu) @ MK.T)
    ones = np.ones(B)

    def u_of(Y):
        return g - tau * _Kadj(space, Y)

    def psi(Y):
        u = u_of(Y)
        r = np.linalg.norm(Y, axis=1)
        return np.dot(m, r**q) / q + 0.5 * np.dot(nu, u * u) / tau

    Y = np.array(Y0, dtype=float).reshape(B, d)
    val = psi(Y)
    last = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        u = u_of(Y)
        r = np.linalg.norm(Y, axis=1)
        phi = (r ** (q - 2.0))[:, None] * Y
        grad = _stacked(m[:, None] * phi) - _stacked(m[:, None] * _K(space, u))
        h = _hessian_term(Y, ones, q, dense)
        if h.ndim == 1:
            H = _plus_diag(KNK, Mst * h)
        else:
            H = (sparse.diags(Mst) @ h if sparse.issparse(h) else Mst[:, None] * h) + KNK
        diag = H.diagonal()
        mu = 1e-13 * (np.max(np.abs(diag)) if diag.size else 1.0) + 1e-300
        H = _plus_diag(H, np.full(H.shape[0], mu))
        step = _solve(H, -grad)
        dec = -np.dot(grad, step)
        if not np.isfinite(dec) or dec <= target * target * (1.0 + abs(val)):
            break
        S = _unstacked(step, B, d)
        size = np.max(np.abs(step))
        if dec <= LOCAL_DECREMENT * (1.0 + abs(val)):
            if size >= last:
                break
            Y, val, last = Y + S, psi(Y + S), size
            continue
        t = 1.0
        while True:
            cand = Y + t * S
            vc = psi(cand)
            if vc <= val - 1e-4 * t * dec or t < 1e-12:
                break
            t *= 0.5
        if vc > val:
            break
        small = np.max(np.abs(t * S)) <= 1e-16 * (1.0 + np.max(np.abs(Y)))
        Y, val = cand, vc
        if small:
            break
    return _to_field(space, Y), it


def polish_tv_graph(space, g, tau, u_guess, scale=None, max_partitions=16):
    """Active-set solve of the TV resolvent on a graph.

    Edges with ``|du| <= delta`` in ``u_guess`` are fused; the fused
    components take the mass-balance value, saturated edges carry
    ``X = sign(du)``, and the fused edges get a flow with ``|X| <= 1``
    solving the divergence equation. Any partition passing the sign and
    bound checks is a KKT point, hence the exact resolvent. Yields candidate
    fields for increasing ``delta``.
    """
    w, tail, head = space.weights, space.edges[:, 0], space.edges[:, 1]
    n, mE = space.n_nodes, space.n_edges
    nu = space.nu
    du = u_guess[head] - u_guess[tail]
    mags = np.abs(du)
    if scale is None:
        scale = max(1.0, float(np.max(np.abs(g))))
    deltas = [0.0] + [scale * 10.0 ** (-k) for k in range(14, 0, -1)]
    seen = set()
    tried = 0
    for delta in deltas:
        free = mags <= delta
        key = free.tobytes()
        if key in seen:
            continue
        seen.add(key)
        tried += 1
        if tried > max_partitions:
            return
        X = np.zeros(mE)
        sat = ~free
        X[sat] = np.sign(du[sat])
        wx = w * X
        flux = np.bincount(tail, wx, n) - np.bincount(head, wx, n)
        if free.any():
            adj = sparse.coo_matrix((np.ones(free.sum()), (tail[free], head[free])), shape=(n, n))
            _, labels = csgraph.connected_components(adj, directed=False)
        else:
            labels = np.arange(n)
        mass = np.bincount(labels, weights=nu)
        c = (np.bincount(labels, weights=nu * g) + tau * np.bincount(labels, weights=flux)) / mass
        u = c[labels]
        dus = u[head[sat]] - u[tail[sat]]
        if np.any(X[sat] * dus < -1e-13 * scale):
            continue
        if free.any():
            fidx = np.flatnonzero(free)
            rhs = nu * (u - g) / tau - flux
            A = np.zeros((n, fidx.size))
            A[tail[fidx], np.arange(fidx.size)] = w[fidx]
            A[head[fidx], np.arange(fidx.size)] = -w[fidx]
            x = np.linalg.lstsq(A, rhs, rcond=None)[0]
            if np.max(np.abs(x)) > 1.0 + 1e-12:
                res = optimize.linprog(
                    np.zeros(fidx.size), A_eq=A, b_eq=rhs, bounds=(-1.0, 1.0), method="highs"
                )
                if res.status != 0:
                    continue
                x = res.x
                x = x + np.linalg.lstsq(A, rhs - A @ x, rcond=None)[0]
            X[fidx] = np.clip(x, -1.0, 1.0)
        yield X


# -- primal-dual splitting ----------------------------------------------------

def _pdhg(space, g, p, tau, X0, n_iter, state=None, L2=None):
    """Accelerated primal-dual iterations; resumable through ``state``."""
    alpha = _tangent_exponent(space)
    if state is None:
        if L2 is None:
            L2 = operator_norm_sq(space)
        L = 1.01 * np.sqrt(tau * L2)
        s = sig = 1.0 / L if L > 0 else 1.0
        Y = _from_field(space, X0)
        u = g - tau * _Kadj(space, Y)
        state = {"u": u, "ubar": u.copy(), "Y": Y, "s": s, "sig": sig}
    u, ubar, Y, s, sig = state["u"], state["ubar"], state["Y"], state["s"], state["sig"]
    for _ in range(n_iter):
        Y = prox_conjugate(Y + sig * _K(space, ubar), sig, p, alpha)
        u_old = u
        z = u - s * tau * _Kadj(space, Y)
        u = (z + s * g) / (1.0 + s)
        theta = 1.0 / np.sqrt(1.0 + 2.0 * s)
        s *= theta
        sig /= theta
        ubar = u + theta * (u - u_old)
    state.update(u=u, ubar=ubar, Y=Y, s=s, sig=sig)
    return state


def resolvent_step(
    space,
    g,
    p,
    tau,
    inner_tol=1e-9,
    inner_max_iters=200000,
    X0=None,
    cert_tol=1e-8,
    polish=True,
    chunk=200,
):
    """One implicit Euler step ``u+ = argmin Ch_p + (1/(2 tau))||. - g||^2``.

    Parameters
    ----------
    space : WeightedGraphSpace or FinslerGridSpace
    g : array_like
        Previous state.
    p : float
        Energy exponent, ``p >= 1``.
    tau : float
        Time step.
    inner_tol : float
        Target relative duality gap ``(primal - dual) / (1 + |primal|)``.
    inner_max_iters : int
        Budget of primal-dual iterations.
    X0 : array_like, optional
        Warm-start dual field (e.g. the previous step's certificate).
    cert_tol : float
        Tolerance stored on the returned certificate.
    polish : bool
        Enable the exact active-set / Newton stages.

    Returns
    -------
    ResolventSolution

    Raises
    ------
    ResolventError
        If the gap target is not met within the budget; carries the best
        gap and candidate.
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    if not tau > 0:
        raise ValueError("tau must be positive")
    g = space.check_function(g)
    _support_check(space, p)
    X0 = space.zero_field() if X0 is None else space.check_field(X0)

    best = {"gap": np.inf}
    total_iters = 0
    scale_g = max(1.0, float(np.max(np.abs(g))))

    def consider(X, method):
        # a candidate is final when the gap target is met and its certificate accepts
        u = primal_from_dual(space, X, g, tau)
        primal, dual, gap = duality_gap(space, u, X, g, p, tau)
        if gap < best["gap"]:
            best.update(gap=gap, u=u, X=X, method=method, primal=primal, dual=dual)
        if gap > inner_tol:
            return False
        cert = verify_certificate(space, u, (g - u) / tau, X, p, cert_tol)
        if cert.accepts:
            best.update(gap=gap, u=u, X=X, method=method, primal=primal, dual=dual, cert=cert)
            return True
        return False

    def finish():
        u, X = best["u"], best["X"]
        cert = best.get("cert") or verify_certificate(space, u, (g - u) / tau, X, p, cert_tol)
        return ResolventSolution(
            u_next=u, X=X, gap=best["gap"], iterations=total_iters, certificate=cert,
            method=best["method"], primal=best["primal"], dual=best["dual"],
        )

    if np.all(space.differential(g) == 0):
        consider(space.zero_field(), "trivial")
        return finish()

    is_graph = isinstance(space, WeightedGraphSpace)
    exact = polish and (p > 1 or (is_graph and space.n_nodes <= 4 * DENSE_LIMIT))

    def try_polish(u_guess, Y_guess):
        nonlocal total_iters
        if not exact:
            return False
        if p == 1:
            for X in polish_tv_graph(space, g, tau, u_guess, scale=scale_g):
                if consider(X, "active-set"):
                    return True
            return False
        if p >= 2:
            X, it = newton_primal(space, g, p, tau, u_guess)
        else:
            X, it = newton_dual(space, g, p, tau, Y_guess)
        total_iters += it
        return consider(X, "newton")

    if try_polish(primal_from_dual(space, X0, g, tau), _from_field(space, X0)):
        return finish()
    if consider(X0, "warm-start"):
        return finish()

    state = None
    L2 = operator_norm_sq(space)
    while total_iters < inner_max_iters:
        n = min(chunk, inner_max_iters - total_iters)
        state = _pdhg(space, g, p, tau, X0, n, state, L2)
        total_iters += n
        X = _to_field(space, state["Y"])
        if consider(X, "pdhg") or (not exact and best["gap"] <= inner_tol):
            return finish()
        if try_polish(state["u"], state["Y"]):
            return finish()
        chunk = min(2 * chunk, 5000)
    if best["gap"] <= inner_tol:
        log.warning("gap target met but certificate rejects (gap %.3e)", best["gap"])
        return finish()
    raise ResolventError("resolvent did not converge", best["gap"], total_iters, best)
