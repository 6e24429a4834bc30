"""
Cheeger energies, resolvent objectives and subgradient certificates.

For a node function ``u`` the p-Cheeger energy is ``(1/p) sum nu |du|_*^p``
(``p > 1``) or the total variation (``p = 1``). A subgradient ``v`` of the
energy at ``u`` is certified by a vector field ``X`` with

* ``-div X = v``,
* ``|X|^q <= |du|_*^p`` pointwise (``|X| <= 1`` when ``p = 1``),
* ``int du(X) dnu = int |du|_*^p dnu`` (``int (X, Du) = TV(u)`` when ``p = 1``).
"""

import json
from dataclasses import asdict, dataclass

import numpy as np

from .space import conjugate_exponent

FEASIBILITY_SLACK = 1e-12


def energy(space, u, p):
    """``Ch_p(u)``; equals the total variation for ``p = 1``."""
    if p < 1:
        raise ValueError("p must be >= 1")
    du = space.differential(u)
    if p == 1:
        return space.total_variation(u)
    return float(np.dot(space.nu, space.norm_cotangent(du, p) ** p)) / p


def conjugate_energy(space, X, p):
    """``E*(X) = (1/q) int |X|^q dnu`` for ``p > 1``; the indicator of ``|X| <= 1`` for ``p = 1``."""
    if p == 1:
        return 0.0 if field_sup_norm(space, X) <= 1.0 + FEASIBILITY_SLACK else np.inf
    q = conjugate_exponent(p)
    return float(np.dot(space.nu, space.norm_tangent(X, q) ** q)) / q


def field_sup_norm(space, X):
    """``||X||_inf``: largest pointwise tangent norm (q = inf)."""
    X = np.asarray(X, dtype=float)
    if X.size == 0:
        return 0.0
    return float(space.norm_tangent(X, np.inf).max())


def resolvent_objective(space, u, g, p, tau):
    """``Ch_p(u) + (1/(2 tau)) ||u - g||^2``."""
    if tau <= 0:
        raise ValueError("tau must be positive")
    r = np.asarray(u, dtype=float) - np.asarray(g, dtype=float)
    return energy(space, u, p) + space.inner(r, r) / (2.0 * tau)


def dual_objective(space, X, g, p, tau):
    """Fenchel-Rockafellar dual value of the resolvent problem.

    ``-E*(X) - (1/(2 tau)) ||tau div X + g||^2 + (1/(2 tau)) ||g||^2``; never
    exceeds :func:`resolvent_objective` and is ``-inf`` for an infeasible
    field when ``p = 1``.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    g = np.asarray(g, dtype=float)
    e_star = conjugate_energy(space, X, p)
    if np.isinf(e_star):
        return -np.inf
    z = tau * space.divergence(X) + g
    return -e_star - (space.inner(z, z) - space.inner(g, g)) / (2.0 * tau)


def primal_from_dual(space, X, g, tau):
    """Resolvent candidate ``g + tau div X`` recovered from a dual field."""
    return np.asarray(g, dtype=float) + tau * space.divergence(X)


def duality_gap(space, u, X, g, p, tau):
    """``(primal, dual, relative gap)`` with gap normalised by ``1 + |primal|``."""
    primal = resolvent_objective(space, u, g, p, tau)
    dual = dual_objective(space, X, g, p, tau)
    return primal, dual, (primal - dual) / (1.0 + abs(primal))


@dataclass
class SubgradientCertificate:
    """Residuals of the vector-field characterisation of ``v in dCh_p(u)``."""

    p: float
    tol: float
    residual_div: float
    residual_holder: float
    residual_pairing: float
    scale: float = 1.0

    @property
    def accepts(self):
        bound = self.tol * self.scale
        return (
            self.residual_div <= bound
            and self.residual_holder <= bound
            and self.residual_pairing <= bound
        )

    def to_dict(self):
        out = asdict(self)
        out["accepts"] = self.accepts
        return out

    def to_json(self):
        return json.dumps(
            {k: self.to_dict()[k] for k in
             ("accepts", "residual_div", "residual_holder", "residual_pairing", "p", "tol")}
        )


def verify_certificate(space, u, v, X, p, tol=1e-8):
    """Check the triple ``(u, v, X)`` against the characterisation of ``dCh_p``.

    Residuals are absolute; acceptance compares each one to
    ``tol * max(1, ||u||_inf, ||v||_inf)``.
    """
    u = space.check_function(u)
    v = space.check_function(v)
    X = space.check_field(X)
    du = space.differential(u)
    residual_div = float(np.max(np.abs(v + space.divergence(X)), initial=0.0))
    if p == 1:
        holder = space.norm_tangent(X, np.inf) - 1.0
        pairing_total = space.integrate(space.duality(du, X))
        residual_pairing = abs(pairing_total - space.total_variation(u))
    else:
        q = conjugate_exponent(p)
        holder = space.norm_tangent(X, q) ** q - space.norm_cotangent(du, p) ** p
        lhs = space.integrate(space.duality(du, X))
        residual_pairing = abs(lhs - space.integrate(space.norm_cotangent(du, p) ** p))
    residual_holder = float(np.max(np.maximum(holder, 0.0), initial=0.0))
    scale = max(1.0, float(np.max(np.abs(u), initial=0.0)), float(np.max(np.abs(v), initial=0.0)))
    return SubgradientCertificate(
        p=float(p),
        tol=float(tol),
        residual_div=residual_div,
        residual_holder=residual_holder,
        residual_pairing=float(residual_pairing),
        scale=scale,
    )


def subgradient_membership(space, u, v, p, tol=1e-8, inner_tol=1e-12, **solver_options):
    """Decide ``v in dCh_p(u)`` with one resolvent solve.

    ``v`` is a subgradient at ``u`` exactly when ``u`` minimises
    ``Ch_p(w) + (1/2) ||w - (u + v)||^2``. Returns ``(is_member, solution)``;
    ``solution.X`` certifies the resolvent point.
    """
    from .resolvent import resolvent_step

    u = space.check_function(u)
    v = space.check_function(v)
    sol = resolvent_step(space, u + v, p, 1.0, inner_tol=inner_tol, **solver_options)
    scale = max(1.0, float(np.abs(u).max()), float(np.abs(v).max()))
    return space.norm(sol.u_next - u) <= tol * scale, sol
