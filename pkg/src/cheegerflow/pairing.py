"""
Discrete Anzellotti pairing ``(X, Du)``.

For node functions the pairing is the node measure ``nu(x) du(X)(x)``, the
pointwise duality of the differential with a bounded field. Its density
with respect to the variation measure ``|Du|`` is ``theta``; it is left
undefined (NaN) where ``|du|`` vanishes.
"""

from dataclasses import dataclass

import numpy as np

from .functionals import field_sup_norm


@dataclass
class PairingResult:
    """Pairing measure, its ``|Du|`` density and the set where it is undefined."""

    measure: np.ndarray
    theta: np.ndarray
    undefined: np.ndarray

    @property
    def total(self):
        return float(self.measure.sum())


def _density(space, du, X):
    dens = space.duality(du, X)
    mag = space.norm_cotangent(du, 1.0)
    undefined = mag <= 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        theta = np.where(undefined, np.nan, dens / np.where(undefined, 1.0, mag))
    return dens, theta, undefined


def pairing(space, X, u):
    """Pairing measure ``(X, Du)`` with density ``theta``.

    Examples
    --------
    >>> from cheegerflow.space import two_point_space
    >>> sp = two_point_space()
    >>> pairing(sp, [-1.0], [1.0, -1.0]).measure
    array([1., 1.])
    """
    X = space.check_field(X)
    u = space.check_function(u)
    dens, theta, undefined = _density(space, space.differential(u), X)
    return PairingResult(measure=space.nu * dens, theta=theta, undefined=undefined)


def gauss_green_residual(space, X, u):
    """``|int u div X dnu + (X, Du)(space)|``; zero up to rounding."""
    X = space.check_field(X)
    u = space.check_function(u)
    return abs(space.integrate(u * space.divergence(X)) + pairing(space, X, u).total)


def pairing_bound_violation(space, X, u, subset=None):
    """Excess of ``|(X, Du)(B)|`` over ``||X||_inf |Du|(B)``.

    With ``subset=None`` the pointwise form is checked and the largest
    node-wise excess is returned; otherwise the bound for the node set
    ``subset`` (boolean mask or index array).
    """
    X = space.check_field(X)
    u = space.check_function(u)
    meas = pairing(space, X, u).measure
    var = space.variation_measure(u)
    if subset is None:
        local = space.nu * space.duality(space.differential(u), X)
        bound = space.norm_tangent(X, np.inf) * var
        return float(np.max(np.abs(local) - bound, initial=-np.inf))
    sup = field_sup_norm(space, X)
    return float(abs(meas[subset].sum()) - sup * var[subset].sum())


def _levels(u):
    return np.unique(np.asarray(u, dtype=float))


def pairing_coarea(space, X, u, subset=None):
    """Both sides of the pairing coarea formula on the node set ``subset``.

    ``lhs = (X, Du)(B)`` and ``rhs = sum_k (X, D chi_{u > t_k})(B) (t_{k+1} - t_k)``
    over the sorted distinct values ``t_k`` of ``u``. The superlevel sets
    are constant between consecutive values, so the integral over ``t`` is
    this finite sum.
    """
    X = space.check_field(X)
    u = space.check_function(u)
    mask = np.ones(space.n_nodes, bool) if subset is None else _mask(space, subset)
    lhs = float(pairing(space, X, u).measure[mask].sum())
    lv = _levels(u)
    rhs = 0.0
    for lo, hi in zip(lv[:-1], lv[1:]):
        chi = space.indicator(space.superlevel_set(u, lo))
        rhs += float(pairing(space, X, chi).measure[mask].sum()) * (hi - lo)
    return lhs, rhs


def tv_coarea(space, u):
    """``(TV(u), sum_k Per({u > t_k}) (t_{k+1} - t_k))``."""
    u = space.check_function(u)
    lv = _levels(u)
    rhs = 0.0
    for lo, hi in zip(lv[:-1], lv[1:]):
        rhs += space.perimeter(space.superlevel_set(u, lo)) * (hi - lo)
    return space.total_variation(u), rhs


def _mask(space, subset):
    subset = np.asarray(subset)
    if subset.dtype == bool:
        return subset
    mask = np.zeros(space.n_nodes, bool)
    mask[subset] = True
    return mask


def _theta_discrepancy(a, b):
    both = ~np.isnan(a) & ~np.isnan(b)
    if not both.any():
        return 0.0
    return float(np.max(np.abs(a[both] - b[both])))


def theta_levelset_identity(space, X, u, t):
    """Largest ``|theta(X, Du) - theta(X, D chi_{u > t})|`` where both exist.

    Exact for two-valued ``u``. For general data a node can see edges that
    cross other levels, and the discrepancy is reported rather than assumed
    to vanish.
    """
    u = space.check_function(u)
    if np.any(u == t):
        raise ValueError("t must not coincide with a value of u")
    a = pairing(space, X, u).theta
    b = pairing(space, X, space.indicator(space.superlevel_set(u, t))).theta
    return _theta_discrepancy(a, b)


def theta_midlevel_discrepancies(space, X, u):
    """:func:`theta_levelset_identity` at every midpoint between distinct values."""
    lv = _levels(u)
    return np.array([theta_levelset_identity(space, X, u, 0.5 * (a + b)) for a, b in zip(lv[:-1], lv[1:])])


def piecewise_linear(knots, values):
    """Piecewise-linear map through ``(knots, values)`` with linear extrapolation.

    Raises ``ValueError`` unless the map is strictly increasing.
    """
    knots = np.asarray(knots, dtype=float)
    values = np.asarray(values, dtype=float)
    if knots.size < 2 or np.any(np.diff(knots) <= 0) or np.any(np.diff(values) <= 0):
        raise ValueError("need >= 2 strictly increasing knots and values")
    s_lo = (values[1] - values[0]) / (knots[1] - knots[0])
    s_hi = (values[-1] - values[-2]) / (knots[-1] - knots[-2])

    def T(s):
        s = np.asarray(s, dtype=float)
        out = np.interp(s, knots, values)
        out = np.where(s < knots[0], values[0] + s_lo * (s - knots[0]), out)
        return np.where(s > knots[-1], values[-1] + s_hi * (s - knots[-1]), out)

    return T


def theta_monotone_invariance(space, X, u, T):
    """Largest ``|theta(X, D(T o u)) - theta(X, Du)|`` over nodes with ``|du| > 0``.

    Vanishes when ``T`` is affine or ``u`` takes two values (then
    ``d(T o u)`` is a positive multiple of ``du``). For a nonlinear ``T``
    and many-valued ``u`` the node density mixes edges rescaled by
    different difference quotients of ``T``, and the result is in general
    nonzero; see :func:`edge_theta`.
    """
    u = space.check_function(u)
    a = pairing(space, X, u).theta
    b = pairing(space, X, np.asarray(T(u), dtype=float)).theta
    return _theta_discrepancy(a, b)


def edge_theta(space, X, u):
    """Edge-wise density ``sign(du_e) X_e`` (NaN where ``du_e = 0``), graphs only.

    Invariant under every strictly increasing ``T``.
    """
    X = space.check_field(X)
    du = space.differential(space.check_function(u))
    return np.where(du != 0, np.sign(du) * X, np.nan)
