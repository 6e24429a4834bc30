import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import brentq, minimize_scalar

from cheegerflow.functionals import dual_objective, resolvent_objective, verify_certificate
from cheegerflow.resolvent import (
    ResolventError,
    operator_norm_sq,
    resolvent_step,
    scalar_power_prox,
)
from cheegerflow.space import FinslerGridSpace, path_graph, two_point_space
from conftest import random_graph, random_grid


def test_two_point_tv_example():
    sol = resolvent_step(two_point_space(), [1.0, -1.0], 1, 0.25)
    np.testing.assert_allclose(sol.u_next, [0.75, -0.75], atol=1e-14)
    np.testing.assert_allclose(sol.X, [-1.0], atol=1e-14)
    assert sol.certificate.accepts


def test_constant_data_is_fixed():
    sp = path_graph(5)
    sol = resolvent_step(sp, np.full(5, 2.5), 1.5, 0.3)
    np.testing.assert_array_equal(sol.u_next, np.full(5, 2.5))
    np.testing.assert_array_equal(sol.X, np.zeros(4))


def test_two_point_p2_linear_resolvent():
    # Ch_2(s, -s) = 2 s^2, so the step solves s + 2 tau s = 1
    sol = resolvent_step(two_point_space(), [1.0, -1.0], 2, 0.25)
    np.testing.assert_allclose(sol.u_next, [2 / 3, -2 / 3], atol=1e-12)


@pytest.mark.parametrize("p", [1.0, 1.2, 1.5, 2.0, 3.0, 4.5])
@pytest.mark.parametrize("tau", [0.05, 0.4, 2.0])
def test_two_point_matches_scalar_oracle(p, tau):
    # one edge means a one-dimensional dual; maximise it independently
    sp = two_point_space()
    g = np.array([0.8, -0.3])
    bounds = (-1.0, 1.0) if p == 1 else (-50.0, 50.0)
    res = minimize_scalar(lambda x: -dual_objective(sp, [x], g, p, tau), bounds=bounds,
                          method="bounded", options={"xatol": 1e-13})
    # the bounded search never lands exactly on an active bound
    cands = [(-res.fun, res.x)] + [(dual_objective(sp, [b], g, p, tau), b) for b in bounds]
    best, x_star = max(cands)
    sol = resolvent_step(sp, g, p, tau)
    assert sol.dual == pytest.approx(best, abs=1e-9)
    u_star = g + tau * sp.divergence([x_star])
    np.testing.assert_allclose(sol.u_next, u_star, atol=1e-5)


def test_solution_fields(rng):
    sp = random_graph(rng, 12, connected=True)
    g = rng.standard_normal(12)
    sol = resolvent_step(sp, g, 1.3, 0.2)
    np.testing.assert_array_equal(sol.u_next, g + 0.2 * sp.divergence(sol.X))
    assert sol.certificate.residual_div <= 1e-15 * max(1.0, np.abs(g).max() / 0.2)
    assert sol.gap <= 1e-9
    assert sol.primal >= sol.dual - 1e-12
    assert sp.integrate(sol.u_next) == pytest.approx(sp.integrate(g), abs=1e-12 * np.abs(g).sum())


@pytest.mark.parametrize("p", [1.0, 1.3, 1.5, 2.0, 3.0])
def test_random_graph_certificates(rng, p):
    for _ in range(8):
        sp = random_graph(rng, int(rng.integers(2, 25)), density=0.3)
        g = rng.standard_normal(sp.n_nodes) * rng.uniform(0.1, 5)
        tau = float(rng.uniform(0.01, 1.0))
        sol = resolvent_step(sp, g, p, tau)
        assert sol.gap <= 1e-9
        assert sol.certificate.accepts
        # primal optimality against random perturbations
        f0 = resolvent_objective(sp, sol.u_next, g, p, tau)
        for _ in range(20):
            w = sol.u_next + 1e-3 * rng.standard_normal(sp.n_nodes)
            assert resolvent_objective(sp, w, g, p, tau) >= f0 - 1e-9 * (1 + abs(f0))


def test_warm_start_agrees(rng):
    sp = random_graph(rng, 10, connected=True)
    g = rng.standard_normal(10)
    cold = resolvent_step(sp, g, 1.5, 0.1)
    warm = resolvent_step(sp, g, 1.5, 0.1, X0=cold.X)
    np.testing.assert_allclose(warm.u_next, cold.u_next, atol=1e-6)
    assert warm.certificate.accepts


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_grid_resolvent(rng, p):
    sp = random_grid(rng, (4, 5), alpha=2.0)
    g = rng.standard_normal(sp.n_nodes)
    sol = resolvent_step(sp, g, p, 0.3)
    assert sol.gap <= 1e-9
    assert sol.certificate.accepts


@pytest.mark.parametrize("alpha", [1.0, 2.0, np.inf])
def test_grid_tv_resolvent(alpha):
    rng = np.random.default_rng(5)
    sp = FinslerGridSpace((4, 4), h=1.0, alpha=alpha)
    g = rng.standard_normal(sp.n_nodes)
    sol = resolvent_step(sp, g, 1, 0.2, inner_tol=1e-6)
    assert sol.gap <= 1e-6
    assert sol.certificate.residual_holder <= 1e-12
    assert sol.certificate.residual_div <= 1e-14 * sol.certificate.scale


def test_grid_anisotropic_p_laplacian_unsupported(rng):
    sp = random_grid(rng, (3, 3), alpha=3.0)
    with pytest.raises(NotImplementedError):
        resolvent_step(sp, rng.standard_normal(9), 2.0, 0.1)


def test_non_convergence_reports_best_gap(rng):
    sp = random_graph(rng, 15, connected=True)
    g = rng.standard_normal(15)
    with pytest.raises(ResolventError) as err:
        resolvent_step(sp, g, 1.5, 0.5, inner_max_iters=3, polish=False, chunk=3)
    assert err.value.iterations == 3
    assert err.value.best_gap > 1e-9
    assert np.isfinite(err.value.best_gap)
    assert "best relative gap" in str(err.value)


def test_invalid_arguments():
    sp = two_point_space()
    with pytest.raises(ValueError):
        resolvent_step(sp, [1.0, 0.0], 0.5, 0.1)
    with pytest.raises(ValueError):
        resolvent_step(sp, [1.0, 0.0], 2, 0.0)
    with pytest.raises(ValueError):
        resolvent_step(sp, [1.0, 0.0, 3.0], 2, 0.1)


def test_operator_norm(rng):
    sp = random_graph(rng, 14, connected=True)
    K = np.array([sp._K(e) for e in np.eye(14)]).T
    M = np.sqrt(sp._dual_metric())[:, None]
    Nu = 1 / np.sqrt(sp.nu)[None, :]
    exact = np.linalg.norm(M * K * Nu, 2) ** 2
    assert operator_norm_sq(sp) == pytest.approx(exact, rel=1e-6)


@given(mag=st.floats(1e-12, 1e3), sign=st.sampled_from([-1.0, 1.0]),
       sigma=st.floats(1e-3, 1e2), q=st.floats(1.1, 6.0))
def test_scalar_power_prox_solves_equation(mag, sign, sigma, q):
    y = sign * mag
    r = float(scalar_power_prox(np.array([y]), sigma, q)[0])
    assert np.sign(r) == np.sign(y)
    a = abs(y)
    hi = min(a, (a / sigma) ** (1 / (q - 1)))
    root = brentq(lambda s: s + sigma * s ** (q - 1) - a, 0.0, hi, xtol=1e-300, rtol=1e-15)
    assert abs(abs(r) - root) <= 1e-12 * root


def test_scalar_power_prox_zero():
    np.testing.assert_array_equal(scalar_power_prox(np.zeros(3), 0.5, 1.5), np.zeros(3))
