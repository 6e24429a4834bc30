import csv
import json

import numpy as np
import pytest
from scipy.optimize import brentq

from cheegerflow.flow import (
    CSV_COLUMNS,
    FlowConfig,
    certificates_accepted,
    check_comparison,
    check_evi,
    check_tv_regularity,
    check_variational_solution,
    compare_trajectories,
    dissipation_violations,
    evi_residuals,
    evolve,
    format_float,
    mass_drift,
    mass_series,
)
from cheegerflow.functionals import energy
from cheegerflow.space import FinslerGridSpace, path_graph, two_point_space
from conftest import random_graph

U0 = np.array([1.0, -1.0])


def two_point_step(g, p, tau):
    """Exact implicit Euler step for ``(s, -s)``: ``s + tau (2 s)^(p-1) = g``."""
    if p == 1:
        return max(g - tau, 0.0)
    return brentq(lambda s: s + tau * (2 * s) ** (p - 1) - g, 0.0, g, xtol=1e-300, rtol=1e-15)


def two_point_oracle(p, tau, n):
    s = [1.0]
    for _ in range(n):
        s.append(two_point_step(s[-1], p, tau) if s[-1] > 0 else 0.0)
    return np.array(s)


# -- configuration -------------------------------------------------------------

def test_config_validation():
    with pytest.raises(ValueError):
        FlowConfig(p=0.5)
    with pytest.raises(ValueError):
        FlowConfig(tau=0.0)
    with pytest.raises(ValueError):
        FlowConfig(inner_tol=0.0)
    with pytest.raises(ValueError):
        FlowConfig(mode="adaptive")
    assert FlowConfig(tau=0.1, t_final=1.0).n_steps == 10


# -- analytic two-point trajectories ---------------------------------------------

def test_constant_is_stationary():
    sp = path_graph(4)
    traj = evolve(sp, np.full(4, 0.3), FlowConfig(p=1.5, tau=0.1, t_final=1.0, stop_at_extinction=False))
    assert len(traj) == 11
    np.testing.assert_array_equal(traj.states, np.full((11, 4), 0.3))
    assert traj.extinction_index == 0


def test_two_point_tv_is_exact():
    traj = evolve(two_point_space(), U0, FlowConfig(p=1, tau=1e-3, t_final=1.5))
    k = np.arange(len(traj))
    np.testing.assert_allclose(traj.states[:, 0], np.maximum(1 - k * 1e-3, 0), atol=1e-12)
    assert traj.extinction_time == pytest.approx(1.0, abs=2e-3)
    assert np.all(np.diff(traj.times) > 0)


@pytest.mark.parametrize("p", [1.5, 2.0, 3.0])
def test_two_point_matches_scalar_recursion(p):
    tau = 1e-2
    traj = evolve(two_point_space(), U0, FlowConfig(p=p, tau=tau, t_final=2.0))
    s = two_point_oracle(p, tau, len(traj) - 1)
    np.testing.assert_allclose(traj.states[:, 0], s, atol=1e-9)
    np.testing.assert_allclose(traj.states[:, 1], -s, atol=1e-9)


def test_two_point_heat_tracks_exponential():
    traj = evolve(two_point_space(), U0, FlowConfig(p=2, tau=1e-3, t_final=2.0))
    exact = np.sqrt(2) * np.exp(-2 * traj.times)
    rel = np.abs(traj.norms() - exact) / exact
    assert rel.max() <= 4 * 1e-3 * 2.0  # first-order in tau over [0, 2]


def test_p15_discrete_extinction_lags_continuum():
    # the continuum dies at sqrt(2); implicit Euler decays geometrically at the end
    traj = evolve(two_point_space(), U0, FlowConfig(p=1.5, tau=1e-3, t_final=2.0))
    s = two_point_oracle(1.5, 1e-3, 1600)
    eps = 1e-9 * np.sqrt(2)
    k_oracle = int(np.argmax(np.sqrt(2) * s <= eps))
    assert traj.extinction_index == k_oracle
    assert traj.extinction_time > np.sqrt(2)


# -- step-wise properties --------------------------------------------------------

def _random_flows(rng, count, p_values=(1.0, 1.5, 2.0, 3.0), nonneg=False):
    for i in range(count):
        sp = random_graph(rng, int(rng.integers(2, 12)), connected=True)
        u0 = rng.standard_normal(sp.n_nodes) * 2
        if nonneg:
            u0 = np.abs(u0)
        p = p_values[i % len(p_values)]
        cfg = FlowConfig(p=p, tau=float(rng.choice([0.01, 0.05])), t_final=0.5)
        yield evolve(sp, u0, cfg, raise_on_error=True)


def _scale(traj):
    return max(1.0, np.abs(traj.states).max(), traj.energies().max())


def test_stepwise_properties(rng):
    for traj in _random_flows(rng, 12):
        sc = _scale(traj)
        assert certificates_accepted(traj)
        assert dissipation_violations(traj).max(initial=0.0) <= 1e-8 * sc
        assert mass_drift(traj) <= 1e-12 * max(1.0, np.abs(traj.states).max()) * traj.space.total_measure
        d = traj.distance_to_reference()
        assert np.all(np.diff(d) <= 1e-8 * sc)
        assert traj.gaps.max() <= traj.config.inner_tol


def test_mass_zero_for_mean_zero():
    traj = evolve(two_point_space(), U0, FlowConfig(p=1, tau=1e-2, t_final=1.5))
    assert np.all(mass_series(traj) == 0.0)


def test_evi(rng):
    traj = evolve(two_point_space(), U0, FlowConfig(p=1, tau=1e-2, t_final=1.2))
    assert check_evi(traj, np.zeros(2)) <= 1e-8
    for k in (0, 5, 20):
        assert evi_residuals(traj, traj.states[k + 1])[k] == pytest.approx(0.0, abs=1e-14)
    for traj in _random_flows(rng, 8):
        for _ in range(5):
            w = rng.standard_normal(traj.space.n_nodes) * 3
            assert check_evi(traj, w) <= 1e-8 * max(_scale(traj), energy(traj.space, w, traj.config.p))


def test_variational_solution(rng):
    traj = evolve(two_point_space(), U0, FlowConfig(p=1, tau=1e-2, t_final=1.2))
    assert check_variational_solution(traj, traj.states) == pytest.approx(0.0, abs=1e-12)
    const = np.repeat(U0[None, :], len(traj), axis=0)
    assert check_variational_solution(traj, const) >= 0.0
    for traj in _random_flows(rng, 8):
        n = traj.space.n_nodes
        a, b = rng.standard_normal((2, n))
        V = a[None, :] + np.sin(3 * traj.times)[:, None] * b[None, :]
        assert check_variational_solution(traj, V) >= -1e-6
    with pytest.raises(ValueError):
        check_variational_solution(traj, V[:-1])


def test_comparison(rng):
    sp = random_graph(rng, 8, connected=True)
    cfg = FlowConfig(p=1.5, tau=0.05, t_final=0.5)
    a = rng.standard_normal(8)
    b = a + np.abs(rng.standard_normal(8))
    for r in (1, 2, np.inf):
        rep = check_comparison(sp, a, b, cfg, r)
        assert rep.initial == 0.0
        assert rep.series.max() <= 1e-8
        assert rep.contraction_violation <= 1e-8
    same = check_comparison(sp, a, a, cfg, 2)
    assert np.all(same.series == 0.0)


def test_comparison_report_dict():
    sp = two_point_space()
    cfg = FlowConfig(p=2, tau=0.1, t_final=0.3, stop_at_extinction=False)
    ta = evolve(sp, [1.0, 0.0], cfg)
    tb = evolve(sp, [0.0, 0.0], cfg)
    d = compare_trajectories(ta, tb, 2).to_dict()
    assert len(d["series"]) == 4 and d["r"] == 2.0


def test_tv_regularity():
    with pytest.raises(ValueError):
        check_tv_regularity(evolve(two_point_space(), U0, FlowConfig(p=2, tau=0.1, t_final=0.2)))
    const = evolve(path_graph(3), np.full(3, 2.0), FlowConfig(p=1, tau=0.1, t_final=0.5,
                                                            stop_at_extinction=False))
    assert check_tv_regularity(const).passed
    traj = evolve(two_point_space(), U0, FlowConfig(p=1, tau=1e-2, t_final=1.5))
    rep = check_tv_regularity(traj)
    assert not rep.nonnegative
    assert rep.derivative_violation <= 1e-6
    rng = np.random.default_rng(1)
    for _ in range(5):
        u0 = rng.random(3)
        rep = check_tv_regularity(evolve(path_graph(3), u0, FlowConfig(p=1, tau=1e-2, t_final=1.0)))
        assert rep.nonnegative and rep.passed


def test_truncation_on_solver_failure():
    # grid TV has no exact polishing stage; a tiny budget cannot reach the gap
    sp = FinslerGridSpace((5, 5))
    u0 = np.random.default_rng(0).standard_normal(25)
    cfg = FlowConfig(p=1, tau=0.1, t_final=0.5, inner_tol=1e-14, inner_max_iters=10)
    traj = evolve(sp, u0, cfg)
    assert traj.failed and len(traj) == 1
    assert "best relative gap" in traj.error
    with pytest.raises(Exception):
        evolve(sp, u0, cfg, raise_on_error=True)


# -- export ----------------------------------------------------------------------

def test_csv_and_certificates(tmp_path):
    traj = evolve(two_point_space(), U0, FlowConfig(p=1, tau=0.25, t_final=1.0))
    path = tmp_path / "traj.csv"
    traj.to_csv(path)
    rows = list(csv.reader(path.open()))
    assert tuple(rows[0]) == CSV_COLUMNS
    assert len(rows) == len(traj) + 1
    assert rows[1][CSV_COLUMNS.index("dudt_l2")] == "nan"
    assert float(rows[2][CSV_COLUMNS.index("l2")]) == traj.norms()[1]
    traj.dump_certificates(tmp_path / "certs.json")
    certs = json.loads((tmp_path / "certs.json").read_text())
    assert certs[0] is None and all(c["accepts"] for c in certs[1:])
    assert format_float(0.1) == "0.10000000000000001"
