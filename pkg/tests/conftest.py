import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from cheegerflow.space import FinslerGridSpace, WeightedGraphSpace

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def random_graph(rng, n, density=0.4, connected=False, unit=False):
    """Random weighted graph; optionally forced connected through a random spanning path."""
    W = (rng.random((n, n)) < density) * rng.uniform(0.2, 2.0, (n, n))
    if connected:
        perm = rng.permutation(n)
        W[perm[:-1], perm[1:]] = rng.uniform(0.2, 2.0, n - 1)
    W = np.triu(W, 1)
    W = W + W.T
    if unit:
        W = (W > 0).astype(float)
    nu = np.ones(n) if unit else rng.uniform(0.5, 1.5, n)
    return WeightedGraphSpace.from_weight_matrix(W, nu=nu)


def random_grid(rng, shape, alpha=2.0):
    dim = len(shape)
    return FinslerGridSpace(
        shape,
        h=float(rng.uniform(0.1, 1.0)),
        omega=rng.uniform(0.5, 1.5, shape),
        alpha=alpha,
        scales=rng.uniform(0.5, 2.0, dim),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance lines, repeated at the end of the run
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
