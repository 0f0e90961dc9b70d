import numpy as np
import pytest
from hypothesis import strategies as st

from mvlmm.model import GroupedBivariateData, VarianceParams, theta_from_block


def random_data(rng, n_groups, sizes=None, t1=2, t2=2, p1=2, p2=2, scale=3.0):
    """Small random instance with an intercept column in every design."""
    if sizes is None:
        sizes = rng.integers(2, 5, size=n_groups)
    g = np.repeat(np.arange(n_groups), sizes)
    N = g.size

    def design(p):
        return np.column_stack([np.ones(N), rng.normal(size=(N, p - 1))]) if p > 1 else np.ones((N, 1))

    X1, X2 = design(p1), design(p2)
    z1, z2 = design(t1), design(t2)
    y1 = scale * rng.normal(size=N) + X1 @ rng.normal(size=p1)
    y2 = scale * rng.normal(size=N) + X2 @ rng.normal(size=p2)
    return GroupedBivariateData(y1, y2, X1, X2, z1, z2, g)


def random_params(rng, t1=2, t2=2, max_sv=0.9):
    def theta(t):
        b = np.tril(rng.normal(size=(t, t)))
        b[np.diag_indices(t)] = rng.uniform(0.3, 2.0, size=t)
        return theta_from_block(b)

    rho = rng.uniform(-1, 1, size=(t1, t2))
    rho *= rng.uniform(0.0, max_sv) / max(np.linalg.norm(rho, 2), 1e-12)
    s1, s2 = rng.uniform(0.3, 3.0, size=2)
    return VarianceParams(theta(t1), theta(t2), rho, s1, s2)


@st.composite
def instances(draw, max_groups=5):
    """``(data, params, beta)`` over the small-instance grid used by the oracle checks."""
    seed = draw(st.integers(0, 2 ** 32 - 1))
    rng = np.random.default_rng(seed)
    n = draw(st.integers(2, max_groups))
    sizes = [draw(st.integers(2, 4)) for _ in range(n)]
    t1, t2 = draw(st.sampled_from([1, 2])), draw(st.sampled_from([1, 2]))
    p1, p2 = draw(st.integers(1, 3)), draw(st.integers(1, 3))
    data = random_data(rng, n, sizes, t1, t2, p1, p2)
    params = random_params(rng, t1, t2)
    beta = rng.normal(size=p1 + p2)
    return data, params, beta


@pytest.fixture
def rng():
    return np.random.default_rng(20160101)


@pytest.fixture
def small(rng):
    return random_data(rng, 4), random_params(rng)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
