import numpy as np
import pytest
from hypothesis import settings, strategies as st

from rbpsc.instance import ProblemInstance, SiteModel, generate_random_instance

settings.register_profile("default", deadline=None, max_examples=25)
settings.load_profile("default")


def single_site(r1=1.0, c=0.0, alpha=0.5):
    site = SiteModel([[1.0]], [[1.0]], [r1], [0.0], [1.0])
    return ProblemInstance(1, [site], [[c]], alpha, (0,))


def two_site(c12=1.0, alpha=0.5):
    """One server at site 1; site 2 pays 3 per period, site 1 pays 1."""
    sites = [SiteModel([[1.0]], [[1.0]], [r], [0.0], [1.0]) for r in (1.0, 3.0)]
    cost = np.array([[0.0, c12], [0.0, 0.0]])
    return ProblemInstance(1, sites, cost, alpha, (0, 1))


def cycle_instance(alpha=0.5):
    """Deterministic two-state flip on one site."""
    flip = [[0.0, 1.0], [1.0, 0.0]]
    site = SiteModel(flip, flip, [1.0, 0.0], [0.0, 0.0], [1.0, 0.0])
    return ProblemInstance(1, [site], [[0.0]], alpha, (0,))


@st.composite
def small_instances(draw, max_sites=3, max_states=3, alpha=None):
    n = draw(st.integers(1, max_sites))
    m = draw(st.integers(1, n))
    k = draw(st.integers(1, max_states))
    seed = draw(st.integers(0, 2**31 - 1))
    a = alpha if alpha is not None else draw(st.sampled_from([0.3, 0.5, 0.8, 0.9]))
    return generate_random_instance(seed, n, m, k, cost_scale=draw(st.sampled_from([0.0, 0.5, 2.0])),
                                    discount=a)


@pytest.fixture(scope="session")
def random_small():
    """A handful of fixed small instances shared across modules."""
    return [generate_random_instance(seed, 3, 1 + seed % 2, 1 + seed % 3, discount=0.6 + 0.05 * seed)
            for seed in range(6)]


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
