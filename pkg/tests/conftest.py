import numpy as np
import pytest

from bpre_lab.environment import lognormal_geometric, two_atom_oracle_spec
from bpre_lab.offspring import OffspringLaw


@pytest.fixture(scope="session")
def spec():
    return lognormal_geometric(1.0)


@pytest.fixture(scope="session")
def two_atom():
    return two_atom_oracle_spec()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def geometric_env(n, seed=0):
    """A fixed environment of geometric laws with lognormal means."""
    g = np.random.default_rng(seed)
    return [OffspringLaw.geometric_with_mean(float(np.exp(x))) for x in g.normal(0.0, 1.0, n)]


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
