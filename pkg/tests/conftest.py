import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import HealthCheck, settings

from aaadmm.core import SeparableProblem
from aaadmm.oracles import QuadraticOracle

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def _scalar(G=1.0, x_tilde=0.0, A=1.0, B=1.0, c=0.0, oracle=None):
    oracle = QuadraticOracle(1.0, [0.0]) if oracle is None else oracle
    return SeparableProblem(sp.csr_matrix([[A]]), sp.csr_matrix([[B]]), [c],
                            sp.csr_matrix([[G]]), [x_tilde], oracle)


def _random_convex(seed=1, n=6, q=8, diag_B=True):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((q, n))
    B = np.diag(rng.uniform(0.5, 2.0, q)) if diag_B else \
        np.eye(q) + 0.2 * rng.standard_normal((q, q))
    oracle = QuadraticOracle(rng.uniform(0.5, 2.0, q), rng.standard_normal(q))
    return SeparableProblem(A, B, rng.standard_normal(q), 2.0 * np.eye(n),
                            rng.standard_normal(n), oracle)


@pytest.fixture
def scalar_problem():
    """f = x^2/2, g = z^2/2, A = B = 1, c = 0 unless overridden."""
    return _scalar


@pytest.fixture
def random_convex():
    return _random_convex


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """``criterion(n, ok, detail)`` records a pass/fail line, prints it and asserts ``ok``."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def check(n, ok, detail):
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}"
        lines.append(line)
        print(line)
        assert ok, line

    return check


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
