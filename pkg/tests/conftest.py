import numpy as np
import pytest

from space_erase.objective import ConceptMatrices, ErasureObjective


def random_objective(rng, n, m, n_erase, n_preserve, lambda1=1.0, lambda2=1.0, erase_scale=1.0,
                     unit=False):
    W0 = rng.standard_normal((n, m)) / np.sqrt(m)
    cols = [rng.standard_normal((m, k)) for k in (n_erase, n_erase, n_preserve)]
    if unit:
        cols = [c / np.linalg.norm(c, axis=0, keepdims=True) if c.shape[1] else c for c in cols]
    return ErasureObjective(W0, ConceptMatrices(*cols), lambda1, lambda2, erase_scale)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def make_objective():
    return random_objective


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
