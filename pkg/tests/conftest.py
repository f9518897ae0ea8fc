import numpy as np
import pytest

from ncscale.operator import MatrixTuple


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def unit(n, i, j):
    E = np.zeros((n, n), dtype=complex)
    E[i, j] = 1
    return E


@pytest.fixture
def explicit_e4():
    """Integer zero-block tuple: span(e1, e2) is mapped into span(e3)."""
    return MatrixTuple([
        [[0, 0, 1], [0, 0, 1j], [1, 1, 0]],
        [[0, 0, 2], [0, 0, 1], [1, -1, 1]],
    ])


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
