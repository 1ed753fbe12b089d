import numpy as np
import pytest

from dipolar_qip.io import standin_system
from dipolar_qip.spin import build_hamiltonian, eigenbasis, find_transition, transitions


@pytest.fixture(scope="session")
def standin():
    sys = standin_system()
    eb = eigenbasis(build_hamiltonian(sys))
    trs = transitions(eb)
    return sys, eb, trs


@pytest.fixture(scope="session")
def pops_index(standin):
    _, eb, trs = standin
    return find_transition(trs, eb, "0000", "0100")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
