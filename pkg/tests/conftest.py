import functools

import pytest

from spherevortex.field import build_grid
from spherevortex.green import GreenOperator


@functools.lru_cache(maxsize=None)
def operator(n_phi, n_theta):
    return GreenOperator(build_grid(n_phi, n_theta))


@pytest.fixture(scope="session")
def gp32():
    return operator(32, 16)


@pytest.fixture(scope="session")
def gp64():
    return operator(64, 32)


ACCEPTANCE_LINES = {}


@pytest.fixture(scope="session")
def record():
    """Store one PASS/FAIL line per acceptance criterion for the terminal summary."""
    def _record(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES[number] = line
        print(line)
        return ok
    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])
