import numpy as np
import pytest

from hilbert_rwm.spectral import PowerLaw


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def pl1():
    return PowerLaw(1.0, 1.0)


# one summary line per acceptance criterion, printed at the end of the session
CRITERIA: dict[int, tuple[str, bool, str]] = {}


@pytest.fixture
def record():
    def _record(number: int, title: str, passed: bool, detail: str):
        CRITERIA[number] = (title, bool(passed), detail)
        return passed
    return _record


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        title, ok, detail = CRITERIA[n]
        terminalreporter.write_line(f"criterion {n:2d} [{'PASS' if ok else 'FAIL'}] {title}: {detail}")
