import numpy as np
import pytest

from ssdposer.nn import default_dtype
from ssdposer.skeleton import default_skeleton


@pytest.fixture
def f64():
    """Run the test body with float64 as the default tensor dtype."""
    with default_dtype(np.float64):
        yield


@pytest.fixture(scope="session")
def skel():
    return default_skeleton()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- acceptance summary -------------------------------------------------------

_CRITERIA: dict[int, tuple[str, bool, str]] = {}


@pytest.fixture
def criterion(request):
    """Record a pass/fail line for one acceptance criterion.

    Usage: ``criterion(3, "rotation/FK suite", ok, "detail")``; a criterion
    split across several tests passes only if every part passes.
    """
    def record(number: int, title: str, ok: bool, detail: str = "") -> None:
        prev = _CRITERIA.get(number)
        if prev is not None:
            ok = ok and prev[1]
            detail = "; ".join(d for d in (prev[2], detail) if d)
        _CRITERIA[number] = (title, bool(ok), detail)
        print(f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} {detail}")
    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, ok, detail = _CRITERIA[number]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {number}. {title}: {detail}")
