import time
from contextlib import contextmanager

import pytest

_CRITERIA = {}


class Criterion:
    def __init__(self, number, title, budget):
        self.number, self.title, self.budget = number, title, budget
        self.details = []

    def note(self, text):
        self.details.append(text)


@contextmanager
def _criterion(number, title, budget):
    """Time one acceptance criterion and record a PASS/FAIL line for it."""
    crit = Criterion(number, title, budget)
    start = time.perf_counter()
    ok = False
    try:
        yield crit
        ok = True
    except AssertionError as exc:
        crit.note(f"assertion failed: {str(exc).splitlines()[0] if str(exc) else 'see traceback'}")
        raise
    finally:
        elapsed = time.perf_counter() - start
        in_time = elapsed <= budget
        if not in_time:
            crit.note(f"over the {budget:g} s budget")
        status = "PASS" if ok and in_time else "FAIL"
        _CRITERIA[number] = f"criterion {number} [{status}] {title}: {'; '.join(crit.details)} ({elapsed:.1f} s)"
    assert in_time, f"criterion {number} took {elapsed:.1f} s, budget {budget:g} s"


@pytest.fixture
def criterion():
    return _criterion


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        terminalreporter.write_line(_CRITERIA[number])
