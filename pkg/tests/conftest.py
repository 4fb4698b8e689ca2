import os

from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", deadline=None, max_examples=300,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

import pytest

_VERDICTS = []


@pytest.fixture
def verdict():
    """Record one acceptance line, then fail the test if the criterion is unmet."""
    def record(number, title, ok, detail):
        _VERDICTS.append((number, title, ok, detail))
        assert ok, f"criterion {number} ({title}) failed: {detail}"
    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, ok, detail in sorted(_VERDICTS):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {number:>2}. {title}: {detail}")
