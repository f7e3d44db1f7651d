"""Shared test plumbing: the acceptance-criterion reporter.

Acceptance tests record one entry per criterion; the terminal summary prints
them as PASS/FAIL lines so a full run shows the checklist at a glance.
"""

import pytest

_CRITERIA: list[tuple[str, bool, str]] = []


def record_criterion(name: str, passed: bool, detail: str = "") -> None:
    _CRITERIA.append((name, passed, detail))


@pytest.fixture
def criterion():
    """Record and assert one acceptance criterion."""

    def check(name: str, passed: bool, detail: str = ""):
        record_criterion(name, passed, detail)
        assert passed, f"{name} failed: {detail}"

    return check


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in _CRITERIA:
        status = "PASS" if passed else "FAIL"
        suffix = f"  [{detail}]" if detail else ""
        terminalreporter.write_line(f"{status}  {name}{suffix}")
