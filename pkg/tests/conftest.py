"""Collects the per-criterion verdict lines of the acceptance suite and prints them at the end."""
import pytest

ACCEPTANCE_LINES = []


@pytest.fixture
def verdict(request):
    """``verdict(ok, detail)`` records one pass/fail line for the calling criterion, then asserts."""
    name = request.node.name

    def record(ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, detail

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
