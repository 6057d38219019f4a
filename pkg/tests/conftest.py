import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

VERDICTS = []


@pytest.fixture
def verdict(capsys):
    """Record and print one PASS/FAIL line for an acceptance criterion, then assert it."""
    def record(n, ok, detail):
        line = f"[criterion {n}] {'PASS' if ok else 'FAIL'}: {detail}"
        VERDICTS.append(line)
        with capsys.disabled():
            print("\n" + line)
        assert ok, detail
    return record


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(VERDICTS):
            terminalreporter.write_line(line)
