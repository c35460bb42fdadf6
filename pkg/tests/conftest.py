import time

import pytest

_LINES = []


class Criterion:
    def __init__(self, label, budget_s):
        self.label = label
        self.budget_s = budget_s
        self.started = time.perf_counter()

    def conclude(self, ok, detail=""):
        elapsed = time.perf_counter() - self.started
        in_time = self.budget_s is None or elapsed < self.budget_s
        verdict = "PASS" if ok and in_time else "FAIL"
        budget = "" if self.budget_s is None else f" / {self.budget_s:g} s"
        line = f"[{verdict}] {self.label}: {detail} ({elapsed:.1f} s{budget})"
        if ok and not in_time:
            line += " over time budget"
        _LINES.append(line)
        print(line)
        assert ok, line
        assert in_time, line


@pytest.fixture()
def criterion():
    return Criterion


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
