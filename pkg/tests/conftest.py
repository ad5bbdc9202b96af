import time

import pytest

_LINES = []


class Criterion:
    """Collects the sub-checks of one acceptance criterion and records a
    single PASS/FAIL line for the terminal summary."""

    def __init__(self, key, title, budget=None):
        self.key, self.title, self.budget = key, title, budget
        self.checks = []

    def check(self, label, ok, detail=""):
        self.checks.append((label, bool(ok), detail))
        return ok

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        elapsed = time.perf_counter() - self.start
        if exc is not None:
            self.checks.append(("raised", False, f"{type(exc).__name__}: {exc}"))
        if self.budget is not None:
            self.check("runtime", elapsed <= self.budget, f"{elapsed:.1f}s <= {self.budget:g}s")
        ok = all(c[1] for c in self.checks)
        parts = "; ".join(f"{label}{'' if good else ' FAILED'}: {detail}" for label, good, detail in self.checks)
        line = f"{self.key} {'PASS' if ok else 'FAIL'} {self.title} ({elapsed:.1f}s) {parts}"
        _LINES.append(line)
        print(line)
        if exc is None and not ok:
            failed = [c for c in self.checks if not c[1]]
            raise AssertionError(f"{self.key}: " + "; ".join(f"{lab}: {det}" for lab, _, det in failed))
        return False


@pytest.fixture
def criterion():
    return Criterion


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
