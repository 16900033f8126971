import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from psmdetect import _kernels  # noqa: E402

ACCEPTANCE_LINES = []


@pytest.fixture(params=sorted(_kernels.backends()))
def backend(request, monkeypatch):
    """Route the package's kernels through each importable backend."""
    mod = _kernels.backends()[request.param]
    monkeypatch.setattr(_kernels, "pair_counts", mod.pair_counts)
    monkeypatch.setattr(_kernels, "smo_solve", mod.smo_solve)
    return request.param


@pytest.fixture
def acceptance_report():
    def report(criterion, ok, detail=""):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
