"""Shared fixtures: bundled systems and their (expensive) runs, cached per session."""
from __future__ import annotations

import pytest

from qsslab import io
from qsslab.diagnostics import diagnose_failure
from qsslab.simulators import run_long_term, run_qss

ACCEPTANCE: dict = {}


def record(number: int, passed: bool, detail: str) -> None:
    """Remember one acceptance verdict for the terminal summary."""
    ACCEPTANCE[number] = (passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def sys9():
    return io.parse_case("ieee9_stressed")


@pytest.fixture(scope="session")
def sys14():
    return io.parse_case("ieee14_stable")


@pytest.fixture(scope="session")
def sysc2():
    return io.parse_case("cause2_hopf")


@pytest.fixture(scope="session")
def runs9(sys9):
    return run_long_term(sys9), run_qss(sys9)


@pytest.fixture(scope="session")
def runs14(sys14):
    return run_long_term(sys14), run_qss(sys14)


@pytest.fixture(scope="session")
def runsc2(sysc2):
    return run_long_term(sysc2), run_qss(sysc2)


@pytest.fixture(scope="session")
def diag14(sys14, runs14):
    return diagnose_failure(sys14, *runs14)


@pytest.fixture(scope="session")
def diag9(sys9, runs9):
    return diagnose_failure(sys9, *runs9)


@pytest.fixture(scope="session")
def diagc2(sysc2, runsc2):
    return diagnose_failure(sysc2, *runsc2)
