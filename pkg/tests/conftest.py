"""Shared fixtures and the acceptance-summary terminal hook."""

from __future__ import annotations

import numpy as np
import pytest

from fdialab import estimation, grid

# ---------------------------------------------------------------------------
# acceptance reporting: tests in test_acceptance.py register one line per
# criterion; the summary prints them all, pass or fail, at the end of the run.
# ---------------------------------------------------------------------------

_CRITERIA: dict[int, tuple[str, bool, str]] = {}


def record_criterion(number: int, title: str, passed: bool, detail: str = "") -> None:
    _CRITERIA[number] = (title, bool(passed), detail)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, passed, detail = _CRITERIA[number]
        verdict = "PASS" if passed else "FAIL"
        line = f"criterion {number:2d} [{verdict}] {title}"
        if detail:
            line += f" — {detail}"
        terminalreporter.write_line(line)


# ---------------------------------------------------------------------------
# grid fixtures
# ---------------------------------------------------------------------------


@pytest.fixture(scope="session")
def case3() -> grid.GridCase:
    return grid.load_bundled_case("case3")


@pytest.fixture(scope="session")
def case14() -> grid.GridCase:
    return grid.load_bundled_case("case14")


@pytest.fixture(scope="session")
def case118() -> grid.GridCase:
    return grid.load_bundled_case("case118")


@pytest.fixture(scope="session")
def h3(case3) -> np.ndarray:
    return grid.build_h(case3)


@pytest.fixture(scope="session")
def h14(case14) -> np.ndarray:
    return grid.build_h(case14)


@pytest.fixture(scope="session")
def h118(case118) -> np.ndarray:
    return grid.build_h(case118)


@pytest.fixture(scope="session")
def est118(h118) -> estimation.Estimator:
    return estimation.Estimator(h118)
