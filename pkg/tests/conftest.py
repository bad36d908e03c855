"""Shared fixtures and the acceptance summary printed at the end of the run."""
from __future__ import annotations

import pytest

from iwatsuka.field import MagneticProfile

ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture(scope="session")
def model_m2() -> MagneticProfile:
    return MagneticProfile.model(1.0, 2.0, 2.0, 1.0, 2.0)


@pytest.fixture(scope="session")
def model_m6() -> MagneticProfile:
    return MagneticProfile.model(1.0, 2.0, 6.0, 1.0, 2.0)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
