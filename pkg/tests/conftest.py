from __future__ import annotations

import pytest
from hypothesis import HealthCheck, settings

from gaussvol.model import fractional_ou, stein_stein
from gaussvol.spectrum import model_spectrum

settings.register_profile("default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# filled by tests/test_acceptance.py; printed once at the end of the session
ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture(scope="session")
def ss_spec():
    """Stationary Stein-Stein, one month."""
    return stein_stein(0.2, 7.0, 1.2, 1 / 12)


@pytest.fixture(scope="session")
def ss_spectrum(ss_spec):
    return model_spectrum(ss_spec)


@pytest.fixture(scope="session")
def det_spec():
    return stein_stein(0.1, 4.0, 0.8, 0.25, start="deterministic", m0=0.3)


@pytest.fixture(scope="session")
def fou_spec():
    return fractional_ou(0.2, 7.0, 1.2, 0.7, 1 / 12)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
