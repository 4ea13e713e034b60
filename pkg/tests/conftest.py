import os

import pytest
from hypothesis import HealthCheck, settings

from valleywalk.env_model import EnvironmentModel

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# filled by tests/test_acceptance.py; printed once at the end of the session
ACCEPTANCE_LINES = {}


@pytest.fixture(scope="session")
def beta_3_15():
    return EnvironmentModel.beta(3.0, 1.5)


@pytest.fixture(scope="session")
def beta_2_1():
    return EnvironmentModel.beta(2.0, 1.0)


@pytest.fixture(scope="session")
def beta_28_12():
    return EnvironmentModel.beta(2.8, 1.2)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
