import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

from gridflow import bundled_case  # noqa: E402

# numba compiles on first call; a deadline would time the compiler, not the code
settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def two_bus():
    return bundled_case("two_bus")


@pytest.fixture(scope="session")
def ieee30():
    return bundled_case("ieee30")


@pytest.fixture(scope="session")
def feeder_2bus():
    return bundled_case("feeder_2bus")


@pytest.fixture(scope="session")
def lv_feeder():
    return bundled_case("lv_feeder")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import LINES

    if LINES:
        terminalreporter.section("acceptance criteria")
        order = sorted(LINES, key=lambda k: (int("".join(c for c in k if c.isdigit())), k))
        for k in order:
            terminalreporter.write_line(LINES[k])
