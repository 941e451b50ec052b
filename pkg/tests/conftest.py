import numpy as np
import pytest

from pension_hjb import derive_coefficients, load_scenario

SLOVAK_EPS = 0.09


@pytest.fixture(scope="session")
def slovak_raw():
    return load_scenario("slovak")


@pytest.fixture(scope="session")
def slovak(slovak_raw):
    return slovak_raw.with_eps(SLOVAK_EPS)


@pytest.fixture(scope="session")
def coeffs(slovak):
    return derive_coefficients(slovak)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
