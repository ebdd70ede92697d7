import numpy as np
import pytest

from covse import Regularization, SystemConfig, build_covariance_set


@pytest.fixture(scope="session")
def desk8():
    """M = 8, L = 3, K = 2 desk system."""
    return build_covariance_set(SystemConfig(L=3, K=2, M=8, P=4))


@pytest.fixture(scope="session")
def desk16():
    return build_covariance_set(SystemConfig(L=3, K=2, M=16, P=4))


@pytest.fixture(scope="session")
def reg95():
    return Regularization(0.95, 0.95)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE: list[str] = []


@pytest.fixture
def report():
    """Record one acceptance line: ``report(label, passed, detail)``."""

    def _record(label: str, passed, detail: str = ""):
        status = "PASS" if passed is True else ("SKIP" if passed is None else "FAIL")
        _ACCEPTANCE.append(f"{label}: {status}  {detail}".rstrip())

    return _record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)
