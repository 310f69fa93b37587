import numpy as np
import pytest

from lowenv.config import ExperimentConfig


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_cfg():
    # coarse but complete EIT setup for fast loop tests
    return ExperimentConfig(n=24, max_iter=6)


@pytest.fixture(scope="session")
def small_meas(small_cfg):
    from lowenv.eit import synthesize

    return synthesize(small_cfg)


# one PASS/FAIL line per acceptance criterion, repeated in the terminal summary
# so it survives output capturing
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
