import numpy as np
import pytest

from scaledgd.model import generate_ground_truth
from scaledgd.sensing import SensingOperator


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def small_problem():
    """Well-sampled 12 x 10 rank-2 instance shared by fast solver tests."""
    gt = generate_ground_truth(12, 10, 2, 3.0, seed=5)
    op = SensingOperator.gaussian(12, 10, 400, seed=11)
    return gt, op


_ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture(scope="session")
def acceptance_log(request):
    """Collects ``{number: (passed, detail)}`` for the end-of-run summary."""
    return request.config.stash.setdefault(_ACCEPTANCE, {})


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    log = config.stash.get(_ACCEPTANCE, None)
    if not log:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(log):
        passed, detail = log[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
