import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from cfpower.config import SystemConfig  # noqa: E402

ACCEPTANCE_LINES = []


@pytest.fixture
def cfg():
    return SystemConfig()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def two_ap_config(**kw):
    """L = 2, K = 2 deployment used for the brute-force solver checks."""
    base = dict(L=2, K=2, N=1, tau_p=2, tau_d=198, ap_positions=((37.5, 75.0), (112.5, 75.0)))
    base.update(kw)
    return SystemConfig(**base)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
