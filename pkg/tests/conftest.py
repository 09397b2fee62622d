import os
import sys

import pytest

sys.path.insert(0, os.path.dirname(__file__))

from tofproximity.config import SimConfig  # noqa: E402
from tofproximity.evaluation import Benchmark  # noqa: E402


@pytest.fixture(scope="session")
def small_bench():
    """Default arm and sensor with short frame lists."""
    return Benchmark(SimConfig(n_robot_frames=150, n_object_frames=80))


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
