import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from hotspot.gp import Hyperparams
from hotspot.sensing import build_arm_grid, make_levels


@pytest.fixture(scope="session")
def bench_grid():
    """The 20 x 20 m, three-altitude, 3 x 3 pixel benchmark grid."""
    return build_arm_grid((20.0, 20.0), make_levels([10, 40, 70], [1, 4, 7]), 3)


@pytest.fixture(scope="session")
def bench_hyper(bench_grid):
    return Hyperparams(2.0, 100.0, tuple(lv.noise_variance for lv in bench_grid.levels))


@pytest.fixture(scope="session")
def small_grid():
    return build_arm_grid((6.0, 6.0), make_levels([10, 30], [1, 3]), 3)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
