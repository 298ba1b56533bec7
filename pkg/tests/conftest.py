import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from pglio.geometry import GravityDir, NavState, Pose, exp_so3

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_pose(rng, trans=2.0):
    return Pose(exp_so3(rng.normal(size=3)), rng.normal(size=3) * trans)


def random_state(rng, stamp=0.0):
    return NavState(random_pose(rng), rng.normal(size=3), 0.05 * rng.normal(size=3),
                    0.01 * rng.normal(size=3), stamp)


def random_gravity(rng):
    return GravityDir(rng.normal(size=3))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, printed after the run
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num, title, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {num:>2}. {title}: {detail}")
