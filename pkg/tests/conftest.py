import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from rigcal.geometry import SE3Pose, euler_to_rotation

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_rotation(rng, scale=np.pi):
    return euler_to_rotation(*rng.uniform(-scale, scale, size=3))


def random_pose(rng, rot_scale=np.pi, t_scale=2.0):
    return SE3Pose(random_rotation(rng, rot_scale), rng.uniform(-t_scale, t_scale, size=3))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
