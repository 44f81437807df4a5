import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from rgbdfusion.geometry import Intrinsics, Pose

# quarter-VGA keeps rendered fixtures fast; same 525 px focal scaled by 1/2
SMALL = Intrinsics(262.5, 262.5, 159.5, 119.5, 320, 240)


def random_pose(rng, max_angle=np.pi, max_t=1.0) -> Pose:
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(0, max_angle)
    return Pose(Rotation.from_rotvec(angle * axis).as_matrix(), rng.uniform(-max_t, max_t, 3))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_intr():
    return SMALL


def small_config(**overrides):
    """Pipeline config for the SMALL camera; dotted keys via ``a__b=value``."""
    from rgbdfusion.pipeline import PipelineConfig

    cfg = PipelineConfig()
    for k in ("fx", "fy", "cx", "cy", "width", "height"):
        cfg.set("camera." + k, getattr(SMALL, k))
    for k, v in overrides.items():
        cfg.set(k.replace("__", "."), v)
    return cfg.validate()


def static_trajectory(n, pose=None, rate=30.0):
    from rgbdfusion.dataset_io import Trajectory

    return Trajectory(np.arange(n) / rate, [pose or Pose.identity()] * n)


# acceptance lines collected by tests/test_acceptance.py, echoed at the end
# of the run so they show without -s
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
