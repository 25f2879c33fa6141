from __future__ import annotations

import numpy as np
import pytest

from equipose.geometry import CameraModel
from equipose.skeleton import default_skeleton
from equipose.synth import make_default_rig


def pinhole(name="cam", fx=100.0, fy=100.0, cx=160.0, cy=95.0, dist=(0, 0, 0, 0, 0),
            rotation=(0, 0, 0), translation=(0, 0, 0), image_size=(320, 190)) -> CameraModel:
    return CameraModel(name=name, image_size=image_size, fx=fx, fy=fy, cx=cx, cy=cy,
                       dist=dist, rotation=rotation, translation=translation)


@pytest.fixture
def cam():
    return pinhole()


@pytest.fixture(scope="session")
def skel():
    return default_skeleton()


@pytest.fixture(scope="session")
def rig():
    return make_default_rig()


@pytest.fixture
def gen():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from .helpers import ACCEPTANCE

    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, 10):
        terminalreporter.write_line(ACCEPTANCE.get(n, f"criterion {n} NOT RUN"))
