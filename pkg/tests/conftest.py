import numpy as np
import pytest

from cpstream.camera import CameraModel
from cpstream.harness import SceneConfig, make_scene


def make_camera(focal_px=1000.0, focal_m=0.05, size=(640, 480), rotation=None, translation=None):
    w, h = size
    return CameraModel(
        focal_px=focal_px,
        focal_m=focal_m,
        principal_point=np.array([(w - 1) / 2.0, (h - 1) / 2.0]),
        image_size=size,
        rotation_wc=np.eye(3) if rotation is None else rotation,
        translation_wc=np.zeros(3) if translation is None else translation,
    )


def random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    return q


@pytest.fixture
def camera():
    return make_camera()


@pytest.fixture(scope="session")
def small_scene():
    """Four-frame, 128 px version of the default two-sphere scene."""
    return make_scene(SceneConfig(frames=4, width=128, height=128, focal_px=180.0))


ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
