import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from scene123.geometry import CameraIntrinsics, Pose
from scene123.synthetic import make_synthetic_scene

settings.register_profile("scene123", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("scene123")


@pytest.fixture(scope="session")
def scene():
    return make_synthetic_scene(0)


@pytest.fixture(scope="session")
def K64():
    return CameraIntrinsics.from_fov(64, 64, 60.0)


@pytest.fixture(scope="session")
def origin_view(scene, K64):
    return scene.render_view(Pose.identity(), K64)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
