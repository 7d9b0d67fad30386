import numpy as np
import pytest

from rgbd_odom.camera import CameraIntrinsics, NoiseModel


@pytest.fixture
def intrinsics():
    """The 'standard' 640x480 sensor used throughout the tests."""
    return CameraIntrinsics(fx=586.0, fy=586.0, cx=320.0, cy=240.0, width=640, height=480)


@pytest.fixture
def noise_model():
    return NoiseModel()


def random_rotation(rng, max_angle=1.0):
    from rgbd_odom.geometry import so3_exp

    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return so3_exp(axis * rng.uniform(0, max_angle))
