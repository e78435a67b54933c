import numpy as np
import pytest

from mono3d.geometry import CameraIntrinsics
from mono3d.weak_labels import ClassPrior


@pytest.fixture
def cam():
    """The camera used throughout the worked examples."""
    return CameraIntrinsics(700.0, 700.0, 600.0, 180.0)


@pytest.fixture
def kitti_cam():
    return CameraIntrinsics(721.5377, 721.5377, 609.5593, 172.854)


@pytest.fixture
def car_prior():
    return ClassPrior("Car", 3.88, 1.63, 1.53)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
