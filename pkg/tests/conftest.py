import numpy as np
import pytest

from slicereg.imgcore import Image2D, Volume3D


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_image(rng, w=32, h=32, spacing=(1.0, 1.0), channels=1):
    if channels == 1:
        return Image2D(rng.random((h, w)), spacing)
    return Image2D(rng.random((h, w, channels)), spacing)


def random_volume(rng, nx=16, ny=16, nz=8, spacing=(1.0, 1.0, 1.0)):
    return Volume3D(rng.random((nz, ny, nx)), spacing)
