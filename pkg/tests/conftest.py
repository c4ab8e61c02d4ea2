import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from atsteg.image_io import GrayImage, synth_cover

settings.register_profile(
    "default",
    max_examples=50,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def flat_image():
    """A 16x16 image with every pixel at 128."""
    return GrayImage.from_array(np.full((16, 16), 128, dtype=np.uint8), "flat")


@pytest.fixture
def textured_image():
    return synth_cover(width=64, height=64, smoothness=2.0, seed=7)


def make_pool(count, size=64, smoothness=5.0, seed0=0):
    """Small deterministic cover pool for pipeline-level tests."""
    return [
        synth_cover(width=size, height=size, smoothness=smoothness, seed=seed0 + k).with_id(
            f"img-{k:03d}"
        )
        for k in range(count)
    ]
