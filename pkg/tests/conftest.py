import numpy as np
import pytest

from gdemscale import synth
from gdemscale.gdem import densify_cloud


@pytest.fixture(scope="session")
def flat_scene():
    return synth.build_scene(synth.plane(), n_frames=2)


@pytest.fixture(scope="session")
def flat_dense(flat_scene):
    return densify_cloud(flat_scene.gdem, 0.05, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
