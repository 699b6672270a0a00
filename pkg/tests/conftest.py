import numpy as np
import pytest

from leakmem.model import AnimationModel, ModelConfig
from leakmem.world import SyntheticWorld, WorldConfig


# small model for unit tests; acceptance uses the real defaults
TINY_MODEL = ModelConfig(channels=(2, 2, 4, 8, 2), spatial=(6, 5, 4, 3, 2), d_top=8,
                         d_z=6, d_model=8, num_queries=3, num_blocks=2, ffn_hidden=12,
                         slots=10, d_c=4, heads=2, gen_hidden=16, disc_hidden=8)


@pytest.fixture(scope="session")
def world():
    return SyntheticWorld(WorldConfig(seed=0))


@pytest.fixture(scope="session")
def tiny_world():
    return SyntheticWorld(WorldConfig(seed=3, identity_count=6, motions_per_identity=8))


@pytest.fixture()
def tiny_model(tiny_world):
    return AnimationModel(tiny_world.config.d_img, TINY_MODEL, seed=7)


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
