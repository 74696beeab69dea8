import pytest

from helpers import SCENES
from simulation.world_sim import load_scene_file


@pytest.fixture
def apple_world():
    return load_scene_file(SCENES / "apple.scene")


@pytest.fixture
def mug_world():
    return load_scene_file(SCENES / "mug.scene")


@pytest.fixture
def coffee_world():
    return load_scene_file(SCENES / "coffee.scene")
