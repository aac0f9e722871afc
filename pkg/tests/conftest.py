"""
Test configuration and fixtures for embodied_captioning.
"""

import math

import numpy as np
import pytest
from aioresponses import aioresponses

from embodied_captioning.config import (
    AgentConfig,
    CameraConfig,
    ExplorationConfig,
    LossConfig,
    RunConfig,
    SceneSpec,
)
from embodied_captioning.models import ObjectGT, Scene
from embodied_captioning.perception import HashingEmbedder
from embodied_captioning.scene import generate_scene


@pytest.fixture
def mock_aiohttp():
    """Fixture to mock aiohttp responses."""
    with aioresponses() as m:
        yield m


@pytest.fixture
def api_url():
    """Fixture for the model service URL."""
    return "https://models.example.com"


@pytest.fixture
def api_key():
    """Fixture for API key."""
    return "test-api-key-12345"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def embedder():
    return HashingEmbedder(256)


@pytest.fixture
def small_spec():
    """One room, four objects."""
    return SceneSpec(bounds=(24, 24, 10), rooms=(1, 1), n_objects=4)


@pytest.fixture
def small_scene(small_spec):
    return generate_scene(3, small_spec)


@pytest.fixture
def small_config(small_spec, tmp_path):
    """Fast run configuration: small scene, 32 x 32 camera, short episodes."""
    return RunConfig(
        scene=small_spec,
        camera=CameraConfig(width=32, height=32, fov=math.pi / 2, max_range=10.0),
        agent=AgentConfig(forward_step=0.25, turn_angle=math.pi / 6),
        exploration=ExplorationConfig(policy="frontier", n_steps=30, grid_size=48, staleness_timeout=15),
        loss=LossConfig(epochs=3, patience=2, feature_dim=8, max_length=10, batch_size=16),
        output_dir=str(tmp_path / "run"),
    )


def _box_scene(with_object: bool) -> Scene:
    occupancy = np.zeros((16, 16, 10), dtype=bool)
    occupancy[:, :, 0] = True
    occupancy[[0, 15], :, :] = True
    occupancy[:, [0, 15], :] = True
    objects = []
    if with_object:
        voxels = [(10, y, z) for y in range(6, 10) for z in range(1, 10)]
        for v in voxels:
            occupancy[v] = True
        objects.append(ObjectGT(5, "tv", ["red", "metal", "wall"], "a red metal tv by the wall", voxels))
    return Scene(voxel_occupancy=occupancy, objects=objects, bounds=(16, 16, 10), seed=0)


@pytest.fixture
def box_scene():
    """16 x 16 x 10 walled room with a pillar object at x=10, y=6..9."""
    return _box_scene(with_object=True)


@pytest.fixture
def empty_box_scene():
    return _box_scene(with_object=False)
