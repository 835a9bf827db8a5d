import functools
import os

import numpy as np
import pytest

from plenobounds.renderer import RenderConfig, render
from plenobounds.scene import apply_parameters, load_scene

_DATA = os.path.join(
    os.path.dirname(os.path.dirname(os.path.abspath(__file__))),
    "src", "plenobounds", "data",
)


def corridor_path():
    return os.path.join(_DATA, "corridor.json")


@functools.lru_cache(maxsize=32)
def corridor_render(theta=0.5, spp=64, seed=0, depth=4):
    """Cached corridor render so independent tests can share images."""
    scene = load_scene(corridor_path())
    bound = apply_parameters(scene, [theta])
    return render(bound, RenderConfig(spp=spp, seed=seed, depth=depth))


@pytest.fixture(scope="session")
def corridor_scene():
    return load_scene(corridor_path())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
