import json
import os

import pytest
import torch

from thermasplat.src.dataset import SyntheticSceneSpec, generate_scene
from thermasplat.src.run_config import RunConfig
from thermasplat.src.scene_core import DTYPE, Camera, Gaussian3D, logit
from thermasplat.thermasplat import ConfigReader, Logger

TINY_PRIMITIVES = [
    {"type": "plane", "point": [0.0, 0.0, 0.0], "normal": [0.0, 0.0, 1.0], "half_extent": 1.2, "albedo": [0.6, 0.6, 0.55], "temperature": 0.2},
    {"type": "sphere", "center": [0.1, 0.1, 0.35], "radius": 0.35, "albedo": [0.85, 0.3, 0.25], "temperature": 0.9},
    {"type": "box", "center": [-0.4, -0.3, 0.2], "half_size": [0.2, 0.2, 0.2], "albedo": [0.3, 0.5, 0.85], "temperature": 0.5},
]

# Small enough that a few dozen iterations take seconds on a CPU.
FAST_SETTINGS = {
    "iters": 20,
    "grid_rows": 3,
    "grid_cols": 4,
    "prune_every": 0,
    "checkpoint_every": 0,
    "preprocess_iters": 5,
}


@pytest.fixture(autouse=True)
def default_config():
    ConfigReader.use_file(None)
    Logger.reload_config()
    yield
    ConfigReader.use_file(None)


def tiny_spec(**overrides):
    values = {
        "seed": 3,
        "primitives": [dict(p) for p in TINY_PRIMITIVES],
        "num_views": 5,
        "width": 24,
        "height": 18,
        "num_points": 80,
        "orbit_radius": 2.5,
        "orbit_height": 1.0,
    }
    values.update(overrides)
    return SyntheticSceneSpec(**values)


@pytest.fixture(scope="session")
def tiny_scene():
    return generate_scene(tiny_spec())


@pytest.fixture
def spec_file(tmp_path):
    path = tmp_path / "tiny_spec.json"
    path.write_text(json.dumps(tiny_spec().to_dict()), encoding="utf-8")
    return str(path)


def fast_config(**overrides):
    settings = dict(RunConfig.defaults(), **FAST_SETTINGS)
    settings.update(overrides)
    return RunConfig.from_settings(settings)


def axis_camera(size=16, focal=20.0):
    """Camera at the origin looking down +z with the principal point on a pixel center."""
    return Camera(focal, focal, size // 2, size // 2, size, size)


def splat_on_axis(depth, opacity, color_raw, sigma=0.05):
    return Gaussian3D(
        torch.tensor([0.0, 0.0, depth], dtype=DTYPE),
        torch.full((3,), float(torch.log(torch.tensor(sigma))), dtype=DTYPE),
        torch.tensor([1.0, 0.0, 0.0, 0.0], dtype=DTYPE),
        logit(opacity),
        torch.as_tensor(color_raw, dtype=DTYPE),
    )


def write_config(tmp_path, **settings):
    path = os.path.join(tmp_path, "config.json")
    with open(path, "w", encoding="utf-8") as file:
        json.dump({"thermasplat.LoggingLevel": ["WARNING"], **FAST_SETTINGS, **settings}, file)
    return path
