"""Shared fixtures: a small sphere-on-plane scene and its bundles."""

import json

import numpy as np
import pytest

from inverse_renderer.autodiff import ParameterStore
from inverse_renderer.config import TraceConfig
from inverse_renderer.geometry import AnalyticScene, Plane, Sphere
from inverse_renderer.illumination import EnvironmentLights, IndirectNet
from inverse_renderer.renderer import Camera
from inverse_renderer.scene_file import parse_scene
from inverse_renderer.sg_math import fibonacci_directions
from inverse_renderer.training import build_bundle

SMALL_SCENE = {
    "geometry": {
        "type": "analytic",
        "primitives": [
            {"type": "plane", "normal": [0.0, 1.0, 0.0], "offset": 0.0},
            {"type": "sphere", "center": [0.0, 0.5, 0.0], "radius": 0.5, "trainable": True},
        ],
    },
    "materials": [
        {"albedo": [0.6, 0.6, 0.6], "roughness": 0.8, "fresnel": [0.04, 0.04, 0.04]},
        {"albedo": [0.8, 0.3, 0.2], "roughness": 0.4, "fresnel": [0.04, 0.04, 0.04]},
    ],
    "environment": {"lights": 8, "init": "constant", "radiance": 1.0},
    "cameras": [
        {"position": [0.0, 1.0, 3.0], "look_at": [0.0, 0.4, 0.0], "fov": 40.0, "width": 12, "height": 12},
        {"position": [2.5, 1.5, 1.5], "look_at": [0.0, 0.4, 0.0], "fov": 40.0, "width": 12, "height": 12},
    ],
    "networks": {
        "indirect_hidden": [8],
        "pos_freqs": 1,
        "normal_freqs": 1,
        "latent_dim": 4,
        "pe_freqs": 1,
        "encoder_hidden": [8],
        "decoder_hidden": [8],
    },
    "render": {"boundary_slices": 8, "boundary_steps": 8, "bisection_iterations": 12},
    "train": {"steps": 3, "batch_rays": 32, "learning_rate": 0.01, "log_every": 0, "boundary_pixels": 2},
    "seed": 3,
}


@pytest.fixture
def scene_dict():
    return json.loads(json.dumps(SMALL_SCENE))


@pytest.fixture
def scene_text(scene_dict):
    return json.dumps(scene_dict, indent=2)


@pytest.fixture
def scene(scene_text):
    return parse_scene(scene_text)


@pytest.fixture
def scene_path(tmp_path, scene_text):
    path = tmp_path / "scene.json"
    path.write_text(scene_text, encoding="utf-8")
    return path


@pytest.fixture
def gt_bundle(scene):
    return build_bundle(scene, ground_truth=True)


@pytest.fixture
def learned_bundle(scene):
    return build_bundle(scene)


@pytest.fixture
def camera(scene):
    c = scene.cameras[0]
    return Camera(tuple(c["position"]), tuple(c["look_at"]), tuple(c["up"]), c["fov"], c["width"], c["height"])


@pytest.fixture
def trace_cfg():
    return TraceConfig()


@pytest.fixture
def plane_and_sphere():
    """Ground plane y = 0 with a unit sphere resting on it."""
    store = ParameterStore()
    scene = AnalyticScene([Plane((0.0, 1.0, 0.0), 0.0), Sphere((0.0, 1.0, 0.0), 1.0)], store)
    return scene, store


@pytest.fixture
def env_and_net():
    store = ParameterStore()
    env = EnvironmentLights.constant(store, fibonacci_directions(16), 1.0)
    net = IndirectNet(store, env.count, hidden=(8,), pos_freqs=1, normal_freqs=1, seed=1)
    return env, net, store


@pytest.fixture
def rng():
    return np.random.default_rng(0)
