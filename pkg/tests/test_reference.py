
import numpy as np
import pytest

from inverse_renderer.autodiff import ParameterStore
from inverse_renderer.brdf import Material
from inverse_renderer.geometry import AnalyticScene, Plane
from inverse_renderer.illumination import EnvironmentLights, IndirectNet
from inverse_renderer.reference import environment_radiance, hemisphere_samples, mc_shade
from inverse_renderer.sg_math import fibonacci_directions


def test_hemisphere_samples_stay_above_the_surface(rng):
    normal = np.array([1.0, 2.0, -0.5])
    normal /= np.linalg.norm(normal)
    dirs = hemisphere_samples(normal, 1000, rng)
    assert dirs.shape == (31 * 31, 3)
    np.testing.assert_allclose(np.linalg.norm(dirs, axis=1), 1.0)
    assert np.all(dirs @ normal >= 0.0)
    # Uniform over the hemisphere: mean cosine is 1/2.
    assert np.mean(dirs @ normal) == pytest.approx(0.5, abs=1e-2)


def test_environment_radiance_matches_env(env_and_net, rng):
    env, _, _ = env_and_net
    dirs = rng.normal(size=(7, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    np.testing.assert_allclose(environment_radiance(env, dirs), np.asarray(env.radiance(dirs)))


def test_lambertian_floor_under_uniform_sky():
    store = ParameterStore()
    env = EnvironmentLights.constant(store, fibonacci_directions(256), 1.0)
    net = IndirectNet(store, env.count, hidden=(4,), pos_freqs=1, normal_freqs=1)
    scene = AnalyticScene([Plane((0.0, 1.0, 0.0), 0.0)])
    # f0 = 0 with a normal view keeps Fresnel at zero for most of the hemisphere.
    material = Material((0.5, 0.25, 1.0), 1.0, (0.0, 0.0, 0.0))
    shaded = mc_shade(scene, [0.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 1.0, 0.0], env, net, material, samples=16384)
    assert shaded == pytest.approx(np.array([0.5, 0.25, 1.0]), rel=5e-2)


def test_mc_shade_is_deterministic_per_seed(plane_and_sphere, env_and_net):
    scene, _ = plane_and_sphere
    env, net, _ = env_and_net
    args = (scene, [2.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 1.0, 0.0], env, net, Material())
    np.testing.assert_array_equal(mc_shade(*args, samples=256, seed=4), mc_shade(*args, samples=256, seed=4))


def test_mc_shade_rejects_back_facing_view(plane_and_sphere, env_and_net):
    scene, _ = plane_and_sphere
    env, net, _ = env_and_net
    with pytest.raises(ValueError, match="front-facing"):
        mc_shade(scene, [2.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, -1.0, 0.0], env, net, Material(), samples=16)
