import math

import numpy as np
import pytest

from inverse_renderer import autodiff as ad
from inverse_renderer.autodiff import ParameterStore, Tape, grad_check
from inverse_renderer.brdf import Material
from inverse_renderer.geometry import AnalyticScene, Plane, Sphere
from inverse_renderer.material import (
    ROUGHNESS_MIN,
    MaterialNet,
    MaterialOverride,
    OverriddenMaterials,
    PrimitiveMaterials,
    encoding_input_gradient,
    encoding_size,
    kl_sparsity,
    material_forward,
    positional_encoding,
    smoothness_loss,
)


@pytest.fixture
def net():
    return MaterialNet(ParameterStore(), latent_dim=4, pe_freqs=2, encoder_hidden=(8,), decoder_hidden=(8,), seed=5)


def test_positional_encoding_layout():
    p = np.array([[0.25, -0.5, 1.0]])
    features = positional_encoding(p, 2)
    assert features.shape == (1, encoding_size(2)) == (1, 15)
    np.testing.assert_allclose(features[0, :3], p[0])
    np.testing.assert_allclose(features[0, 3:6], np.sin(math.pi * p[0]))
    np.testing.assert_allclose(features[0, 6:9], np.cos(math.pi * p[0]))
    np.testing.assert_allclose(features[0, 9:12], np.sin(2.0 * math.pi * p[0]))


def test_encoding_input_gradient_matches_tape(rng):
    p0 = rng.normal(size=(4, 3))
    weights = rng.normal(size=(4, encoding_size(3)))
    tape = Tape()
    p = tape.leaf(p0)
    (expected,) = tape.gradient(ad.sum_(ad.mul(positional_encoding(p, 3), weights)), [p])
    np.testing.assert_allclose(encoding_input_gradient(p0, weights, 3), expected, rtol=1e-12)


def test_material_net_ranges(net, rng):
    albedo, roughness, latent = material_forward(net, rng.uniform(-1.0, 1.0, size=(32, 3)))
    assert albedo.shape == (32, 3) and roughness.shape == (32,) and latent.shape == (32, 4)
    assert np.all((albedo > 0.0) & (albedo < 1.0))
    assert np.all((roughness >= ROUGHNESS_MIN) & (roughness <= 1.0))
    assert np.all((latent > 0.0) & (latent < 1.0))


def test_material_net_gradients(net, rng):
    x = rng.uniform(-1.0, 1.0, size=(6, 3))

    def loss(tape):
        sample = net.forward(x, tape)
        return ad.add(ad.sum_(sample.albedo), ad.sum_(sample.roughness))

    report = grad_check(loss, net.store, eps=1e-5, max_per_group=3)
    assert report.max_rel_err < 1e-3


def test_kl_sparsity_is_zero_at_target_and_positive_elsewhere():
    assert float(kl_sparsity(np.full((10, 4), 0.05), 0.05)) == pytest.approx(0.0, abs=1e-12)
    assert float(kl_sparsity(np.full((10, 4), 0.5), 0.05)) > 0.0
    saturated = float(kl_sparsity(np.ones((3, 2)), 0.05))
    assert math.isfinite(saturated)


def test_kl_sparsity_errors():
    with pytest.raises(ValueError, match="non-empty"):
        kl_sparsity(np.zeros((0, 4)), 0.05)
    with pytest.raises(ValueError, match="rho"):
        kl_sparsity(np.full((2, 2), 0.5), 1.0)


def test_smoothness_loss(net, rng):
    z = rng.uniform(0.0, 1.0, size=(8, 4))
    assert float(smoothness_loss(net, z, 0.0, rng)) == 0.0
    assert float(smoothness_loss(net, z, 0.1, rng)) > 0.0
    with pytest.raises(ValueError):
        smoothness_loss(net, z, -0.1, rng)


def test_primitive_materials_follow_nearest_primitive():
    scene = AnalyticScene([Plane((0.0, 1.0, 0.0), 0.0), Sphere((0.0, 1.0, 0.0), 1.0)])
    red = Material((0.9, 0.1, 0.1), 0.3, (0.5, 0.5, 0.5))
    source = PrimitiveMaterials(scene, [Material(), red])
    points = np.array([[3.0, 0.0, 0.0], [0.0, 2.0, 0.0]])
    sample = source.forward(points)
    np.testing.assert_allclose(sample.albedo[1], red.albedo)
    np.testing.assert_allclose(sample.roughness, [0.5, 0.3])
    np.testing.assert_allclose(source.fresnel(points)[1], red.fresnel)
    assert sample.latent is None


def test_override_replaces_decoded_values(net, rng):
    x = rng.uniform(-1.0, 1.0, size=(5, 3))
    edited = OverriddenMaterials(net, MaterialOverride(albedo=(0.2, 0.4, 0.6), roughness=0.25))
    sample = edited.forward(x)
    np.testing.assert_allclose(sample.albedo, np.tile([0.2, 0.4, 0.6], (5, 1)))
    np.testing.assert_allclose(sample.roughness, 0.25)
    np.testing.assert_allclose(sample.latent, net.encode(x))


def test_override_validation():
    assert MaterialOverride().is_identity
    assert MaterialOverride(fresnel_scale=1.0).is_identity
    with pytest.raises(ValueError):
        MaterialOverride(roughness=0.0).validate()
    with pytest.raises(ValueError):
        MaterialOverride(albedo=(1.5, 0.0, 0.0)).validate()
    with pytest.raises(ValueError):
        MaterialOverride(fresnel_scale=-0.5).validate()
