import math

import numpy as np
import pytest

from inverse_renderer.brdf import (
    DEFAULT_F0,
    Material,
    brdf_sg_lobes,
    evaluate_brdf,
    fresnel_schlick,
    ggx_distribution,
    scale_fresnel,
    specular_lobe,
)
from inverse_renderer.sg_math import sg_eval

UP = np.array([0.0, 0.0, 1.0])


def _dir(theta_deg, phi_deg=0.0):
    t, p = math.radians(theta_deg), math.radians(phi_deg)
    return np.array([math.sin(t) * math.cos(p), math.sin(t) * math.sin(p), math.cos(t)])


@pytest.mark.parametrize(
    "kwargs",
    [
        {"albedo": (1.2, 0.5, 0.5)},
        {"roughness": 0.001},
        {"roughness": 1.5},
        {"fresnel": (0.04, -0.1, 0.04)},
    ],
)
def test_material_validation(kwargs):
    with pytest.raises(ValueError):
        Material(**kwargs).validate()


def test_material_defaults_and_dict():
    m = Material()
    m.validate()
    assert m.fresnel == DEFAULT_F0
    assert m.to_dict()["roughness"] == 0.5


def test_scale_fresnel_clamps_and_rejects_negative():
    m = Material(fresnel=(0.04, 0.5, 0.9))
    scaled = scale_fresnel(m, 2.0)
    np.testing.assert_allclose(scaled.fresnel, (0.08, 1.0, 1.0))
    assert scaled.albedo == m.albedo and scaled.roughness == m.roughness
    np.testing.assert_allclose(scale_fresnel(m, 0.0).fresnel, (0.0, 0.0, 0.0))
    with pytest.raises(ValueError):
        scale_fresnel(m, -1.0)


def test_fresnel_schlick_limits():
    f0 = np.array([0.04, 0.04, 0.04])
    np.testing.assert_allclose(fresnel_schlick(f0, 1.0), f0)
    np.testing.assert_allclose(fresnel_schlick(f0, 0.0), [1.0, 1.0, 1.0])


def test_ggx_peak():
    assert ggx_distribution(1.0, 0.5) == pytest.approx(1.0 / (math.pi * 0.5 ** 4))


def test_exact_brdf_is_lambertian_without_fresnel_at_normal_incidence():
    value = evaluate_brdf(np.array([0.3, 0.6, 0.9]), 0.5, np.zeros(3), UP, UP, UP)
    np.testing.assert_allclose(value, np.array([0.3, 0.6, 0.9]) / math.pi)


def test_exact_brdf_is_zero_below_the_surface():
    value = evaluate_brdf(np.full(3, 0.5), 0.5, np.full(3, 0.04), UP, _dir(120.0), UP)
    np.testing.assert_array_equal(value, np.zeros(3))


def test_back_facing_view_is_rejected():
    with pytest.raises(ValueError, match="Back-facing"):
        brdf_sg_lobes(Material(), -UP, UP)


def test_specular_lobe_points_along_reflection():
    view = _dir(40.0, 30.0)
    lobes = brdf_sg_lobes(Material(roughness=0.3), view, UP)
    reflected = 2.0 * np.dot(view, UP) * UP - view
    np.testing.assert_allclose(lobes.specular.axis, reflected, atol=1e-12)
    np.testing.assert_allclose(lobes.diffuse, np.array(Material().albedo) / math.pi)
    assert np.all(np.asarray(lobes.specular_scale) > 0.0)


def test_sg_specular_tracks_exact_specular_near_the_peak():
    roughness = 0.4
    view = _dir(30.0)
    f0 = np.full(3, 0.04)
    lobe, scale, _ = specular_lobe(roughness, f0, view, UP)
    light = 2.0 * np.dot(view, UP) * UP - view
    exact = evaluate_brdf(np.zeros(3), roughness, f0, view, light, UP)
    approx = np.asarray(scale) * np.asarray(sg_eval(lobe, light))
    np.testing.assert_allclose(approx, exact, rtol=0.2)


def test_rougher_lobe_is_wider():
    view = _dir(20.0)
    f0 = np.full(3, 0.04)
    smooth, _, _ = specular_lobe(0.2, f0, view, UP)
    rough, _, _ = specular_lobe(0.8, f0, view, UP)
    assert float(smooth.sharpness) > float(rough.sharpness)
