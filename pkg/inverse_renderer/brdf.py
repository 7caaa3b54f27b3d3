"""Simplified Disney BRDF: Lambertian diffuse plus a microfacet specular lobe.

The specular normal distribution is represented as a spherical Gaussian in
half-vector space and warped into incoming-direction space, so shading
reduces to SG inner products. ``evaluate_brdf`` is the exact microfacet
form the SG lobes approximate; the reference renderer and the boundary term
use it directly.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Any, Tuple

import numpy as np

from . import autodiff as ad
from .sg_math import SphericalGaussian

logger = logging.getLogger(__name__)

DEFAULT_F0 = (0.04, 0.04, 0.04)
MIN_COS = 1e-4


@dataclass
class Material:
    """Albedo and F0 in [0, 1]^3, roughness in [0.01, 1]."""

    albedo: Tuple[float, float, float] = (0.8, 0.8, 0.8)
    roughness: float = 0.5
    fresnel: Tuple[float, float, float] = field(default=DEFAULT_F0)

    def validate(self) -> None:
        """Check componentwise ranges.

        Raises:
            ValueError: If a field is out of range.
        """
        albedo = np.asarray(self.albedo, dtype=np.float64)
        fresnel = np.asarray(self.fresnel, dtype=np.float64)
        if albedo.shape != (3,) or np.any(albedo < 0.0) or np.any(albedo > 1.0):
            raise ValueError(f"Albedo must be 3 values in [0, 1], got {self.albedo}")
        if fresnel.shape != (3,) or np.any(fresnel < 0.0) or np.any(fresnel > 1.0):
            raise ValueError(f"Fresnel F0 must be 3 values in [0, 1], got {self.fresnel}")
        if not 0.01 <= self.roughness <= 1.0:
            raise ValueError(f"Roughness must lie in [0.01, 1], got {self.roughness}")

    def to_dict(self) -> dict:
        return {
            "albedo": [float(v) for v in self.albedo],
            "roughness": float(self.roughness),
            "fresnel": [float(v) for v in self.fresnel],
        }


@dataclass
class BrdfLobes:
    """Diffuse constant a/pi and a warped specular SG with its scale."""

    diffuse: Any
    specular: SphericalGaussian
    specular_scale: Any
    ndf_sharpness: Any


def fresnel_schlick(f0, cos_h):
    """F0 + (1 - F0)(1 - cos_h)^5; cos_h broadcasts against F0 with a trailing axis."""
    one_minus = ad.sub(1.0, ad.clamp(cos_h, 0.0, 1.0))
    weight = ad.unsqueeze(ad.mul(ad.mul(one_minus, one_minus), ad.mul(ad.mul(one_minus, one_minus), one_minus)))
    return ad.add(f0, ad.mul(ad.sub(1.0, f0), weight))


def smith_g1(cos_theta, roughness):
    """Schlick-GGX masking x / (x (1 - k) + k) with k = R^2 / 2."""
    k = ad.mul(0.5, ad.mul(roughness, roughness))
    return ad.div(cos_theta, ad.add(ad.mul(cos_theta, ad.sub(1.0, k)), k))


def scale_fresnel(m: Material, k: float) -> Material:
    """F0' = clamp(k F0, 0, 1), other fields unchanged.

    Raises:
        ValueError: If k is negative.
    """
    if k < 0:
        raise ValueError(f"Fresnel scale must be non-negative, got {k}")
    scaled = np.clip(k * np.asarray(m.fresnel, dtype=np.float64), 0.0, 1.0)
    return replace(m, fresnel=tuple(float(v) for v in scaled))


def specular_lobe(roughness, f0, view, normal, clamp_cos: bool = True):
    """Warped specular SG and its Fresnel-geometry scale, batched.

    Args:
        roughness: (...) roughness values.
        f0: (..., 3) Fresnel normal-incidence reflectance.
        view: (..., 3) unit directions toward the viewer.
        normal: (..., 3) unit normals.
        clamp_cos: Clamp view . normal to a small positive value instead of
            letting back-facing entries through.

    Returns:
        Tuple (lobe, scale (..., 3), ndf sharpness (...)).
    """
    r2 = ad.mul(roughness, roughness)
    r4 = ad.mul(r2, r2)
    ndf_sharpness = ad.div(2.0, r4)
    ndf_amplitude = ad.div(1.0 / math.pi, r4)

    cos_o = ad.dot(view, normal)
    if clamp_cos:
        cos_o = ad.maximum(cos_o, MIN_COS)
    axis = ad.normalize(ad.sub(ad.mul(ad.unsqueeze(ad.mul(2.0, cos_o)), normal), view))
    sharpness = ad.div(ndf_sharpness, ad.mul(4.0, cos_o))

    g1 = smith_g1(cos_o, roughness)
    geometry = ad.div(ad.mul(g1, g1), ad.mul(4.0, ad.mul(cos_o, cos_o)))
    scale = ad.mul(fresnel_schlick(f0, cos_o), ad.unsqueeze(geometry))
    lobe = SphericalGaussian(axis, sharpness, ad.unsqueeze(ndf_amplitude))
    return lobe, scale, ndf_sharpness


def brdf_sg_lobes(m: Material, view, normal) -> BrdfLobes:
    """SG form of the BRDF for one material, view direction and normal.

    Raises:
        ValueError: If the view is back-facing (view . normal <= 0).
    """
    m.validate()
    view = np.asarray(view, dtype=np.float64)
    normal = np.asarray(normal, dtype=np.float64)
    cos_o = float(np.dot(view, normal))
    if cos_o <= 0.0:
        raise ValueError(f"Back-facing view: view . normal = {cos_o:.6f}")
    lobe, scale, ndf_sharpness = specular_lobe(
        m.roughness, np.asarray(m.fresnel, dtype=np.float64), view, normal, clamp_cos=False
    )
    diffuse = np.asarray(m.albedo, dtype=np.float64) / math.pi
    return BrdfLobes(diffuse, lobe, scale, ndf_sharpness)


def ggx_distribution(cos_h, roughness):
    """GGX normal distribution with alpha = R^2; peak 1 / (pi R^4)."""
    alpha2 = np.asarray(roughness, dtype=np.float64) ** 4
    denom = cos_h * cos_h * (alpha2 - 1.0) + 1.0
    return alpha2 / (math.pi * denom * denom)


def evaluate_brdf(albedo, roughness, f0, view, light, normal) -> np.ndarray:
    """Exact microfacet BRDF value (numpy only).

    Args:
        albedo: (..., 3).
        roughness: (...).
        f0: (..., 3).
        view: (..., 3) unit directions toward the viewer.
        light: (..., 3) unit incoming directions.
        normal: (..., 3) unit normals.

    Returns:
        (..., 3) BRDF values; zero where either direction is below the surface.
    """
    albedo = np.asarray(albedo, dtype=np.float64)
    roughness = np.asarray(roughness, dtype=np.float64)
    cos_o = np.sum(view * normal, axis=-1)
    cos_i = np.sum(light * normal, axis=-1)
    valid = (cos_o > 0.0) & (cos_i > 0.0)

    half = view + light
    half = half / np.maximum(np.linalg.norm(half, axis=-1, keepdims=True), 1e-12)
    cos_h = np.clip(np.sum(half * normal, axis=-1), 0.0, 1.0)
    cos_d = np.clip(np.sum(half * view, axis=-1), 0.0, 1.0)

    safe_o = np.maximum(cos_o, MIN_COS)
    safe_i = np.maximum(cos_i, MIN_COS)
    d = ggx_distribution(cos_h, roughness)
    g = smith_g1(safe_o, roughness) * smith_g1(safe_i, roughness)
    f = fresnel_schlick(np.asarray(f0, dtype=np.float64), cos_d)
    specular = f * (d * g / (4.0 * safe_o * safe_i))[..., None]
    value = albedo / math.pi + specular
    return np.where(valid[..., None], value, 0.0)
