"""Monte-Carlo reference shading.

Forward only. Integrates the rendering equation over the hemisphere with
stratified jittered samples, the exact microfacet BRDF and per-direction
visibility, and serves as the oracle for SG shading and the boundary term.
"""

import logging
import math
from typing import Optional

import numpy as np

from .brdf import Material, evaluate_brdf
from .config import TraceConfig
from .illumination import EnvironmentLights, IndirectNet, incident_radiance, occluded_radiance, tangent_frame

logger = logging.getLogger(__name__)

CHUNK = 65536

__all__ = ["environment_radiance", "occluded_radiance", "hemisphere_samples", "mc_shade"]


def environment_radiance(env: EnvironmentLights, dirs) -> np.ndarray:
    """Unoccluded environment radiance (N, 3) along directions (N, 3)."""
    return np.asarray(env.radiance(np.asarray(dirs, dtype=np.float64).reshape(-1, 3)))


def hemisphere_samples(normal, samples: int, rng: np.random.Generator) -> np.ndarray:
    """Stratified, jittered uniform directions (N, 3) over the hemisphere around ``normal``.

    The sample count is rounded down to a square grid in (cos theta, phi).
    """
    side = max(int(math.isqrt(samples)), 1)
    i, j = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
    u = (i.reshape(-1) + rng.random(side * side)) / side
    v = (j.reshape(-1) + rng.random(side * side)) / side
    cos_t = u
    sin_t = np.sqrt(np.maximum(1.0 - cos_t * cos_t, 0.0))
    phi = 2.0 * math.pi * v

    normal = np.asarray(normal, dtype=np.float64).reshape(1, 3)
    t1, t2 = tangent_frame(normal)
    return (sin_t * np.cos(phi))[:, None] * t1 + (sin_t * np.sin(phi))[:, None] * t2 + cos_t[:, None] * normal


def mc_shade(
    scene,
    x,
    n,
    view,
    env: EnvironmentLights,
    net: IndirectNet,
    material: Material,
    samples: int = 65536,
    seed: int = 0,
    cfg: Optional[TraceConfig] = None,
) -> np.ndarray:
    """Outgoing RGB radiance at x toward ``view`` by hemisphere quadrature.

    Visible directions see the summed environment; blocked directions see
    the occluder's mixed lobes, weighted by IndirectNet at the hit.

    Raises:
        ValueError: If the view is back-facing or the material is invalid.
    """
    cfg = cfg or TraceConfig()
    material.validate()
    x = np.asarray(x, dtype=np.float64).reshape(1, 3)
    n = np.asarray(n, dtype=np.float64).reshape(1, 3)
    n = n / np.linalg.norm(n)
    view = np.asarray(view, dtype=np.float64).reshape(1, 3)
    if float(np.sum(view * n)) <= 0.0:
        raise ValueError("Monte-Carlo reference needs a front-facing view")

    rng = np.random.default_rng(seed)
    dirs = hemisphere_samples(n[0], samples, rng)
    albedo = np.asarray(material.albedo, dtype=np.float64)
    f0 = np.asarray(material.fresnel, dtype=np.float64)

    total = np.zeros(3)
    for start in range(0, dirs.shape[0], CHUNK):
        d = dirs[start:start + CHUNK]
        m = d.shape[0]
        xs = np.repeat(x, m, axis=0)
        ns = np.repeat(n, m, axis=0)
        radiance = incident_radiance(scene, env, net, xs, ns, d, cfg)
        f = evaluate_brdf(
            np.broadcast_to(albedo, (m, 3)),
            np.full(m, material.roughness),
            np.broadcast_to(f0, (m, 3)),
            np.repeat(view, m, axis=0),
            d,
            ns,
        )
        cos = np.maximum(d @ n[0], 0.0)
        total += np.sum(radiance * f * cos[:, None], axis=0)

    # Uniform hemisphere pdf is 1 / (2 pi).
    estimate = total * 2.0 * math.pi / dirs.shape[0]
    logger.debug("Monte-Carlo reference with %d samples: %s", dirs.shape[0], estimate)
    return estimate
