"""Forward rendering: cameras, batched SG shading and tone mapping."""

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tape
from .brdf import DEFAULT_F0, Material, specular_lobe
from .illumination import Classification, EnvironmentLights, IndirectNet, classify_lights, effective_lights
from .material import MaterialSample, OverriddenMaterials
from .sg_math import SphericalGaussian, clamped_cosine_sg, sg_inner_product, sg_product
from .tracer import trace_batch

logger = logging.getLogger(__name__)

GAMMA = 2.2
MIN_VIEW_COS = 1e-4


@dataclass
class Camera:
    """Pinhole camera with a vertical field of view; pixel (0, 0) is top-left."""

    position: Tuple[float, float, float] = (0.0, 0.0, -4.0)
    look_at: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    up: Tuple[float, float, float] = (0.0, 1.0, 0.0)
    fov_deg: float = 40.0
    width: int = 64
    height: int = 64

    def validate(self) -> None:
        """Check the field of view, resolution and up vector.

        Raises:
            ValueError: On an invalid camera.
        """
        if not 0.0 < self.fov_deg < 180.0:
            raise ValueError(f"Camera fov must lie in (0, 180), got {self.fov_deg}")
        if self.width < 1 or self.height < 1:
            raise ValueError(f"Camera resolution must be positive, got {self.width}x{self.height}")
        forward = np.asarray(self.look_at, dtype=np.float64) - np.asarray(self.position, dtype=np.float64)
        if np.linalg.norm(forward) == 0.0:
            raise ValueError("Camera position and look-at coincide")
        if np.linalg.norm(np.cross(forward / np.linalg.norm(forward), self.up)) < 1e-9:
            raise ValueError("Camera up vector is parallel to the view axis")

    def basis(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(forward, right, up) unit vectors of the image plane."""
        forward = np.asarray(self.look_at, dtype=np.float64) - np.asarray(self.position, dtype=np.float64)
        forward /= np.linalg.norm(forward)
        right = np.cross(forward, np.asarray(self.up, dtype=np.float64))
        right /= np.linalg.norm(right)
        return forward, right, np.cross(right, forward)

    def generate_rays(self) -> Tuple[np.ndarray, np.ndarray]:
        """Origins and unit directions through pixel centers, row-major (H*W, 3)."""
        self.validate()
        forward, right, up = self.basis()
        half = math.tan(math.radians(self.fov_deg) / 2.0)
        aspect = self.width / self.height
        u = (2.0 * (np.arange(self.width) + 0.5) / self.width - 1.0) * half * aspect
        v = (1.0 - 2.0 * (np.arange(self.height) + 0.5) / self.height) * half
        vv, uu = np.meshgrid(v, u, indexing="ij")
        dirs = forward + uu[..., None] * right + vv[..., None] * up
        dirs = dirs.reshape(-1, 3)
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        origins = np.broadcast_to(np.asarray(self.position, dtype=np.float64), dirs.shape).copy()
        return origins, dirs

    def to_dict(self) -> Dict[str, Any]:
        return {
            "position": list(self.position),
            "look_at": list(self.look_at),
            "up": list(self.up),
            "fov": self.fov_deg,
            "width": self.width,
            "height": self.height,
        }


@dataclass
class RayRender:
    """Radiance for a ray batch plus per-hit shading inputs."""

    radiance: Any
    hit: np.ndarray
    hit_index: np.ndarray
    points: np.ndarray
    normals: np.ndarray
    views: np.ndarray
    albedo: Any
    roughness: Any
    fresnel: np.ndarray
    latent: Any = None
    classification: Optional[Classification] = None
    stats: Dict[str, int] = field(default_factory=dict)


@dataclass
class RenderResult:
    """HDR image with hit mask and material buffers, all row-major (H, W, ...)."""

    image: np.ndarray
    hit_mask: np.ndarray
    albedo: np.ndarray
    roughness: np.ndarray
    stats: Dict[str, int] = field(default_factory=dict)
    elapsed_ms: float = 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "width": int(self.image.shape[1]),
            "height": int(self.image.shape[0]),
            "hit_pixels": int(self.hit_mask.sum()),
            "mean_radiance": float(self.image.mean()),
            "elapsed_ms": self.elapsed_ms,
            **self.stats,
        }


# ---------------------------------------------------------------------------
# Shading
# ---------------------------------------------------------------------------


def shade_points(
    env: EnvironmentLights,
    net: IndirectNet,
    normals,
    views,
    albedo,
    roughness,
    fresnel,
    kinds: np.ndarray,
    indirect_points=None,
    indirect_normals=None,
    tape: Optional[Tape] = None,
    boundary_weight: float = 0.5,
):
    """Outgoing radiance (P, 3) as a sum of SG inner products over all lights.

    Each light contributes int G_eff C_n (a / pi) + scale int G_eff S C_n,
    where C_n is the clamped-cosine lobe and S the warped specular lobe.
    """
    p = kinds.shape[0]
    lam_eff, mu_eff = effective_lights(env, net, kinds, indirect_points, indirect_normals, tape, boundary_weight)
    light = SphericalGaussian(env.axes[None, :, :], lam_eff, mu_eff)
    normal_b = ad.reshape(normals, (p, 1, 3))
    cosine = clamped_cosine_sg(normal_b)

    diffuse = ad.sum_(sg_inner_product(light, cosine), axis=1)
    lobe, scale, _ = specular_lobe(roughness, fresnel, views, normals)
    lobe_b = SphericalGaussian(
        ad.reshape(lobe.axis, (p, 1, 3)),
        ad.reshape(lobe.sharpness, (p, 1)),
        ad.reshape(lobe.amplitude, (p, 1, 1)),
    )
    specular = ad.sum_(sg_inner_product(sg_product(light, lobe_b), cosine), axis=1)
    return ad.add(ad.mul(ad.mul(albedo, 1.0 / math.pi), diffuse), ad.mul(scale, specular))


def _boundary_weight(bundle) -> float:
    return 0.5 if bundle.render.half_weight_boundary else 1.0


def source_fresnel(source, points: np.ndarray, default=DEFAULT_F0) -> np.ndarray:
    """F0 (P, 3) from a material source, with any Fresnel scale applied.

    Sources without per-point reflectance fall back to ``default``.
    """
    scale = 1.0
    if isinstance(source, OverriddenMaterials):
        if source.override.fresnel_scale is not None:
            scale = source.override.fresnel_scale
        source = source.base
    if hasattr(source, "fresnel"):
        f0 = source.fresnel(points)
    else:
        f0 = np.tile(np.asarray(default, dtype=np.float64), (points.shape[0], 1))
    return np.clip(scale * f0, 0.0, 1.0)


def fresnel_at(bundle, points: np.ndarray) -> np.ndarray:
    """F0 (P, 3) for a bundle's material source."""
    return source_fresnel(bundle.materials, points, bundle.fresnel)


def differentiable_points(geometry, points: np.ndarray, dirs: np.ndarray, normals: np.ndarray, tape: Tape):
    """x = x0 - v F(x0) / (v . n0) with n0 fixed: exact at x0, differentiable in the geometry."""
    f = geometry.sdf(points, tape)
    vn = np.sum(dirs * normals, axis=-1)
    vn = np.where(np.abs(vn) < MIN_VIEW_COS, np.where(vn < 0.0, -MIN_VIEW_COS, MIN_VIEW_COS), vn)
    return ad.sub(points, ad.mul(dirs, ad.unsqueeze(ad.div(f, vn))))


def _taped_normals(geometry, points, tape: Tape):
    _, grad = geometry.sdf_and_grad(points, tape)
    return ad.normalize(grad)


def render_rays(bundle, origins: np.ndarray, dirs: np.ndarray, tape: Optional[Tape] = None) -> RayRender:
    """Trace, classify and shade a batch of camera rays.

    Misses show the environment. With a tape, hit points and secondary hit
    points are re-expressed as differentiable functions of the geometry and
    every learnable input of the shading is recorded.
    """
    cfg = bundle.render
    geometry, env, net = bundle.geometry, bundle.env, bundle.indirect
    origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)

    traced = trace_batch(geometry, origins, dirs, cfg.trace, refine=True)
    hit_index = np.nonzero(traced.hit)[0]
    miss_index = np.nonzero(~traced.hit)[0]
    x0 = traced.points[hit_index]
    n0 = traced.normals[hit_index]
    v = dirs[hit_index]
    views = -v
    stats = {"rays": int(origins.shape[0]), "hits": int(hit_index.size)}

    backfacing = int(np.sum(np.sum(views * n0, axis=-1) <= 0.0))
    if backfacing:
        stats["backfacing"] = backfacing
        logger.warning("%d back-facing hits shaded with a clamped view cosine", backfacing)

    differentiable = tape is not None and bool(getattr(geometry, "parameter_names", []))
    parts = []
    albedo = roughness = latent = None
    fresnel = np.zeros((0, 3))
    classification = None

    if hit_index.size:
        if differentiable:
            x = differentiable_points(geometry, x0, v, n0, tape)
            n = _taped_normals(geometry, x, tape)
        else:
            x, n = x0, n0

        classification = classify_lights(geometry, x0, n0, env.axes, cfg.trace)
        stats.update(classification.counts())
        occluded = classification.indirect_mask
        ip = classification.points[occluded]
        inn = classification.normals[occluded]
        if differentiable and ip.shape[0]:
            xi = np.broadcast_to(env.axes[None, :, :], classification.points.shape)[occluded]
            ip = differentiable_points(geometry, ip, xi, inn, tape)
            inn = _taped_normals(geometry, ip, tape)

        sample: MaterialSample = bundle.materials.forward(x, tape)
        albedo, roughness, latent = sample.albedo, sample.roughness, sample.latent
        fresnel = fresnel_at(bundle, x0)
        parts.append(
            shade_points(
                env, net, n, views, albedo, roughness, fresnel, classification.kinds,
                ip, inn, tape, _boundary_weight(bundle),
            )
        )
    if miss_index.size:
        parts.append(env.radiance(dirs[miss_index], tape))

    order = np.empty(origins.shape[0], dtype=np.int64)
    order[hit_index] = np.arange(hit_index.size)
    order[miss_index] = hit_index.size + np.arange(miss_index.size)
    if len(parts) == 1:
        table = parts[0]
    else:
        table = ad.concat(parts, axis=0)
    radiance = ad.getitem(table, order)

    return RayRender(
        radiance=radiance,
        hit=traced.hit,
        hit_index=hit_index,
        points=x0,
        normals=n0,
        views=views,
        albedo=albedo,
        roughness=roughness,
        fresnel=fresnel,
        latent=latent,
        classification=classification,
        stats=stats,
    )


def shade_point(
    x, n, view, env: EnvironmentLights, net: IndirectNet, materials, scene, cfg,
    tape: Optional[Tape] = None, default_f0=DEFAULT_F0,
):
    """Radiance leaving one surface point toward ``view``.

    ``materials`` is either a Material or a source with ``forward(x, tape)``.

    Raises:
        ValueError: If the view is back-facing.
    """
    x = np.asarray(x, dtype=np.float64).reshape(1, 3)
    n = np.asarray(n, dtype=np.float64).reshape(1, 3)
    view = np.asarray(view, dtype=np.float64).reshape(1, 3)
    cos = float(np.sum(view * n))
    if cos <= 0.0:
        raise ValueError(f"Back-facing view at ({x[0, 0]:.4g}, {x[0, 1]:.4g}, {x[0, 2]:.4g}): view . n = {cos:.6f}")

    if isinstance(materials, Material):
        materials.validate()
        albedo = np.asarray(materials.albedo, dtype=np.float64)[None]
        roughness = np.array([materials.roughness])
        fresnel = np.asarray(materials.fresnel, dtype=np.float64)[None]
    else:
        sample = materials.forward(x, tape)
        albedo, roughness = sample.albedo, sample.roughness
        fresnel = source_fresnel(materials, x, default_f0)

    classification = classify_lights(scene, x, n, env.axes, cfg.trace)
    occluded = classification.indirect_mask
    radiance = shade_points(
        env, net, n, view, albedo, roughness, fresnel, classification.kinds,
        classification.points[occluded], classification.normals[occluded], tape,
        0.5 if cfg.half_weight_boundary else 1.0,
    )
    return ad.getitem(radiance, 0)


# ---------------------------------------------------------------------------
# Images
# ---------------------------------------------------------------------------


def _render_chunk(bundle, origins: np.ndarray, dirs: np.ndarray):
    result = render_rays(bundle, origins, dirs)
    n = origins.shape[0]
    albedo = np.zeros((n, 3))
    roughness = np.zeros(n)
    if result.hit_index.size:
        albedo[result.hit_index] = np.asarray(result.albedo)
        roughness[result.hit_index] = np.asarray(result.roughness)
    return np.asarray(result.radiance), result.hit, albedo, roughness, result.stats


def render_image(bundle, camera: Camera, chunk: int = 1024, threads: Optional[int] = None) -> RenderResult:
    """Render an HDR image with hit mask and albedo/roughness buffers.

    Pixels are processed in chunks, optionally on a thread pool; each chunk
    only reads the bundle.
    """
    start = time.perf_counter()
    origins, dirs = camera.generate_rays()
    spans = [(i, min(i + chunk, origins.shape[0])) for i in range(0, origins.shape[0], chunk)]
    workers = threads if threads is not None else bundle.render.threads

    if workers > 1 and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outputs = list(pool.map(lambda s: _render_chunk(bundle, origins[s[0]:s[1]], dirs[s[0]:s[1]]), spans))
    else:
        outputs = [_render_chunk(bundle, origins[a:b], dirs[a:b]) for a, b in spans]

    h, w = camera.height, camera.width
    image = np.concatenate([o[0] for o in outputs]).reshape(h, w, 3)
    mask = np.concatenate([o[1] for o in outputs]).reshape(h, w)
    albedo = np.concatenate([o[2] for o in outputs]).reshape(h, w, 3)
    roughness = np.concatenate([o[3] for o in outputs]).reshape(h, w)
    stats: Dict[str, int] = {}
    for o in outputs:
        for key, value in o[4].items():
            stats[key] = stats.get(key, 0) + value

    elapsed = (time.perf_counter() - start) * 1000.0
    logger.info("Rendered %dx%d in %.1f ms (%d hit pixels)", w, h, elapsed, int(mask.sum()))
    return RenderResult(image, mask, albedo, roughness, stats, elapsed)


def tone_map(hdr: np.ndarray) -> np.ndarray:
    """Gamma 1/2.2, clip to [0, 1], quantize to bytes with round(v * 255)."""
    v = np.clip(np.maximum(np.asarray(hdr, dtype=np.float64), 0.0) ** (1.0 / GAMMA), 0.0, 1.0)
    return np.round(v * 255.0).astype(np.uint8)


def tone_map_float(hdr: np.ndarray) -> np.ndarray:
    """Tone-mapped values in [0, 1] without quantization."""
    return np.clip(np.maximum(np.asarray(hdr, dtype=np.float64), 0.0) ** (1.0 / GAMMA), 0.0, 1.0)
