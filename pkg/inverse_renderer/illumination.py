"""Environment lights, light classification, indirect estimation and the
boundary gradient term.

The environment is a fixed set of K spherical Gaussian lobes with learnable
sharpness and RGB amplitude. At every shaded point each lobe is classified
by tracing towards its axis:

- DIRECT: unobstructed, the environment lobe is used as is.
- INDIRECT: blocked by geometry at x'; the lobe is replaced by one whose
  sharpness and amplitude are convex combinations of all environment lobes,
  with weights predicted by IndirectNet from (x', n'). Lobes below the
  local horizon are tagged INDIRECT with a self flag and keep the
  environment lobe.
- BOUNDARY: the lobe axis skims a silhouette; it contributes its visible
  radiance at half weight, and the visibility discontinuity is handled by
  ``boundary_gradient``.
"""

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Any, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import nnls

from . import autodiff as ad
from .autodiff import GradientSink, ParameterStore, Tape
from .brdf import evaluate_brdf
from .config import RenderConfig, TraceConfig
from .material import encoding_size, positional_encoding
from .network import Mlp
from .sg_math import DirectionSet, SphericalGaussian
from .tracer import Visibility, bound_interval, occlusion_batch, occlusion_query, trace_batch

logger = logging.getLogger(__name__)

SHARPNESS_FLOOR = 1e-3
AMPLITUDE_FLOOR = 1e-12
PFM_FIT_SIZE = (32, 64)


def _inverse_softplus(y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    return np.where(y > 30.0, y, np.log(np.expm1(np.minimum(y, 30.0))))


def tangent_frame(normals: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Two unit tangents completing a right-handed frame around each normal."""
    normals = np.asarray(normals, dtype=np.float64)
    helper = np.where(np.abs(normals[..., 2:3]) < 0.9, [0.0, 0.0, 1.0], [1.0, 0.0, 0.0])
    t1 = np.cross(helper, normals)
    t1 /= np.linalg.norm(t1, axis=-1, keepdims=True)
    t2 = np.cross(normals, t1)
    return t1, t2


def equirect_directions(width: int, height: int) -> Tuple[np.ndarray, np.ndarray]:
    """Pixel-center directions of a lat-long map and their solid angles.

    Rows run from +y (top) to -y; the center column looks along +z.

    Returns:
        Tuple (directions (H, W, 3), solid angle per pixel (H, W)).
    """
    if width < 1 or height < 1:
        raise ValueError(f"Environment map size must be at least 1x1, got {width}x{height}")
    theta = math.pi * (np.arange(height) + 0.5) / height
    phi = 2.0 * math.pi * (np.arange(width) + 0.5) / width - math.pi
    th, ph = np.meshgrid(theta, phi, indexing="ij")
    dirs = np.stack([np.sin(th) * np.sin(ph), np.cos(th), np.sin(th) * np.cos(ph)], axis=-1)
    solid = np.sin(th) * (2.0 * math.pi / width) * (math.pi / height)
    return dirs, solid


# ---------------------------------------------------------------------------
# Environment
# ---------------------------------------------------------------------------


class EnvironmentLights:
    """K fixed-axis SG lights with softplus-parametrized sharpness and amplitude."""

    def __init__(self, store: ParameterStore, directions: DirectionSet, sharpness, amplitude, prefix: str = "env") -> None:
        k = len(directions)
        sharpness = np.broadcast_to(np.asarray(sharpness, dtype=np.float64), (k,))
        amplitude = np.broadcast_to(np.asarray(amplitude, dtype=np.float64), (k, 3))
        if np.any(sharpness <= SHARPNESS_FLOOR):
            raise ValueError(f"Light sharpness must exceed {SHARPNESS_FLOOR}, got min {sharpness.min()}")
        if np.any(amplitude < 0.0):
            raise ValueError("Light amplitudes must be non-negative")

        self.store = store
        self.directions = directions
        self.prefix = prefix
        self.sharpness_name = f"{prefix}.sharpness"
        self.amplitude_name = f"{prefix}.amplitude"
        store.add(self.sharpness_name, _inverse_softplus(sharpness - SHARPNESS_FLOOR))
        store.add(self.amplitude_name, _inverse_softplus(np.maximum(amplitude, AMPLITUDE_FLOOR)))

    @property
    def count(self) -> int:
        return len(self.directions)

    @property
    def axes(self) -> np.ndarray:
        return self.directions.vectors

    @property
    def group_names(self) -> List[str]:
        return [self.sharpness_name, self.amplitude_name]

    @staticmethod
    def default_sharpness(count: int) -> float:
        """Lobe width matched to the light spacing, K / (4 pi), at least 1."""
        return max(count / (4.0 * math.pi), 1.0)

    @classmethod
    def constant(cls, store: ParameterStore, directions: DirectionSet, radiance=1.0, sharpness: Optional[float] = None, prefix: str = "env") -> "EnvironmentLights":
        """Lights whose sum integrates to a uniform environment of ``radiance``."""
        k = len(directions)
        lam = sharpness if sharpness is not None else cls.default_sharpness(k)
        rgb = np.broadcast_to(np.asarray(radiance, dtype=np.float64), (3,))
        mu = 2.0 * rgb * lam / (k * (1.0 - math.exp(-2.0 * lam)))
        return cls(store, directions, np.full(k, lam), np.tile(mu, (k, 1)), prefix)

    @classmethod
    def from_values(cls, store: ParameterStore, directions: DirectionSet, sharpness, amplitude, prefix: str = "env") -> "EnvironmentLights":
        return cls(store, directions, sharpness, amplitude, prefix)

    @classmethod
    def from_image(cls, store: ParameterStore, directions: DirectionSet, image: np.ndarray, sharpness: Optional[float] = None, prefix: str = "env") -> "EnvironmentLights":
        """Fit amplitudes to a lat-long HDR image by non-negative least squares."""
        k = len(directions)
        lam = sharpness if sharpness is not None else cls.default_sharpness(k)
        amplitude = fit_amplitudes(image, directions.vectors, np.full(k, lam))
        return cls(store, directions, np.full(k, lam), amplitude, prefix)

    def sharpness(self, tape: Optional[Tape] = None):
        return ad.add(ad.softplus(self.store.param(self.sharpness_name, tape)), SHARPNESS_FLOOR)

    def amplitude(self, tape: Optional[Tape] = None):
        return ad.softplus(self.store.param(self.amplitude_name, tape))

    def lobes(self, tape: Optional[Tape] = None) -> SphericalGaussian:
        return SphericalGaussian(self.axes, self.sharpness(tape), self.amplitude(tape))

    def values(self) -> Tuple[np.ndarray, np.ndarray]:
        """Current (sharpness (K,), amplitude (K, 3)) as arrays."""
        return np.asarray(self.sharpness()), np.asarray(self.amplitude())

    def set_values(self, sharpness, amplitude) -> None:
        sharpness = np.broadcast_to(np.asarray(sharpness, dtype=np.float64), (self.count,))
        amplitude = np.broadcast_to(np.asarray(amplitude, dtype=np.float64), (self.count, 3))
        self.store.set_value(self.sharpness_name, _inverse_softplus(np.maximum(sharpness - SHARPNESS_FLOOR, AMPLITUDE_FLOOR)))
        self.store.set_value(self.amplitude_name, _inverse_softplus(np.maximum(amplitude, AMPLITUDE_FLOOR)))

    def radiance(self, dirs, tape: Optional[Tape] = None):
        """Sum of all lobes evaluated at directions (N, 3); returns (N, 3)."""
        cos = np.asarray(dirs, dtype=np.float64).reshape(-1, 3) @ self.axes.T
        lobe = ad.exp(ad.mul(self.sharpness(tape), cos - 1.0))
        return ad.matmul(lobe, self.amplitude(tape))


def sg_basis(dirs: np.ndarray, axes: np.ndarray, sharpness: np.ndarray) -> np.ndarray:
    """Unit-amplitude lobe values, shape (N, K)."""
    return np.exp(sharpness[None, :] * (dirs @ axes.T - 1.0))


def fit_amplitudes(image: np.ndarray, axes: np.ndarray, sharpness: np.ndarray) -> np.ndarray:
    """Non-negative amplitudes (K, 3) reproducing a lat-long image.

    The image is resampled to a coarse lat-long grid and each row of the
    system is weighted by the square root of its pixel solid angle.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"Environment image must be H x W x 3, got shape {image.shape}")
    h, w = PFM_FIT_SIZE
    rows = np.minimum((np.arange(h) + 0.5) * image.shape[0] / h, image.shape[0] - 1).astype(int)
    cols = np.minimum((np.arange(w) + 0.5) * image.shape[1] / w, image.shape[1] - 1).astype(int)
    target = image[rows][:, cols]

    dirs, solid = equirect_directions(w, h)
    weight = np.sqrt(solid.reshape(-1))
    basis = sg_basis(dirs.reshape(-1, 3), axes, sharpness) * weight[:, None]
    amplitude = np.zeros((axes.shape[0], 3))
    for c in range(3):
        amplitude[:, c], residual = nnls(basis, target[..., c].reshape(-1) * weight)
        logger.debug("Environment fit channel %d: residual %.6f", c, residual)
    return amplitude


def env_map_export(env: EnvironmentLights, width: int, height: int) -> np.ndarray:
    """Lat-long HDR image (H, W, 3) of the summed environment lobes."""
    dirs, _ = equirect_directions(width, height)
    return np.asarray(env.radiance(dirs.reshape(-1, 3))).reshape(height, width, 3)


# ---------------------------------------------------------------------------
# Indirect estimation
# ---------------------------------------------------------------------------


class IndirectNet:
    """Softplus MLP from (gamma(x'), gamma(n')) to softmax weights over K lights."""

    def __init__(
        self,
        store: ParameterStore,
        light_count: int,
        hidden: Sequence[int] = (128, 128, 128, 128),
        pos_freqs: int = 6,
        normal_freqs: int = 4,
        prefix: str = "indirect",
        seed: int = 0,
    ) -> None:
        self.store = store
        self.light_count = light_count
        self.pos_freqs = pos_freqs
        self.normal_freqs = normal_freqs
        inputs = encoding_size(pos_freqs) + encoding_size(normal_freqs)
        self.mlp = Mlp(store, prefix, (inputs, *hidden, light_count), seed=seed, zero_last=True)

    @property
    def group_names(self) -> List[str]:
        return self.mlp.group_names

    def weights(self, points, normals, tape: Optional[Tape] = None):
        features = ad.concat(
            [positional_encoding(points, self.pos_freqs), positional_encoding(normals, self.normal_freqs)],
            axis=-1,
        )
        return ad.softmax(self.mlp.forward(features, tape), axis=-1)


def indirect_weights(net: IndirectNet, point, normal, tape: Optional[Tape] = None):
    """Convex weights (K,) for one occluder point, or (Q, K) for a batch."""
    if ad.is_taped(point, normal) or np.ndim(ad.value_of(point)) == 2:
        return net.weights(point, normal, tape)
    w = net.weights(np.asarray(point, dtype=np.float64)[None], np.asarray(normal, dtype=np.float64)[None], tape)
    return w[0]


def indirect_lobe_params(env: EnvironmentLights, weights, tape: Optional[Tape] = None):
    """Sharpness (Q,) and amplitude (Q, 3) as weighted sums of the environment's."""
    return ad.matmul(weights, ad.unsqueeze(env.sharpness(tape)))[:, 0], ad.matmul(weights, env.amplitude(tape))


def indirect_sg(env: EnvironmentLights, weights, index: int, tape: Optional[Tape] = None) -> SphericalGaussian:
    """Indirect lobe for occluded light ``index``: its own axis, mixed parameters."""
    lam = ad.dot(weights, env.sharpness(tape))
    mu = ad.sum_(ad.mul(ad.unsqueeze(weights), env.amplitude(tape)), axis=0)
    return SphericalGaussian(env.axes[index], lam, mu)


# ---------------------------------------------------------------------------
# Classification
# ---------------------------------------------------------------------------


class LightKind(Enum):
    DIRECT = "direct"
    INDIRECT = "indirect"
    BOUNDARY = "boundary"


@dataclass
class LightClass:
    kind: LightKind
    point: Optional[np.ndarray] = None
    normal: Optional[np.ndarray] = None
    self_occluded: bool = False


@dataclass
class Classification:
    """Visibility codes (P, K) with x'/x_g points and normals (P, K, 3)."""

    kinds: np.ndarray
    points: np.ndarray
    normals: np.ndarray

    @property
    def indirect_mask(self) -> np.ndarray:
        return self.kinds == Visibility.OCCLUDED

    def counts(self) -> dict:
        return {v.name.lower(): int(np.sum(self.kinds == v)) for v in Visibility}


def _to_class(kind: Visibility, point, normal, x, n) -> LightClass:
    if kind == Visibility.UNOCCLUDED:
        return LightClass(LightKind.DIRECT)
    if kind == Visibility.SELF:
        return LightClass(LightKind.INDIRECT, np.asarray(x, dtype=np.float64), np.asarray(n, dtype=np.float64), True)
    if kind == Visibility.OCCLUDED:
        return LightClass(LightKind.INDIRECT, point, normal)
    return LightClass(LightKind.BOUNDARY, point, normal)


def classify_light(scene, x, n, env: EnvironmentLights, index: int, cfg: TraceConfig) -> LightClass:
    """Classify environment light ``index`` at surface point x with normal n."""
    result = occlusion_query(scene, x, n, env.axes[index], cfg)
    return _to_class(result.kind, result.point, result.normal, x, n)


def classify_lights(scene, points: np.ndarray, normals: np.ndarray, axes: np.ndarray, cfg: TraceConfig) -> Classification:
    """Classify every light at every point in one traced batch."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    normals = np.asarray(normals, dtype=np.float64).reshape(-1, 3)
    p, k = points.shape[0], axes.shape[0]
    batch = occlusion_batch(
        scene,
        np.repeat(points, k, axis=0),
        np.repeat(normals, k, axis=0),
        np.tile(axes, (p, 1)),
        cfg,
    )
    result = Classification(batch.kind.reshape(p, k), batch.points.reshape(p, k, 3), batch.normals.reshape(p, k, 3))
    logger.debug("Classified %d points x %d lights: %s", p, k, result.counts())
    return result


def find_boundary_set(classification: Classification) -> np.ndarray:
    """Indices of points whose hemisphere holds a visibility discontinuity.

    A point qualifies when any light skims a silhouette, or when its
    above-horizon lights are partly visible and partly blocked.
    """
    kinds = classification.kinds
    grazing = np.any(kinds == Visibility.GRAZING, axis=1)
    visible = np.any(kinds == Visibility.UNOCCLUDED, axis=1)
    blocked = np.any(kinds == Visibility.OCCLUDED, axis=1)
    return np.nonzero(grazing | (visible & blocked))[0]


def effective_lights(
    env: EnvironmentLights,
    net: IndirectNet,
    kinds: np.ndarray,
    indirect_points=None,
    indirect_normals=None,
    tape: Optional[Tape] = None,
    boundary_weight: float = 0.5,
):
    """Per-point effective lobe parameters for the light sum.

    Args:
        env: Environment lights.
        net: Indirect weight network.
        kinds: (P, K) visibility codes.
        indirect_points: (Q, 3) x' for the OCCLUDED entries in row-major order.
        indirect_normals: (Q, 3) n' for the same entries.
        tape: Tape for learnable parameters.
        boundary_weight: Amplitude factor for GRAZING entries.

    Returns:
        Tuple (sharpness (P, K), amplitude (P, K, 3)); axes stay env.axes.
    """
    p, k = kinds.shape
    lam = env.sharpness(tape)
    mu = env.amplitude(tape)
    lam_eff = ad.mul(np.ones((p, 1)), lam)
    scale = np.where(kinds == Visibility.GRAZING, boundary_weight, 1.0)[..., None]
    mu_eff = ad.mul(scale, mu)

    occluded = kinds == Visibility.OCCLUDED
    q = int(np.sum(occluded))
    if q == 0:
        return lam_eff, mu_eff

    weights = net.weights(indirect_points, indirect_normals, tape)
    lam_r, mu_r = indirect_lobe_params(env, weights, tape)
    # Row q of the padded tables is a placeholder for non-indirect entries.
    index = np.full((p, k), q, dtype=np.int64)
    index[occluded] = np.arange(q)
    lam_table = ad.concat([lam_r, np.zeros(1)], axis=0)
    mu_table = ad.concat([mu_r, np.zeros((1, 3))], axis=0)
    lam_eff = ad.where(occluded, ad.getitem(lam_table, index), lam_eff)
    mu_eff = ad.where(occluded[..., None], ad.getitem(mu_table, index), mu_eff)
    return lam_eff, mu_eff


def effective_light(
    scene,
    x,
    n,
    env: EnvironmentLights,
    net: IndirectNet,
    index: int,
    cfg: TraceConfig,
    tape: Optional[Tape] = None,
    boundary_weight: float = 0.5,
) -> Tuple[SphericalGaussian, LightClass]:
    """The lobe substituted for light ``index`` at x, with its class tag."""
    light = classify_light(scene, x, n, env, index, cfg)
    axis = env.axes[index]
    if light.kind == LightKind.INDIRECT and not light.self_occluded:
        weights = indirect_weights(net, light.point, light.normal, tape)
        return indirect_sg(env, weights, index, tape), light
    lam = ad.getitem(env.sharpness(tape), index)
    mu = ad.getitem(env.amplitude(tape), index)
    if light.kind == LightKind.BOUNDARY:
        mu = ad.mul(boundary_weight, mu)
    return SphericalGaussian(axis, lam, mu), light


# ---------------------------------------------------------------------------
# Boundary term
# ---------------------------------------------------------------------------


@dataclass
class BoundaryStats:
    points: int = 0
    flips: int = 0
    skipped: int = 0
    rays: int = 0
    contribution: float = 0.0

    def to_dict(self) -> dict:
        return {
            "points": self.points,
            "flips": self.flips,
            "skipped": self.skipped,
            "rays": self.rays,
            "contribution": self.contribution,
        }


def _slice_directions(normals, t1, t2, theta, phi):
    """Directions and d/dtheta tangents for broadcastable theta/phi arrays."""
    st, ct = np.sin(theta)[..., None], np.cos(theta)[..., None]
    sp, cp = np.sin(phi)[..., None], np.cos(phi)[..., None]
    dirs = st * cp * t1 + st * sp * t2 + ct * normals
    e_theta = ct * cp * t1 + ct * sp * t2 - st * normals
    return dirs, e_theta


def _blocked(scene, origins, dirs, cfg: TraceConfig) -> Tuple[np.ndarray, Any]:
    batch = trace_batch(scene, origins, dirs, cfg, refine=False)
    return batch.hit, batch


def _tangent_distance(scene, origins: np.ndarray, dirs: np.ndarray, t0: np.ndarray, steps: int = 8, h: float = 1e-4) -> np.ndarray:
    """Distance along each ray to the minimum of the SDF near t0 (Newton on grad F . d)."""
    t = t0.copy()
    for _ in range(steps):
        g0 = np.sum(scene.gradient(origins + t[:, None] * dirs) * dirs, axis=-1)
        gp = np.sum(scene.gradient(origins + (t + h)[:, None] * dirs) * dirs, axis=-1)
        gm = np.sum(scene.gradient(origins + (t - h)[:, None] * dirs) * dirs, axis=-1)
        curvature = (gp - gm) / (2.0 * h)
        ok = curvature > 1e-12
        step = np.where(ok, -g0 / np.where(ok, curvature, 1.0), 0.0)
        t = np.maximum(t + np.clip(step, -0.5, 0.5), 0.0)
    return t


def occluded_radiance(env: EnvironmentLights, net: IndirectNet, points, normals, dirs) -> np.ndarray:
    """Radiance (N, 3) reflected toward ``dirs`` by occluders at (x', n').

    Every environment axis carries the mixed lobe predicted at the occluder.
    """
    dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    if dirs.shape[0] == 0:
        return np.zeros((0, 3))
    weights = np.asarray(net.weights(np.asarray(points, dtype=np.float64), np.asarray(normals, dtype=np.float64)))
    lam_r, mu_r = (np.asarray(v) for v in indirect_lobe_params(env, weights))
    lobes = np.exp(lam_r[:, None] * (dirs @ env.axes.T - 1.0)).sum(axis=1)
    return lobes[:, None] * mu_r


def incident_radiance(scene, env: EnvironmentLights, net: IndirectNet, x, normals, dirs, cfg: TraceConfig) -> np.ndarray:
    """Radiance arriving from ``dirs`` at x: environment when visible, occluder lobes when blocked."""
    origins = x + cfg.offset * normals
    batch = trace_batch(scene, origins, dirs, cfg, refine=True)
    radiance = np.asarray(env.radiance(dirs))
    blocked = np.nonzero(batch.hit)[0]
    if blocked.size:
        radiance[blocked] = occluded_radiance(env, net, batch.points[blocked], batch.normals[blocked], dirs[blocked])
    return radiance


def boundary_gradient(
    scene,
    points: np.ndarray,
    normals: np.ndarray,
    views: np.ndarray,
    albedo: np.ndarray,
    roughness: np.ndarray,
    fresnel: np.ndarray,
    env: EnvironmentLights,
    net: IndirectNet,
    upstream: np.ndarray,
    cfg: RenderConfig,
    weight=1.0,
    sink: Optional[GradientSink] = None,
) -> BoundaryStats:
    """Add the visibility-discontinuity gradient of shaded radiance into the geometry parameters.

    For each point the hemisphere around n is cut into azimuthal slices.
    Visibility flips along a slice are bracketed by the polar samples and
    located by bisection at theta_c. With x_g the tangent point on the flip
    ray at distance t_g, implicit differentiation of the tangency condition
    gives d theta_c / d p = -dF/dp(x_g) / (t_g grad F(x_g) . e_theta), and
    the radiance derivative is

        (h(theta_c - eps) - h(theta_c + eps)) sin(theta_c) d_phi d theta_c / d p

    with h = L f (w . n). The upstream weights turn RGB radiance into the
    scalar loss.

    Args:
        scene: Geometry; its parameters receive the gradient.
        points: (P, 3) shaded points.
        normals: (P, 3) unit normals.
        views: (P, 3) unit directions toward the viewer.
        albedo: (P, 3) albedo.
        roughness: (P,) roughness.
        fresnel: (P, 3) F0.
        env: Environment lights.
        net: Indirect weight network.
        upstream: (P, 3) loss gradient w.r.t. each point's radiance.
        cfg: Render settings (slice counts, eps, bisection iterations).
        weight: Scalar or (P,) reweighting of each point's contribution.
        sink: Optional per-worker gradient buffer.

    Returns:
        BoundaryStats for logging.
    """
    stats = BoundaryStats(points=int(np.shape(points)[0]))
    names = getattr(scene, "parameter_names", [])
    if stats.points == 0 or not names:
        return stats

    trace = cfg.trace
    p = stats.points
    m, s = cfg.boundary_slices, cfg.boundary_steps
    t1, t2 = tangent_frame(normals)
    phi = (np.arange(m) + 0.5) * 2.0 * math.pi / m
    theta = (np.arange(s) + 0.5) * 0.5 * math.pi / s

    # Polar sweep per slice: (P, M, S) visibility samples.
    dirs, _ = _slice_directions(
        normals[:, None, None, :], t1[:, None, None, :], t2[:, None, None, :], theta[None, None, :], phi[None, :, None]
    )
    origins = np.broadcast_to((points + trace.offset * normals)[:, None, None, :], dirs.shape)
    blocked, _ = _blocked(scene, origins.reshape(-1, 3), dirs.reshape(-1, 3), trace)
    blocked = blocked.reshape(p, m, s)
    stats.rays += p * m * s

    pi_, mi, si = np.nonzero(blocked[:, :, :-1] != blocked[:, :, 1:])
    stats.flips = int(pi_.size)
    if pi_.size == 0:
        return stats

    n_f, t1_f, t2_f = normals[pi_], t1[pi_], t2[pi_]
    x_f = points[pi_]
    o_f = x_f + trace.offset * n_f
    phi_f = phi[mi]
    lo, hi = theta[si].copy(), theta[si + 1].copy()
    lo_blocked = blocked[pi_, mi, si]

    for _ in range(cfg.bisection_iterations):
        mid = 0.5 * (lo + hi)
        d_mid, _ = _slice_directions(n_f, t1_f, t2_f, mid, phi_f)
        b_mid, _ = _blocked(scene, o_f, d_mid, trace)
        same = b_mid == lo_blocked
        lo = np.where(same, mid, lo)
        hi = np.where(same, hi, mid)
    stats.rays += pi_.size * cfg.bisection_iterations
    theta_c = 0.5 * (lo + hi)

    # Tangent point on the blocked side of the bracket.
    theta_b = np.where(lo_blocked, lo, hi)
    d_b, _ = _slice_directions(n_f, t1_f, t2_f, theta_b, phi_f)
    _, hit_b = _blocked(scene, o_f, d_b, trace)
    found = hit_b.hit
    _, _, t_exit = bound_interval(o_f, d_b, trace.bound_radius)
    t_start = np.where(found, hit_b.t, 0.5 * np.minimum(t_exit, 1.0))
    t_g = _tangent_distance(scene, o_f, d_b, t_start)
    x_g = o_f + t_g[:, None] * d_b

    d_c, e_theta = _slice_directions(n_f, t1_f, t2_f, theta_c, phi_f)
    grad_g = scene.gradient(x_g)
    dist_g = np.linalg.norm(x_g - x_f, axis=-1)
    denom = dist_g * np.sum(grad_g * e_theta, axis=-1)
    valid = found & (np.linalg.norm(grad_g, axis=-1) >= 1e-9) & (np.abs(denom) > 1e-12)
    skipped = int(np.sum(~valid))
    if skipped:
        stats.skipped = skipped
        env.store.warning_count += skipped
        logger.warning("Boundary term skipped %d degenerate silhouette directions", skipped)

    eps = math.radians(cfg.boundary_eps_deg)
    d_minus, _ = _slice_directions(n_f, t1_f, t2_f, theta_c - eps, phi_f)
    d_plus, _ = _slice_directions(n_f, t1_f, t2_f, np.minimum(theta_c + eps, 0.5 * math.pi), phi_f)
    views_f = views[pi_]
    h = []
    for d_side in (d_minus, d_plus):
        radiance = incident_radiance(scene, env, net, x_f, n_f, d_side, trace)
        f = evaluate_brdf(albedo[pi_], roughness[pi_], fresnel[pi_], views_f, d_side, n_f)
        cos = np.maximum(np.sum(d_side * n_f, axis=-1), 0.0)
        h.append(radiance * f * cos[:, None])
    stats.rays += 2 * pi_.size

    w = np.broadcast_to(np.asarray(weight, dtype=np.float64), (p,))[pi_]
    d_phi = 2.0 * math.pi / m
    coef = np.sum(upstream[pi_] * (h[0] - h[1]), axis=-1) * np.sin(theta_c) * d_phi * w
    factor = np.where(valid, -coef / np.where(valid, denom, 1.0), 0.0)
    if not np.any(factor != 0.0):
        return stats

    tape = Tape()
    total = ad.sum_(ad.mul(factor, scene.sdf(x_g, tape)))
    if sink is None:
        tape.backward(total)
    else:
        tape.backward(total, sink=sink)
    stats.contribution = float(np.sum(np.abs(factor)))
    logger.debug("Boundary term: %d points, %d flips, %d skipped", stats.points, stats.flips, stats.skipped)
    return stats
