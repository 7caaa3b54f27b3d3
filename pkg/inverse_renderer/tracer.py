"""Sphere tracing, hit refinement and occlusion queries.

All tracing is vectorized over ray batches and runs on plain numpy values;
the renderer re-expresses hit points as differentiable functions of the
geometry parameters afterwards. Single-ray helpers wrap the batch code.
"""

import logging
import math
from dataclasses import dataclass
from enum import IntEnum
from typing import Optional, Tuple, Union

import numpy as np

from .config import TraceConfig

logger = logging.getLogger(__name__)

GRAZING_GUARD = 1e-4


class Visibility(IntEnum):
    UNOCCLUDED = 0
    OCCLUDED = 1
    GRAZING = 2
    SELF = 3


@dataclass
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    t_min: float = 0.0
    t_max: float = math.inf

    def validate(self) -> None:
        """Check a unit direction and 0 <= t_min < t_max.

        Raises:
            ValueError: On an invalid ray.
        """
        if abs(np.linalg.norm(self.direction) - 1.0) > 1e-9:
            raise ValueError(f"Ray direction must be unit length, got norm {np.linalg.norm(self.direction):.6g}")
        if not 0.0 <= self.t_min < self.t_max:
            raise ValueError(f"Ray needs 0 <= t_min < t_max, got [{self.t_min}, {self.t_max}]")


@dataclass
class SurfaceHit:
    point: np.ndarray
    normal: np.ndarray
    t: float
    iterations: int
    refined: bool
    residual: float


@dataclass
class Miss:
    iterations: int
    closest_sdf: float = math.inf


@dataclass
class Occlusion:
    """Result of one occlusion query; point/normal are x', n' or x_g, n_g."""

    kind: Visibility
    point: Optional[np.ndarray] = None
    normal: Optional[np.ndarray] = None
    t: float = math.inf
    angle_deg: float = 90.0


@dataclass
class TraceBatch:
    """Per-ray arrays for a traced batch."""

    hit: np.ndarray
    t: np.ndarray
    points: np.ndarray
    normals: np.ndarray
    iterations: np.ndarray
    refined: np.ndarray
    residual: np.ndarray
    closest_sdf: np.ndarray
    closest_t: np.ndarray

    def __len__(self) -> int:
        return self.hit.shape[0]


@dataclass
class OcclusionBatch:
    kind: np.ndarray
    points: np.ndarray
    normals: np.ndarray
    t: np.ndarray
    angle_deg: np.ndarray

    def counts(self) -> dict:
        return {v.name.lower(): int(np.sum(self.kind == v)) for v in Visibility}


def _unit_normals(scene, points: np.ndarray) -> np.ndarray:
    grad = scene.gradient(points)
    length = np.linalg.norm(grad, axis=-1, keepdims=True)
    return np.where(length > 0.0, grad / np.where(length > 0.0, length, 1.0), 0.0)


def bound_interval(origins: np.ndarray, dirs: np.ndarray, radius: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Entry and exit distances of rays against the scene bounding sphere."""
    b = np.sum(origins * dirs, axis=-1)
    c = np.sum(origins * origins, axis=-1) - radius * radius
    disc = b * b - c
    crosses = disc >= 0.0
    root = np.sqrt(np.maximum(disc, 0.0))
    return crosses, -b - root, -b + root


def trace_batch(
    scene,
    origins: np.ndarray,
    dirs: np.ndarray,
    cfg: TraceConfig,
    t_min=0.0,
    t_max=math.inf,
    refine: bool = True,
    track_approach: bool = False,
) -> TraceBatch:
    """Sphere trace a batch of rays, clipped to the scene bound.

    Args:
        scene: Geometry with numpy ``sdf`` and ``gradient``.
        origins: (N, 3) ray origins.
        dirs: (N, 3) unit directions.
        cfg: Trace settings.
        t_min: Scalar or (N,) start distances.
        t_max: Scalar or (N,) end distances.
        refine: Apply hit refinement to the hits.
        track_approach: Record the smallest |sdf| seen while the distance
            was still decreasing (closest approach of non-hitting rays).

    Returns:
        TraceBatch; misses have hit=False and NaN points.
    """
    origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    n = origins.shape[0]
    tau = cfg.threshold

    crosses, t_enter, t_exit = bound_interval(origins, dirs, cfg.bound_radius)
    t_start = np.maximum(np.broadcast_to(np.asarray(t_min, dtype=np.float64), (n,)), t_enter)
    t_end = np.minimum(np.broadcast_to(np.asarray(t_max, dtype=np.float64), (n,)), t_exit)

    t = t_start.copy()
    hit = np.zeros(n, dtype=bool)
    iterations = np.zeros(n, dtype=np.int64)
    last_sdf = np.full(n, np.inf)
    previous = np.full(n, -np.inf)
    closest = np.full(n, np.inf)
    closest_t = np.full(n, np.nan)

    alive = np.nonzero(crosses & (t_start < t_end))[0]
    for _ in range(cfg.max_iterations):
        if alive.size == 0:
            break
        p = origins[alive] + t[alive, None] * dirs[alive]
        f = np.asarray(scene.sdf(p), dtype=np.float64)
        iterations[alive] += 1
        last_sdf[alive] = f

        if track_approach:
            approaching = f < previous[alive]
            better = approaching & (np.abs(f) < closest[alive])
            closest[alive[better]] = np.abs(f[better])
            closest_t[alive[better]] = t[alive[better]]
            previous[alive] = f

        now = np.abs(f) < tau
        hit[alive[now]] = True
        t[alive] = np.where(now, t[alive], t[alive] + f)
        rest = alive[~now]
        keep = (t[rest] <= t_end[rest]) & (t[rest] >= t_start[rest] - tau)
        alive = rest[keep]

    points = np.full((n, 3), np.nan)
    normals = np.full((n, 3), np.nan)
    residual = np.full(n, np.nan)
    refined = np.zeros(n, dtype=bool)

    idx = np.nonzero(hit)[0]
    if idx.size:
        points[idx] = origins[idx] + t[idx, None] * dirs[idx]
        residual[idx] = np.abs(last_sdf[idx])
        if refine:
            new_points, new_t, res, ok, extra = refine_batch(scene, points[idx], dirs[idx], t[idx], last_sdf[idx], cfg)
            points[idx], t[idx], residual[idx], refined[idx] = new_points, new_t, res, ok
            iterations[idx] += extra
        normals[idx] = _unit_normals(scene, points[idx])

    t = np.where(hit, t, np.inf)
    return TraceBatch(hit, t, points, normals, iterations, refined, residual, closest, closest_t)


def refine_batch(
    scene,
    points: np.ndarray,
    dirs: np.ndarray,
    t: np.ndarray,
    sdf_values: np.ndarray,
    cfg: TraceConfig,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Move hits along the view ray by -F(p) / (v . n(p)).

    A step is taken only while |F| exceeds the refinement tolerance and is
    kept only when it does not increase |F|. Entries with |v . n| below
    1e-4 stop where they are and report refined=False.

    Returns:
        Tuple (points, t, residual |F|, refined flags, extra iterations).
    """
    points = points.copy()
    t = t.copy()
    f = np.asarray(sdf_values, dtype=np.float64).copy()
    extra = np.zeros(points.shape[0], dtype=np.int64)
    active = np.ones(points.shape[0], dtype=bool)
    grazing = np.zeros(points.shape[0], dtype=bool)

    for _ in range(cfg.max_refine_steps):
        active &= np.abs(f) > cfg.refinement_tolerance
        if not np.any(active):
            break
        idx = np.nonzero(active)[0]
        normals = _unit_normals(scene, points[idx])
        vn = np.sum(dirs[idx] * normals, axis=-1)
        guard = np.abs(vn) < GRAZING_GUARD
        grazing[idx[guard]] = True
        active[idx[guard]] = False

        idx, vn = idx[~guard], vn[~guard]
        if idx.size == 0:
            break
        step = -f[idx] / vn
        candidate = points[idx] + step[:, None] * dirs[idx]
        f_new = np.asarray(scene.sdf(candidate), dtype=np.float64)
        extra[idx] += 1

        accept = np.abs(f_new) <= np.abs(f[idx])
        good = idx[accept]
        points[good] = candidate[accept]
        t[good] = t[good] + step[accept]
        f[good] = f_new[accept]
        active[idx[~accept]] = False

    residual = np.abs(f)
    refined = ~grazing & (residual <= cfg.refinement_tolerance)
    return points, t, residual, refined, extra


def sphere_trace(scene, ray: Ray, cfg: TraceConfig) -> Union[SurfaceHit, Miss]:
    """Classic sphere tracing of one ray (no refinement)."""
    ray.validate()
    batch = trace_batch(
        scene, ray.origin[None], ray.direction[None], cfg, ray.t_min, ray.t_max, refine=False, track_approach=True
    )
    if not batch.hit[0]:
        return Miss(int(batch.iterations[0]), float(batch.closest_sdf[0]))
    return SurfaceHit(
        point=batch.points[0],
        normal=batch.normals[0],
        t=float(batch.t[0]),
        iterations=int(batch.iterations[0]),
        refined=False,
        residual=float(batch.residual[0]),
    )


def refine_hit(scene, hit: SurfaceHit, view: np.ndarray, cfg: TraceConfig) -> SurfaceHit:
    """Refine one sphere-traced hit along the view direction ``view``."""
    view = np.asarray(view, dtype=np.float64)
    f0 = np.asarray(scene.sdf(hit.point[None]), dtype=np.float64)
    points, t, residual, refined, extra = refine_batch(
        scene, hit.point[None], view[None], np.array([hit.t]), f0, cfg
    )
    normal = _unit_normals(scene, points)[0]
    return SurfaceHit(points[0], normal, float(t[0]), hit.iterations + int(extra[0]), bool(refined[0]), float(residual[0]))


def _chord_depth(scene, origins: np.ndarray, dirs: np.ndarray, t_hit: np.ndarray, t_end: np.ndarray, cfg: TraceConfig):
    """March through the interior behind each hit to find its deepest point.

    Marching stops once the ray exits the solid, once the depth exceeds the
    grazing limit, or at the iteration budget.

    Returns:
        Tuple (most negative sdf seen, its ray distance).
    """
    tau = cfg.threshold
    limit = cfg.grazing_sdf_scale * tau
    n = t_hit.shape[0]
    t = t_hit.copy()
    f = np.zeros(n)
    deepest = np.zeros(n)
    deepest_t = t_hit.copy()
    alive = np.arange(n)

    for _ in range(cfg.max_iterations):
        if alive.size == 0:
            break
        t[alive] += np.maximum(np.abs(f[alive]), tau)
        p = origins[alive] + t[alive, None] * dirs[alive]
        f[alive] = np.asarray(scene.sdf(p), dtype=np.float64)
        better = f[alive] < deepest[alive]
        deepest[alive[better]] = f[alive[better]]
        deepest_t[alive[better]] = t[alive[better]]
        done = (f[alive] > 0.0) | (f[alive] < -limit) | (t[alive] > t_end[alive])
        alive = alive[~done]

    return deepest, deepest_t


def occlusion_batch(
    scene,
    points: np.ndarray,
    normals: np.ndarray,
    dirs: np.ndarray,
    cfg: TraceConfig,
) -> OcclusionBatch:
    """Classify directions leaving surface points.

    Rays start at x + n * offset. Directions with xi . n <= 0 are SELF
    (x' = x, n' = n). A hit is OCCLUDED unless the ray only skims the solid
    (deepest interior sdf within the grazing limit), which is GRAZING at the
    deepest point. A miss is GRAZING when its closest approach while
    approaching a surface is within the limit and the ray lies within
    ``boundary_angle_deg`` of the tangent plane there.
    """
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    normals = np.asarray(normals, dtype=np.float64).reshape(-1, 3)
    dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    n = points.shape[0]
    limit = cfg.grazing_sdf_scale * cfg.threshold
    max_sin = math.sin(math.radians(cfg.boundary_angle_deg))

    kind = np.full(n, Visibility.UNOCCLUDED, dtype=np.int8)
    out_points = np.full((n, 3), np.nan)
    out_normals = np.full((n, 3), np.nan)
    out_t = np.full(n, np.inf)
    angle = np.full(n, 90.0)

    facing = np.sum(dirs * normals, axis=-1) > 0.0
    self_idx = np.nonzero(~facing)[0]
    kind[self_idx] = Visibility.SELF
    out_points[self_idx] = points[self_idx]
    out_normals[self_idx] = normals[self_idx]
    out_t[self_idx] = 0.0

    idx = np.nonzero(facing)[0]
    if idx.size == 0:
        return OcclusionBatch(kind, out_points, out_normals, out_t, angle)

    origins = points[idx] + cfg.offset * normals[idx]
    d = dirs[idx]
    batch = trace_batch(scene, origins, d, cfg, refine=True, track_approach=True)
    _, _, t_exit = bound_interval(origins, d, cfg.bound_radius)

    hits = np.nonzero(batch.hit)[0]
    if hits.size:
        deepest, deepest_t = _chord_depth(scene, origins[hits], d[hits], batch.t[hits], t_exit[hits], cfg)
        skim = -deepest <= limit
        occluded = hits[~skim]
        kind[idx[occluded]] = Visibility.OCCLUDED
        out_points[idx[occluded]] = batch.points[occluded]
        out_normals[idx[occluded]] = batch.normals[occluded]
        out_t[idx[occluded]] = batch.t[occluded]

        skimming = hits[skim]
        if skimming.size:
            x_g = origins[skimming] + deepest_t[skim, None] * d[skimming]
            n_g = _unit_normals(scene, x_g)
            sin_a = np.abs(np.sum(n_g * d[skimming], axis=-1))
            kind[idx[skimming]] = Visibility.GRAZING
            out_points[idx[skimming]] = x_g
            out_normals[idx[skimming]] = n_g
            out_t[idx[skimming]] = deepest_t[skim]
            angle[idx[skimming]] = np.degrees(np.arcsin(np.clip(sin_a, 0.0, 1.0)))

    near = np.nonzero(~batch.hit & (batch.closest_sdf <= limit))[0]
    if near.size:
        x_g = origins[near] + batch.closest_t[near, None] * d[near]
        n_g = _unit_normals(scene, x_g)
        sin_a = np.abs(np.sum(n_g * d[near], axis=-1))
        grazing = sin_a <= max_sin
        g = near[grazing]
        kind[idx[g]] = Visibility.GRAZING
        out_points[idx[g]] = x_g[grazing]
        out_normals[idx[g]] = n_g[grazing]
        out_t[idx[g]] = batch.closest_t[g]
        angle[idx[g]] = np.degrees(np.arcsin(np.clip(sin_a[grazing], 0.0, 1.0)))

    logger.debug("Occlusion batch of %d rays: %s", n, OcclusionBatch(kind, out_points, out_normals, out_t, angle).counts())
    return OcclusionBatch(kind, out_points, out_normals, out_t, angle)


def occlusion_query(scene, x, n, direction, cfg: TraceConfig) -> Occlusion:
    """Classify one direction leaving a surface point."""
    batch = occlusion_batch(scene, np.asarray(x)[None], np.asarray(n)[None], np.asarray(direction)[None], cfg)
    kind = Visibility(int(batch.kind[0]))
    if kind == Visibility.UNOCCLUDED:
        return Occlusion(kind)
    return Occlusion(kind, batch.points[0], batch.normals[0], float(batch.t[0]), float(batch.angle_deg[0]))
