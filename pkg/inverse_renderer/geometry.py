"""Signed-distance scene geometry.

Two scene kinds share one interface: ``sdf(p, tape)``, ``gradient(p)`` and
``sdf_and_grad(p, tape)`` over point batches of shape (N, 3).

- AnalyticScene: a union of spheres, planes and boxes with exact distances
  and closed-form normals. Sphere radii may be registered as trainable.
- NeuralSdf: a softplus MLP over positionally encoded points, geometrically
  initialized to a sphere and fitted by direct regression plus an eikonal
  penalty.
"""

import logging
import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterStore, Tape
from .material import encoding_input_gradient, encoding_size, positional_encoding
from .network import Mlp
from .optim import adam_step

logger = logging.getLogger(__name__)

VANISHING_GRADIENT = 1e-9
OUTSIDE_OFFSET = 0.1


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------


@dataclass
class Sphere:
    center: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    radius: float = 1.0
    trainable: bool = False

    kind = "sphere"

    def validate(self) -> None:
        if self.radius <= 0:
            raise ValueError(f"Sphere radius must be positive, got {self.radius}")

    def sdf(self, p, radius=None):
        r = self.radius if radius is None else radius
        return ad.sub(ad.norm(ad.sub(p, np.asarray(self.center, dtype=np.float64))), r)

    def gradient(self, p: np.ndarray) -> np.ndarray:
        d = p - np.asarray(self.center, dtype=np.float64)
        length = np.linalg.norm(d, axis=-1, keepdims=True)
        return np.where(length > 0.0, d / np.where(length > 0.0, length, 1.0), 0.0)

    def taped_gradient(self, p):
        return ad.normalize(ad.sub(p, np.asarray(self.center, dtype=np.float64)))

    def to_dict(self) -> Dict:
        return {"type": "sphere", "center": list(self.center), "radius": self.radius, "trainable": self.trainable}


@dataclass
class Plane:
    """The plane normal . p = offset; positive on the normal side."""

    normal: Tuple[float, float, float] = (0.0, 0.0, 1.0)
    offset: float = 0.0

    kind = "plane"

    def validate(self) -> None:
        if np.linalg.norm(self.normal) == 0.0:
            raise ValueError("Plane normal must be non-zero")

    @property
    def unit_normal(self) -> np.ndarray:
        n = np.asarray(self.normal, dtype=np.float64)
        return n / np.linalg.norm(n)

    def sdf(self, p, radius=None):
        return ad.sub(ad.dot(p, self.unit_normal), self.offset)

    def gradient(self, p: np.ndarray) -> np.ndarray:
        return np.broadcast_to(self.unit_normal, np.shape(p)).copy()

    def taped_gradient(self, p):
        return self.gradient(ad.value_of(p))

    def to_dict(self) -> Dict:
        return {"type": "plane", "normal": list(self.normal), "offset": self.offset}


@dataclass
class Box:
    center: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    half_extents: Tuple[float, float, float] = (0.5, 0.5, 0.5)

    kind = "box"

    def validate(self) -> None:
        if np.any(np.asarray(self.half_extents) <= 0):
            raise ValueError(f"Box half extents must be positive, got {self.half_extents}")

    def _local(self, p: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        d = p - np.asarray(self.center, dtype=np.float64)
        return d, np.abs(d) - np.asarray(self.half_extents, dtype=np.float64)

    def _value(self, p: np.ndarray) -> np.ndarray:
        _, q = self._local(p)
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(np.max(q, axis=-1), 0.0)
        return outside + inside

    def sdf(self, p, radius=None):
        value = self._value(ad.value_of(p))
        if not ad.is_taped(p):
            return value
        # No parameters: a first-order expansion carries the exact point derivative.
        p0 = p.value
        return ad.add(value, ad.dot(self.gradient(p0), ad.sub(p, p0)))

    def gradient(self, p: np.ndarray) -> np.ndarray:
        d, q = self._local(p)
        sign = np.where(d >= 0.0, 1.0, -1.0)
        pos = np.maximum(q, 0.0)
        length = np.linalg.norm(pos, axis=-1, keepdims=True)
        outside = pos / np.where(length > 0.0, length, 1.0)
        axis = np.argmax(q, axis=-1)
        inside = np.zeros_like(q)
        np.put_along_axis(inside, axis[..., None], 1.0, axis=-1)
        return sign * np.where(length > 0.0, outside, inside)

    def taped_gradient(self, p):
        return self.gradient(ad.value_of(p))

    def to_dict(self) -> Dict:
        return {"type": "box", "center": list(self.center), "half_extents": list(self.half_extents)}


Primitive = Union[Sphere, Plane, Box]


def _as_batch(p) -> Tuple[np.ndarray, bool]:
    arr = np.asarray(p, dtype=np.float64)
    if arr.ndim == 1:
        return arr.reshape(1, 3), True
    return arr, False


# ---------------------------------------------------------------------------
# Scenes
# ---------------------------------------------------------------------------


class AnalyticScene:
    """Union of analytic primitives."""

    trainable_kind = "analytic"

    def __init__(self, primitives: Sequence[Primitive], store: Optional[ParameterStore] = None, prefix: str = "geometry") -> None:
        if not primitives:
            raise ValueError("An analytic scene needs at least one primitive")
        self.primitives = list(primitives)
        self.store = store
        self.prefix = prefix
        self._radius_params: Dict[int, str] = {}

        for i, prim in enumerate(self.primitives):
            prim.validate()
            if isinstance(prim, Sphere) and prim.trainable:
                if store is None:
                    raise ValueError("Trainable sphere radii need a parameter store")
                name = f"{prefix}.sphere{i}.radius"
                store.add(name, [prim.radius])
                self._radius_params[i] = name

        logger.debug("Analytic scene with %d primitives (%d trainable)", len(self.primitives), len(self._radius_params))

    @property
    def parameter_names(self) -> List[str]:
        return list(self._radius_params.values())

    def radius(self, index: int, tape: Optional[Tape] = None):
        """Current radius of primitive ``index``; a Var when trainable and taped."""
        name = self._radius_params.get(index)
        if name is None:
            return self.primitives[index].radius
        value = self.store.param(name, tape)
        return ad.getitem(value, 0) if tape is not None else float(value[0])

    def _member_sdfs(self, p, tape: Optional[Tape]):
        return [
            prim.sdf(p, self.radius(i, tape) if isinstance(prim, Sphere) else None)
            for i, prim in enumerate(self.primitives)
        ]

    def sdf(self, p, tape: Optional[Tape] = None):
        """Union distance (minimum over members, ties to the earlier member)."""
        values = self._member_sdfs(p, tape)
        result = values[0]
        for v in values[1:]:
            result = ad.minimum(result, v)
        return result

    def nearest_primitive(self, p) -> np.ndarray:
        values = np.stack([np.asarray(ad.value_of(v)) for v in self._member_sdfs(ad.value_of(p), None)], axis=-1)
        return np.argmin(values, axis=-1)

    def gradient(self, p: np.ndarray) -> np.ndarray:
        p = np.asarray(p, dtype=np.float64)
        nearest = self.nearest_primitive(p)
        grad = np.zeros_like(p)
        for i, prim in enumerate(self.primitives):
            mask = nearest == i
            if np.any(mask):
                grad[mask] = prim.gradient(p[mask])
        return grad

    def sdf_and_grad(self, p, tape: Optional[Tape] = None):
        """Distance and closed-form gradient; both taped when p or radii are."""
        value = self.sdf(p, tape)
        if not ad.is_taped(p):
            return value, self.gradient(ad.value_of(p))
        nearest = self.nearest_primitive(p)
        grad = self.primitives[-1].taped_gradient(p)
        for i in range(len(self.primitives) - 2, -1, -1):
            mask = (nearest == i)[..., None]
            if np.any(mask):
                grad = ad.where(mask, self.primitives[i].taped_gradient(p), grad)
        return value, grad

    def describe(self) -> List[Dict]:
        entries = []
        for i, prim in enumerate(self.primitives):
            entry = prim.to_dict()
            if i in self._radius_params:
                entry["radius"] = float(self.store.value(self._radius_params[i])[0])
            entries.append(entry)
        return entries


class NeuralSdf:
    """MLP signed distance over positionally encoded points."""

    trainable_kind = "neural"

    def __init__(
        self,
        store: ParameterStore,
        hidden: Sequence[int] = (64, 64, 64, 64),
        beta: float = 100.0,
        pe_freqs: int = 6,
        radius: float = 1.0,
        bound_radius: float = 3.0,
        prefix: str = "geometry.sdf",
        seed: int = 0,
    ) -> None:
        if radius <= 0:
            raise ValueError(f"Initial sphere radius must be positive, got {radius}")
        self.store = store
        self.pe_freqs = pe_freqs
        self.bound_radius = bound_radius
        self.hidden = tuple(hidden)
        self.beta = beta
        self.mlp = Mlp(
            store,
            prefix,
            (encoding_size(pe_freqs), *hidden, 1),
            beta=beta,
            seed=seed,
            init="geometric",
            radius=radius,
            plain_inputs=3,
        )

    @property
    def parameter_names(self) -> List[str]:
        return self.mlp.group_names

    def _outside(self, p) -> np.ndarray:
        return np.linalg.norm(ad.value_of(p), axis=-1) > self.bound_radius

    def sdf(self, p, tape: Optional[Tape] = None):
        network = self.mlp.forward(positional_encoding(p, self.pe_freqs), tape)[:, 0]
        outside = self._outside(p)
        if not np.any(outside):
            return network
        return ad.where(outside, ad.add(ad.norm(p), OUTSIDE_OFFSET - self.bound_radius), network)

    def sdf_and_grad(self, p, tape: Optional[Tape] = None):
        value, feature_grad = self.mlp.input_gradient(positional_encoding(p, self.pe_freqs), tape)
        grad = encoding_input_gradient(p, feature_grad, self.pe_freqs)
        outside = self._outside(p)
        if np.any(outside):
            value = ad.where(outside, ad.add(ad.norm(p), OUTSIDE_OFFSET - self.bound_radius), value)
            grad = ad.where(outside[..., None], ad.normalize(p), grad)
        return value, grad

    def gradient(self, p: np.ndarray) -> np.ndarray:
        return np.asarray(self.sdf_and_grad(np.asarray(p, dtype=np.float64))[1])

    def describe(self) -> Dict:
        return {
            "type": "neural",
            "hidden": list(self.hidden),
            "beta": self.beta,
            "pe_freqs": self.pe_freqs,
        }


SceneGeometry = Union[AnalyticScene, NeuralSdf]


# ---------------------------------------------------------------------------
# Queries
# ---------------------------------------------------------------------------


def sdf_eval(scene: SceneGeometry, p, tape: Optional[Tape] = None):
    """Signed distance at a point (3,) or a batch (N, 3)."""
    if ad.is_taped(p):
        return scene.sdf(p, tape)
    batch, single = _as_batch(p)
    value = scene.sdf(batch, tape)
    if single and not ad.is_taped(value):
        return float(np.asarray(value)[0])
    return value


def sdf_normal(scene: SceneGeometry, p) -> np.ndarray:
    """Unit normal from the SDF gradient at a point or batch.

    Raises:
        ValueError: If the gradient vanishes (norm below 1e-9).
    """
    batch, single = _as_batch(p)
    grad = scene.gradient(batch)
    length = np.linalg.norm(grad, axis=-1)
    bad = length < VANISHING_GRADIENT
    if np.any(bad):
        where = batch[np.argmax(bad)]
        raise ValueError(f"SDF gradient vanishes at ({where[0]:.6g}, {where[1]:.6g}, {where[2]:.6g})")
    normals = grad / length[:, None]
    return normals[0] if single else normals


def eikonal_residual(scene: SceneGeometry, points) -> np.ndarray:
    """Gradient norms ||grad F|| at the given points."""
    batch, _ = _as_batch(points)
    return np.linalg.norm(scene.gradient(batch), axis=-1)


def _sample_fit_points(rng: np.random.Generator, count: int, extent: float, target_surface: Optional[np.ndarray]) -> np.ndarray:
    uniform = rng.uniform(-extent, extent, size=(count - count // 2, 3))
    if target_surface is None or len(target_surface) == 0:
        near = rng.uniform(-extent, extent, size=(count // 2, 3))
    else:
        picks = target_surface[rng.integers(0, len(target_surface), size=count // 2)]
        near = picks + rng.normal(0.0, 0.05 * extent, size=picks.shape)
    return np.concatenate([uniform, near], axis=0)


def fit_sdf(
    sdf: NeuralSdf,
    target: Callable[[np.ndarray], np.ndarray],
    steps: int = 500,
    learning_rate: float = 1e-3,
    batch: int = 1024,
    eikonal_weight: float = 0.1,
    extent: Optional[float] = None,
    surface_points: Optional[np.ndarray] = None,
    seed: int = 0,
    log_every: int = 100,
) -> float:
    """Regress a neural SDF onto a target distance function.

    Loss: mean |F(p) - target(p)| + eikonal_weight * mean (||grad F|| - 1)^2
    over fresh samples each step; only the SDF groups are updated.

    Returns:
        Mean absolute error on 10k held-out samples.
    """
    extent = extent if extent is not None else sdf.bound_radius
    rng = np.random.default_rng(seed)
    names = sdf.parameter_names
    start = time.perf_counter()

    for step in range(steps):
        points = _sample_fit_points(rng, batch, extent, surface_points)
        goal = target(points)
        tape = Tape()
        value, grad = sdf.sdf_and_grad(points, tape)
        data_term = ad.mean(ad.abs_(ad.sub(value, goal)))
        eikonal = ad.sub(ad.norm(grad), 1.0)
        loss = ad.add(data_term, ad.mul(eikonal_weight, ad.mean(ad.mul(eikonal, eikonal))))
        tape.backward(loss)
        adam_step(sdf.store, learning_rate, names=names)
        if log_every and step % log_every == 0:
            logger.debug("SDF fit step %d: loss %.6f", step, float(loss.value))

    held_out = np.random.default_rng(seed + 1).uniform(-extent, extent, size=(10_000, 3))
    residual = float(np.mean(np.abs(np.asarray(sdf.sdf(held_out)) - target(held_out))))
    logger.info("SDF fit finished in %.2fs: held-out mean error %.6f", time.perf_counter() - start, residual)
    return residual


def sphere_init(
    sdf: NeuralSdf,
    radius: float,
    steps: int = 1000,
    learning_rate: float = 1e-3,
    tolerance: float = 5e-3,
    seed: int = 0,
) -> float:
    """Fit the neural SDF to a sphere of the given radius at the origin.

    Samples cover the cube [-2r, 2r]^3 (clipped to the scene bound) half
    uniformly and half near the sphere surface.

    Returns:
        Held-out mean absolute error.

    Raises:
        ValueError: If radius <= 0.
        RuntimeError: If the error stays above ``tolerance``.
    """
    if radius <= 0:
        raise ValueError(f"Sphere radius must be positive, got {radius}")
    extent = min(2.0 * radius, sdf.bound_radius)
    rng = np.random.default_rng(seed)
    dirs = rng.normal(size=(4096, 3))
    surface = radius * dirs / np.linalg.norm(dirs, axis=1, keepdims=True)

    def target(points: np.ndarray) -> np.ndarray:
        return np.linalg.norm(points, axis=-1) - radius

    residual = fit_sdf(sdf, target, steps=steps, learning_rate=learning_rate, extent=extent, surface_points=surface, seed=seed)
    if residual > tolerance:
        raise RuntimeError(f"Sphere initialization did not converge: mean error {residual:.6f} > {tolerance}")
    return residual
