"""Scene bundles, the training loss, the fitting loop, editing and checkpoints."""

import copy
import dataclasses
import json
import logging
import math
import struct
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Union

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterStore, Tape
from .brdf import DEFAULT_F0, Material
from .config import RenderConfig, TrainConfig
from .dataset import Dataset
from .geometry import AnalyticScene, Box, NeuralSdf, Plane, Sphere, sphere_init
from .illumination import BoundaryStats, EnvironmentLights, IndirectNet, boundary_gradient, find_boundary_set
from .image_io import read_pfm
from .material import MaterialNet, MaterialOverride, OverriddenMaterials, PrimitiveMaterials, kl_sparsity, smoothness_loss
from .optim import adam_step
from .renderer import Camera, RayRender, RenderResult, render_image, render_rays
from .scene_file import SceneFile, parse_scene, resolve_path, serialize_scene
from .sg_math import fibonacci_directions

logger = logging.getLogger(__name__)

__all__ = [
    "SceneBundle", "build_bundle", "Batch", "LossTerms", "total_loss", "adam_step",
    "StepRecord", "FitResult", "DivergenceError", "fit", "relight", "edit_material",
    "save_checkpoint", "load_checkpoint",
]

CHECKPOINT_MAGIC = b"SGIRCKPT"
CHECKPOINT_VERSION = 1


# ---------------------------------------------------------------------------
# Bundles
# ---------------------------------------------------------------------------


@dataclass
class SceneBundle:
    """Everything needed to render: geometry, lights, networks, materials and settings."""

    scene: SceneFile
    store: ParameterStore
    geometry: Any
    env: EnvironmentLights
    indirect: IndirectNet
    material_net: Optional[MaterialNet]
    materials: Any
    render: RenderConfig
    fresnel: np.ndarray = field(default_factory=lambda: np.array(DEFAULT_F0))

    @property
    def geometry_groups(self) -> List[str]:
        return list(self.geometry.parameter_names)

    def replace(self, **changes) -> "SceneBundle":
        return dataclasses.replace(self, **changes)


def _primitive(entry: Dict[str, Any]):
    if entry["type"] == "sphere":
        return Sphere(tuple(entry["center"]), entry["radius"], entry.get("trainable", False))
    if entry["type"] == "plane":
        return Plane(tuple(entry["normal"]), entry["offset"])
    return Box(tuple(entry["center"]), tuple(entry["half_extents"]))


def build_environment(scene: SceneFile, store: ParameterStore) -> EnvironmentLights:
    """Environment lights from the scene's ``environment`` section."""
    env = scene.environment
    directions = fibonacci_directions(env["lights"])
    sharpness = env.get("sharpness")
    if env["init"] == "pfm":
        image = read_pfm(resolve_path(scene, env["path"])).astype(np.float64)
        return EnvironmentLights.from_image(store, directions, image, sharpness)
    if env["init"] == "values":
        if sharpness is None:
            sharpness = EnvironmentLights.default_sharpness(env["lights"])
        return EnvironmentLights.from_values(store, directions, sharpness, np.asarray(env["amplitude"]))
    return EnvironmentLights.constant(store, directions, env["radiance"], sharpness)


def build_bundle(scene: SceneFile, ground_truth: bool = False, seed: Optional[int] = None) -> SceneBundle:
    """Register every parameter group of a scene in a fresh store.

    Args:
        scene: Validated scene description.
        ground_truth: Shade with the scene's per-primitive materials instead
            of the material network (analytic geometry only).
        seed: Network initialization seed (scene seed by default).
    """
    seed = scene.seed if seed is None else seed
    store = ParameterStore()
    geo = scene.geometry
    if geo["type"] == "neural":
        geometry = NeuralSdf(
            store,
            hidden=geo["hidden"],
            beta=geo["beta"],
            pe_freqs=geo["pe_freqs"],
            radius=geo["init_radius"],
            bound_radius=geo["bound_radius"],
            seed=seed,
        )
    else:
        geometry = AnalyticScene([_primitive(p) for p in geo["primitives"]], store)

    env = build_environment(scene, store)
    nets = scene.networks
    indirect = IndirectNet(
        store,
        env.count,
        hidden=nets["indirect_hidden"],
        pos_freqs=nets["pos_freqs"],
        normal_freqs=nets["normal_freqs"],
        seed=seed + 10,
    )
    material_net = MaterialNet(
        store,
        latent_dim=nets["latent_dim"],
        pe_freqs=nets["pe_freqs"],
        encoder_hidden=nets["encoder_hidden"],
        decoder_hidden=nets["decoder_hidden"],
        seed=seed + 20,
    )

    materials: Any = material_net
    if ground_truth:
        if not isinstance(geometry, AnalyticScene):
            raise ValueError("Ground-truth materials need analytic geometry")
        materials = PrimitiveMaterials(
            geometry,
            [Material(tuple(m["albedo"]), m["roughness"], tuple(m["fresnel"])) for m in scene.materials],
        )

    render = scene.render_config()
    render.trace.validate()
    logger.info("Built scene bundle: %d lights, %d parameter groups (%d values)", env.count, len(store), store.total_size)
    return SceneBundle(scene, store, geometry, env, indirect, material_net, materials, render)


# ---------------------------------------------------------------------------
# Loss
# ---------------------------------------------------------------------------


@dataclass
class Batch:
    """Camera rays with target radiance; ``mask`` marks pixels that count."""

    origins: np.ndarray
    dirs: np.ndarray
    target: np.ndarray
    mask: Optional[np.ndarray] = None


@dataclass
class LossTerms:
    total: Any
    rec: float
    kl: float
    smooth: float
    render: RayRender


def total_loss(
    bundle: SceneBundle,
    batch: Batch,
    cfg: TrainConfig,
    tape: Tape,
    rng: Optional[np.random.Generator] = None,
) -> LossTerms:
    """lambda_rec L1 + lambda_kl KL sparsity + lambda_smooth latent smoothness.

    Only masked rays are rendered. The latent terms use the hit points'
    codes and vanish when the material source has no latent.

    Raises:
        ValueError: If the batch has no masked ray.
    """
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    mask = np.ones(batch.origins.shape[0], dtype=bool) if batch.mask is None else np.asarray(batch.mask, dtype=bool)
    if not mask.any():
        raise ValueError("total_loss needs at least one unmasked ray in the batch")

    render = render_rays(bundle, batch.origins[mask], batch.dirs[mask], tape)
    rec = ad.mean(ad.abs_(ad.sub(render.radiance, batch.target[mask])))
    total = ad.mul(cfg.lambda_rec, rec)
    kl_value = smooth_value = 0.0

    latent = render.latent
    if latent is not None and render.hit_index.size and bundle.material_net is not None:
        if cfg.lambda_kl > 0:
            kl = kl_sparsity(latent, cfg.rho)
            total = ad.add(total, ad.mul(cfg.lambda_kl, kl))
            kl_value = float(ad.value_of(kl))
        if cfg.lambda_smooth > 0:
            smooth = smoothness_loss(bundle.material_net, latent, cfg.epsilon, rng, tape)
            total = ad.add(total, ad.mul(cfg.lambda_smooth, smooth))
            smooth_value = float(ad.value_of(smooth))

    return LossTerms(total, float(ad.value_of(rec)), kl_value, smooth_value, render)


# ---------------------------------------------------------------------------
# Fitting
# ---------------------------------------------------------------------------


@dataclass
class StepRecord:
    """One line of the loss trace."""

    step: int
    rec: float
    kl: float
    smooth: float
    total: float
    elapsed_ms: float = 0.0
    boundary_flips: int = 0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "step": self.step,
            "rec": self.rec,
            "kl": self.kl,
            "smooth": self.smooth,
            "total": self.total,
            "elapsed_ms": round(self.elapsed_ms, 3),
            "boundary_flips": self.boundary_flips,
        }


@dataclass
class FitResult:
    bundle: SceneBundle
    trace: List[StepRecord] = field(default_factory=list)
    elapsed_ms: float = 0.0

    @property
    def final_loss(self) -> Optional[float]:
        return self.trace[-1].total if self.trace else None


class DivergenceError(RuntimeError):
    """Raised when the loss stays far above its initial value; carries the trace."""

    def __init__(self, message: str, trace: List[StepRecord]) -> None:
        super().__init__(message)
        self.trace = trace


def apply_stage_flags(bundle: SceneBundle, cfg: TrainConfig) -> None:
    """Freeze groups named by the stage flags.

    ``uniform_weights`` zeroes and freezes the IndirectNet output layer so
    every indirect lobe mixes the environment uniformly.
    """
    if cfg.freeze_geometry:
        for name in bundle.geometry_groups:
            bundle.store.groups[name].frozen = True
    if cfg.freeze_env:
        for name in bundle.env.group_names:
            bundle.store.groups[name].frozen = True
    if cfg.uniform_weights:
        for name in bundle.indirect.mlp.layers[-1]:
            bundle.store.set_value(name, np.zeros_like(bundle.store.value(name)))
        for name in bundle.indirect.group_names:
            bundle.store.groups[name].frozen = True


def _gather_rays(dataset: Dataset):
    origins, dirs, targets, masks = [], [], [], []
    for view in dataset.views:
        o, d = view.camera.generate_rays()
        origins.append(o)
        dirs.append(d)
        targets.append(np.asarray(view.image, dtype=np.float64).reshape(-1, 3))
        mask = view.mask if view.mask is not None else np.ones(view.image.shape[:2], dtype=bool)
        masks.append(np.asarray(mask, dtype=bool).reshape(-1))
    return np.concatenate(origins), np.concatenate(dirs), np.concatenate(targets), np.concatenate(masks)


def _boundary_step(bundle: SceneBundle, terms: LossTerms, adjoint: np.ndarray, cfg: TrainConfig, rng: np.random.Generator) -> BoundaryStats:
    render = terms.render
    if render.classification is None:
        return BoundaryStats()
    candidates = find_boundary_set(render.classification)
    if candidates.size == 0:
        return BoundaryStats()
    count = min(cfg.boundary_pixels, candidates.size)
    chosen = np.sort(rng.choice(candidates, size=count, replace=False))
    rows = render.hit_index[chosen]
    albedo = np.asarray(ad.value_of(render.albedo))[chosen]
    roughness = np.asarray(ad.value_of(render.roughness))[chosen]
    return boundary_gradient(
        bundle.geometry,
        render.points[chosen],
        render.normals[chosen],
        render.views[chosen],
        albedo,
        roughness,
        render.fresnel[chosen],
        bundle.env,
        bundle.indirect,
        adjoint[rows],
        bundle.render,
        weight=candidates.size / count,
    )


def fit(
    bundle: SceneBundle,
    dataset: Dataset,
    cfg: TrainConfig,
    callback: Optional[Callable[[StepRecord], None]] = None,
) -> FitResult:
    """Staged optimization of a bundle against posed images.

    Stage 1 regresses a neural SDF onto a sphere; stage 2 trains all
    unfrozen groups jointly on random masked pixels. The loss trace holds
    one StepRecord per joint step.

    Raises:
        ValueError: If the dataset is empty or has no masked pixel.
        DivergenceError: If the loss exceeds ``divergence_factor`` times its
            first value for ``divergence_patience`` consecutive steps.
    """
    cfg.validate()
    result = FitResult(bundle)
    if cfg.steps == 0:
        logger.info("Fit requested with zero steps; bundle unchanged")
        return result
    if len(dataset.views) == 0:
        raise ValueError("fit needs at least one view")

    start = time.perf_counter()
    store = bundle.store
    apply_stage_flags(bundle, cfg)

    if isinstance(bundle.geometry, NeuralSdf) and cfg.geometry_steps > 0 and not cfg.freeze_geometry:
        logger.info("Stage 1: geometry initialization (%d steps, radius %.3f)", cfg.geometry_steps, cfg.init_radius)
        residual = sphere_init(bundle.geometry, cfg.init_radius, steps=cfg.geometry_steps, seed=cfg.seed)
        logger.info("Stage 1 finished: held-out SDF error %.6f", residual)
        store.reset_optimizer()

    origins, dirs, targets, masks = _gather_rays(dataset)
    pool = np.nonzero(masks)[0]
    if pool.size == 0:
        raise ValueError("fit needs at least one masked pixel")

    use_boundary = (
        cfg.use_boundary
        and bundle.render.use_boundary
        and any(not store.groups[n].frozen for n in bundle.geometry_groups)
    )
    logger.info(
        "Stage 2: joint training (%d steps, %d rays per step, boundary %s)",
        cfg.steps, min(cfg.batch_rays, pool.size), "on" if use_boundary else "off",
    )

    rng = np.random.default_rng(cfg.seed)
    initial: Optional[float] = None
    above = 0
    for step in range(cfg.steps):
        step_start = time.perf_counter()
        pick = pool[rng.permutation(pool.size)[: cfg.batch_rays]]
        batch = Batch(origins[pick], dirs[pick], targets[pick])

        tape = Tape()
        terms = total_loss(bundle, batch, cfg, tape, rng)
        kept = tape.backward(terms.total, retain=[terms.render.radiance])
        flips = 0
        if use_boundary:
            adjoint = kept.get(terms.render.radiance.id, np.zeros((pick.size, 3)))
            flips = _boundary_step(bundle, terms, adjoint, cfg, rng).flips
        adam_step(store, cfg.learning_rate)

        total = float(ad.value_of(terms.total))
        record = StepRecord(step, terms.rec, terms.kl, terms.smooth, total, (time.perf_counter() - step_start) * 1000.0, flips)
        result.trace.append(record)
        if callback is not None:
            callback(record)
        if cfg.log_every and step % cfg.log_every == 0:
            logger.info("Step %d: loss %.6f (rec %.6f, kl %.6f, smooth %.6f)", step, total, terms.rec, terms.kl, terms.smooth)

        if initial is None:
            initial = total
        if not math.isfinite(total) or total > cfg.divergence_factor * initial:
            above += 1
            if above >= cfg.divergence_patience:
                raise DivergenceError(
                    f"Training diverged at step {step}: loss {total:.6g} stayed above "
                    f"{cfg.divergence_factor} x initial {initial:.6g} for {above} steps",
                    result.trace,
                )
        else:
            above = 0

        if cfg.checkpoint_every and cfg.checkpoint_path and (step + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(bundle, cfg.checkpoint_path)

    if cfg.checkpoint_path:
        save_checkpoint(bundle, cfg.checkpoint_path)
    result.elapsed_ms = (time.perf_counter() - start) * 1000.0
    logger.info("Fit finished in %.1f s: final loss %.6f", result.elapsed_ms / 1000.0, result.final_loss)
    return result


# ---------------------------------------------------------------------------
# Relighting and editing
# ---------------------------------------------------------------------------


def relight(bundle: SceneBundle, env: EnvironmentLights, camera: Camera) -> RenderResult:
    """Render with the environment swapped; everything else is unchanged.

    Raises:
        ValueError: If the light counts differ.
    """
    if env.count != bundle.env.count:
        raise ValueError(f"Relighting needs {bundle.env.count} lights, got {env.count}")
    if not np.allclose(env.axes, bundle.env.axes):
        logger.warning("Relighting environment uses different light axes")
    return render_image(bundle.replace(env=env), camera)


def environment_from_image(bundle: SceneBundle, image: np.ndarray) -> EnvironmentLights:
    """Lights on the bundle's axes fitted to a lat-long HDR image."""
    return EnvironmentLights.from_image(ParameterStore(), bundle.env.directions, image)


def edit_material(bundle: SceneBundle, override: MaterialOverride, camera: Camera) -> RenderResult:
    """Render with albedo, roughness or Fresnel scale overridden after decoding.

    Raises:
        ValueError: If an override is outside its Material range.
    """
    source = OverriddenMaterials(bundle.materials, override)
    return render_image(bundle.replace(materials=source), camera)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(bundle: SceneBundle, path: Union[str, Path]) -> None:
    """Write magic, version, the scene description, a group table and float64 data.

    All integers and arrays are little-endian.
    """
    store = bundle.store
    names = store.names()
    meta = json.dumps({"scene": json.loads(serialize_scene(bundle.scene)), "step_count": store.step_count}).encode("utf-8")

    parts = [CHECKPOINT_MAGIC, struct.pack("<III", CHECKPOINT_VERSION, len(names), len(meta)), meta]
    for name in names:
        group = store.groups[name]
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<BB", int(group.frozen), len(group.shape)))
        parts.append(struct.pack("<%dI" % len(group.shape), *group.shape))
    for name in names:
        parts.append(store.groups[name].values.astype("<f8").tobytes())

    with open(path, "wb") as f:
        f.write(b"".join(parts))
    logger.info("Checkpoint saved to %s (%d groups)", path, len(names))


def load_checkpoint(path: Union[str, Path]) -> SceneBundle:
    """Rebuild a bundle from a checkpoint alone.

    Raises:
        FileNotFoundError: If the file is missing.
        ValueError: On a bad magic, version or group table.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Checkpoint not found: {path}")
    raw = path.read_bytes()
    if raw[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise ValueError(f"Not a checkpoint file: {path}")
    pos = len(CHECKPOINT_MAGIC)
    try:
        version, count, meta_len = struct.unpack_from("<III", raw, pos)
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"Unsupported checkpoint version {version} in {path}")
        pos += 12
        meta = json.loads(raw[pos:pos + meta_len].decode("utf-8"))
        pos += meta_len

        table = []
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", raw, pos)
            pos += 2
            name = raw[pos:pos + name_len].decode("utf-8")
            pos += name_len
            frozen, ndim = struct.unpack_from("<BB", raw, pos)
            pos += 2
            shape = struct.unpack_from("<%dI" % ndim, raw, pos)
            pos += 4 * ndim
            table.append((name, bool(frozen), shape))
    except struct.error as e:
        raise ValueError(f"Truncated checkpoint {path}: {e}") from e

    scene_dict = meta["scene"]
    if scene_dict["environment"]["init"] == "pfm":
        # Stored amplitudes replace the fit; the image need not exist any more.
        scene_dict = copy.deepcopy(scene_dict)
        scene_dict["environment"]["init"] = "constant"
        scene_dict["environment"].pop("path", None)
    bundle = build_bundle(parse_scene(json.dumps(scene_dict)))
    store = bundle.store

    for name, frozen, shape in table:
        if name not in store:
            raise ValueError(f"Checkpoint group '{name}' does not exist in the rebuilt scene")
        size = int(np.prod(shape)) if shape else 1
        if size != store.groups[name].values.size:
            raise ValueError(f"Checkpoint group '{name}' has {size} values, scene expects {store.groups[name].values.size}")
        if pos + 8 * size > len(raw):
            raise ValueError(f"Truncated checkpoint {path} in group '{name}'")
        store.set_value(name, np.frombuffer(raw, dtype="<f8", count=size, offset=pos))
        store.groups[name].frozen = frozen
        pos += 8 * size
    store.step_count = int(meta.get("step_count", 0))
    logger.info("Loaded checkpoint %s (%d groups)", path, len(table))
    return bundle
