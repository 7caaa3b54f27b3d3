"""Posed-image datasets on disk.

Layout of a dataset directory::

    cameras.txt        one line per view: position look-at up fov (10 numbers)
    view_000.pfm       HDR image
    mask_000.ppm       foreground mask (white = foreground)
    albedo_000.pfm     optional ground-truth albedo
    roughness_000.pfm  optional ground-truth roughness (single channel)
    env.pfm            optional ground-truth lat-long environment
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np

from .illumination import env_map_export
from .image_io import mask_to_ppm, ppm_to_mask, read_pfm, read_ppm, write_pfm, write_ppm
from .renderer import Camera, render_image

logger = logging.getLogger(__name__)

CAMERAS_FILE = "cameras.txt"
ENV_FILE = "env.pfm"
ENV_SIZE = (64, 32)


@dataclass
class View:
    camera: Camera
    image: np.ndarray
    mask: Optional[np.ndarray] = None
    albedo: Optional[np.ndarray] = None
    roughness: Optional[np.ndarray] = None


@dataclass
class Dataset:
    views: List[View] = field(default_factory=list)
    env_map: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.views)


def _camera_line(camera: Camera) -> str:
    values = [*camera.position, *camera.look_at, *camera.up, camera.fov_deg]
    return " ".join(repr(float(v)) for v in values)


def _parse_camera(line: str, number: int, path: Path) -> Camera:
    parts = line.split()
    if len(parts) != 10:
        raise ValueError(f"{path}:{number}: expected 10 numbers (position look-at up fov), got {len(parts)}")
    try:
        v = [float(p) for p in parts]
    except ValueError:
        raise ValueError(f"{path}:{number}: camera values must be numbers") from None
    return Camera(tuple(v[0:3]), tuple(v[3:6]), tuple(v[6:9]), v[9])


def load_dataset(directory: Union[str, Path]) -> Dataset:
    """Read all views listed in ``cameras.txt``.

    Raises:
        FileNotFoundError: If the directory, camera file or an image is missing.
        ValueError: On a malformed camera line or mismatched image sizes.
    """
    root = Path(directory)
    cameras_path = root / CAMERAS_FILE
    if not cameras_path.exists():
        raise FileNotFoundError(f"Dataset camera file not found: {cameras_path}")

    lines = [(i, l.strip()) for i, l in enumerate(cameras_path.read_text(encoding="utf-8").splitlines(), start=1)]
    lines = [(i, l) for i, l in lines if l and not l.startswith("#")]
    if not lines:
        raise ValueError(f"Dataset has no views: {cameras_path}")

    dataset = Dataset()
    for index, (number, line) in enumerate(lines):
        camera = _parse_camera(line, number, cameras_path)
        image = read_pfm(root / f"view_{index:03d}.pfm").astype(np.float64)
        if image.ndim != 3:
            raise ValueError(f"View {index} must be an RGB PFM")
        camera.height, camera.width = image.shape[:2]
        camera.validate()

        view = View(camera, image)
        mask_path = root / f"mask_{index:03d}.ppm"
        if mask_path.exists():
            view.mask = ppm_to_mask(read_ppm(mask_path))
        albedo_path = root / f"albedo_{index:03d}.pfm"
        if albedo_path.exists():
            view.albedo = read_pfm(albedo_path).astype(np.float64)
        roughness_path = root / f"roughness_{index:03d}.pfm"
        if roughness_path.exists():
            view.roughness = read_pfm(roughness_path).astype(np.float64)
        for name, buffer in (("mask", view.mask), ("albedo", view.albedo), ("roughness", view.roughness)):
            if buffer is not None and buffer.shape[:2] != image.shape[:2]:
                raise ValueError(f"View {index}: {name} size {buffer.shape[:2]} differs from image {image.shape[:2]}")
        dataset.views.append(view)

    env_path = root / ENV_FILE
    if env_path.exists():
        dataset.env_map = read_pfm(env_path).astype(np.float64)
    logger.info("Loaded dataset %s: %d views", root, len(dataset))
    return dataset


def write_dataset(directory: Union[str, Path], dataset: Dataset) -> None:
    """Write a dataset in the layout read by ``load_dataset``."""
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    with open(root / CAMERAS_FILE, "w", encoding="utf-8") as f:
        for view in dataset.views:
            f.write(_camera_line(view.camera) + "\n")
    for i, view in enumerate(dataset.views):
        write_pfm(root / f"view_{i:03d}.pfm", view.image)
        if view.mask is not None:
            write_ppm(root / f"mask_{i:03d}.ppm", mask_to_ppm(view.mask))
        if view.albedo is not None:
            write_pfm(root / f"albedo_{i:03d}.pfm", view.albedo)
        if view.roughness is not None:
            write_pfm(root / f"roughness_{i:03d}.pfm", view.roughness)
    if dataset.env_map is not None:
        write_pfm(root / ENV_FILE, dataset.env_map)
    logger.info("Dataset saved to %s (%d views)", root, len(dataset))


def synthesize_dataset(bundle, cameras: Sequence[Camera], env_size=ENV_SIZE) -> Dataset:
    """Render ground-truth views, masks, material buffers and the environment map."""
    dataset = Dataset()
    for camera in cameras:
        result = render_image(bundle, camera)
        dataset.views.append(View(camera, result.image, result.hit_mask, result.albedo, result.roughness))
    dataset.env_map = env_map_export(bundle.env, env_size[0], env_size[1])
    logger.info("Synthesized %d views", len(dataset))
    return dataset
