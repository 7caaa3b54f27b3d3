"""Image and material error metrics.

Re-render comparisons run on tone-mapped [0, 1] images. PSNR of a perfect
match is reported as a finite sentinel; LPIPS is not computed.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np
from scipy.ndimage import gaussian_filter

from .illumination import env_map_export
from .renderer import render_image, tone_map_float

logger = logging.getLogger(__name__)

PSNR_SENTINEL = 99.0
SSIM_SIGMA = 1.5
SSIM_RADIUS = 5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2
ARE_FLOOR = 1e-3
LUMA = np.array([0.299, 0.587, 0.114])


def _masked(pred: np.ndarray, gt: np.ndarray, mask: Optional[np.ndarray]):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"Image shapes differ: {pred.shape} vs {gt.shape}")
    spatial = gt.shape[:2]
    mask = np.ones(spatial, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if mask.shape != spatial:
        raise ValueError(f"Mask shape {mask.shape} does not match image {spatial}")
    if not mask.any():
        raise ValueError("Metric mask selects no pixels")
    return pred, gt, mask


def mse(pred: np.ndarray, gt: np.ndarray, mask: Optional[np.ndarray] = None) -> float:
    """Mean squared error over masked pixels and all channels."""
    pred, gt, mask = _masked(pred, gt, mask)
    return float(np.mean((pred[mask] - gt[mask]) ** 2))


def psnr_from_mse(value: float) -> float:
    if value <= 0.0:
        return PSNR_SENTINEL
    return 10.0 * math.log10(1.0 / value)


def psnr(pred: np.ndarray, gt: np.ndarray, mask: Optional[np.ndarray] = None) -> float:
    """PSNR in dB for images in [0, 1]; identical images give the sentinel 99."""
    return psnr_from_mse(mse(pred, gt, mask))


def luminance(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    return image if image.ndim == 2 else image @ LUMA


def ssim(pred: np.ndarray, gt: np.ndarray, mask: Optional[np.ndarray] = None) -> float:
    """Mean SSIM of luminance with an 11x11 Gaussian window (sigma 1.5).

    Only windows lying fully inside the image are scored; with a mask, the
    mean runs over windows centered on masked pixels.

    Raises:
        ValueError: On mismatched shapes, an image smaller than the window,
            or no masked window center.
    """
    pred, gt, mask = _masked(pred, gt, mask)
    x, y = luminance(pred), luminance(gt)
    h, w = x.shape
    r = SSIM_RADIUS
    if h < 2 * r + 1 or w < 2 * r + 1:
        raise ValueError(f"SSIM needs images of at least {2 * r + 1}x{2 * r + 1}, got {w}x{h}")

    def blur(a: np.ndarray) -> np.ndarray:
        return gaussian_filter(a, SSIM_SIGMA, mode="constant", truncate=r / SSIM_SIGMA)

    mu_x, mu_y = blur(x), blur(y)
    var_x = blur(x * x) - mu_x ** 2
    var_y = blur(y * y) - mu_y ** 2
    cov = blur(x * y) - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + SSIM_C1) * (2.0 * cov + SSIM_C2)
    den = (mu_x ** 2 + mu_y ** 2 + SSIM_C1) * (var_x + var_y + SSIM_C2)
    ssim_map = (num / den)[r:h - r, r:w - r]
    centers = mask[r:h - r, r:w - r]
    if not centers.any():
        raise ValueError("No SSIM window is centered on a masked pixel")
    return float(np.mean(ssim_map[centers]))


def are(pred: np.ndarray, gt: np.ndarray, mask: Optional[np.ndarray] = None) -> float:
    """Absolute relative error mean(|pred - gt| / max(gt, 1e-3))."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"Shapes differ: {pred.shape} vs {gt.shape}")
    mask = np.ones(gt.shape[:2], dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("Metric mask selects no pixels")
    return float(np.mean(np.abs(pred[mask] - gt[mask]) / np.maximum(gt[mask], ARE_FLOOR)))


def image_metrics(pred: np.ndarray, gt: np.ndarray, mask: Optional[np.ndarray] = None) -> Dict[str, float]:
    """MSE, PSNR, SSIM and ARE of two [0, 1] images."""
    value = mse(pred, gt, mask)
    return {
        "mse": value,
        "psnr": psnr_from_mse(value),
        "ssim": ssim(pred, gt, mask),
        "are": are(pred, gt, mask),
    }


def env_map_mse(pred: np.ndarray, gt: np.ndarray) -> float:
    """MSE of tone-mapped environment maps after matching the mean intensity."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    pred_mean = float(np.mean(pred))
    scale = float(np.mean(gt)) / pred_mean if pred_mean > 0.0 else 1.0
    return mse(tone_map_float(pred * scale), tone_map_float(gt))


@dataclass
class ViewMetrics:
    """Re-render errors for one dataset view."""

    view: int
    mse: float
    psnr: float
    ssim: float
    albedo_mse: Optional[float] = None
    albedo_psnr: Optional[float] = None
    roughness_mse: Optional[float] = None
    roughness_are: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "view": self.view,
            "mse": self.mse,
            "psnr": self.psnr,
            "ssim": self.ssim,
            "albedo_mse": self.albedo_mse,
            "albedo_psnr": self.albedo_psnr,
            "roughness_mse": self.roughness_mse,
            "roughness_are": self.roughness_are,
        }


@dataclass
class Evaluation:
    """Per-view metrics plus dataset means and the environment-map error."""

    views: List[ViewMetrics] = field(default_factory=list)
    env_mse: Optional[float] = None
    lpips: str = "n/a"

    def mean(self, name: str) -> Optional[float]:
        values = [getattr(v, name) for v in self.views if getattr(v, name) is not None]
        return float(np.mean(values)) if values else None

    def to_dict(self) -> Dict[str, Any]:
        summary = {name: self.mean(name) for name in (
            "mse", "psnr", "ssim", "albedo_mse", "albedo_psnr", "roughness_mse", "roughness_are",
        )}
        summary["env_mse"] = self.env_mse
        summary["lpips"] = self.lpips
        return {"summary": summary, "views": [v.to_dict() for v in self.views]}


def evaluate_view(index: int, render, image: np.ndarray, mask: np.ndarray, albedo=None, roughness=None) -> ViewMetrics:
    """Compare one RenderResult with a dataset view's ground truth."""
    pred = tone_map_float(render.image)
    gt = tone_map_float(image)
    value = mse(pred, gt, mask)
    result = ViewMetrics(index, value, psnr_from_mse(value), ssim(pred, gt, mask))
    hits = mask & render.hit_mask
    if albedo is not None and hits.any():
        result.albedo_mse = mse(render.albedo, albedo, hits)
        result.albedo_psnr = psnr_from_mse(result.albedo_mse)
    if roughness is not None and hits.any():
        result.roughness_mse = float(np.mean((render.roughness[hits] - roughness[hits]) ** 2))
        result.roughness_are = are(render.roughness, roughness, hits)
    return result


def evaluate_bundle(bundle, dataset) -> Evaluation:
    """Render every dataset view and score it against the ground truth."""
    evaluation = Evaluation()
    for i, view in enumerate(dataset.views):
        render = render_image(bundle, view.camera)
        mask = view.mask if view.mask is not None else np.ones(view.image.shape[:2], dtype=bool)
        evaluation.views.append(evaluate_view(i, render, view.image, mask, view.albedo, view.roughness))
        logger.info("View %d: PSNR %.2f dB, SSIM %.4f", i, evaluation.views[-1].psnr, evaluation.views[-1].ssim)
    if dataset.env_map is not None:
        gt = dataset.env_map
        evaluation.env_mse = env_map_mse(env_map_export(bundle.env, gt.shape[1], gt.shape[0]), gt)
    return evaluation
