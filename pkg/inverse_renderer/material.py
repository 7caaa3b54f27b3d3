"""Spatially varying materials.

The learned path maps a surface point through a positional encoding and an
encoder to a sparse latent code, then decodes albedo and roughness with two
separate decoders. Ground-truth (per-primitive) materials and post-decoder
overrides share the same ``forward(x, tape)`` interface so the renderer can
swap material sources without branching.
"""

import logging
import math
from dataclasses import dataclass
from typing import Any, List, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ParameterStore, Tape
from .brdf import Material
from .network import Mlp

logger = logging.getLogger(__name__)

ROUGHNESS_MIN = 0.01
KL_CLAMP = 1e-6


def encoding_size(freqs: int) -> int:
    return 3 + 6 * freqs


def positional_encoding(p, freqs: int):
    """[p, sin(2^0 pi p), cos(2^0 pi p), ..., sin(2^(L-1) pi p), cos(...)].

    Works on (..., 3) arrays or Vars; output has 3 + 6L features.
    """
    parts = [p]
    for k in range(freqs):
        scaled = ad.mul((2.0 ** k) * math.pi, p)
        parts.append(ad.sin(scaled))
        parts.append(ad.cos(scaled))
    if len(parts) == 1:
        return p
    return ad.concat(parts, axis=-1)


def encoding_input_gradient(p, feature_grad, freqs: int):
    """Chain a gradient w.r.t. encoded features back to the raw point.

    Args:
        p: Points (N, 3), array or Var.
        feature_grad: d/d(features), shape (N, 3 + 6L).
        freqs: Frequency count L used for the encoding.

    Returns:
        Gradient w.r.t. p, shape (N, 3).
    """
    grad = feature_grad[:, 0:3]
    for k in range(freqs):
        c = (2.0 ** k) * math.pi
        base = 3 + 6 * k
        scaled = ad.mul(c, p)
        g_sin = feature_grad[:, base:base + 3]
        g_cos = feature_grad[:, base + 3:base + 6]
        term = ad.sub(ad.mul(g_sin, ad.cos(scaled)), ad.mul(g_cos, ad.sin(scaled)))
        grad = ad.add(grad, ad.mul(c, term))
    return grad


@dataclass
class MaterialSample:
    """Per-point material values: albedo (N, 3), roughness (N,), latent (N, D)."""

    albedo: Any
    roughness: Any
    latent: Any = None


class MaterialNet:
    """Encoder to a sigmoid latent code plus albedo and roughness decoders."""

    def __init__(
        self,
        store: ParameterStore,
        latent_dim: int = 32,
        pe_freqs: int = 6,
        encoder_hidden: Sequence[int] = (64, 64),
        decoder_hidden: Sequence[int] = (64,),
        prefix: str = "material",
        seed: int = 0,
    ) -> None:
        self.store = store
        self.prefix = prefix
        self.latent_dim = latent_dim
        self.pe_freqs = pe_freqs
        self.encoder = Mlp(store, f"{prefix}.encoder", (encoding_size(pe_freqs), *encoder_hidden, latent_dim), seed=seed)
        self.albedo_decoder = Mlp(store, f"{prefix}.albedo", (latent_dim, *decoder_hidden, 3), seed=seed + 1)
        self.roughness_decoder = Mlp(store, f"{prefix}.roughness", (latent_dim, *decoder_hidden, 1), seed=seed + 2)

    @property
    def group_names(self) -> List[str]:
        return (
            self.encoder.group_names
            + self.albedo_decoder.group_names
            + self.roughness_decoder.group_names
        )

    def encode(self, x, tape: Optional[Tape] = None):
        return ad.sigmoid(self.encoder.forward(positional_encoding(x, self.pe_freqs), tape))

    def decode(self, z, tape: Optional[Tape] = None):
        albedo = ad.sigmoid(self.albedo_decoder.forward(z, tape))
        raw = self.roughness_decoder.forward(z, tape)[:, 0]
        roughness = ad.add(ROUGHNESS_MIN, ad.mul(1.0 - ROUGHNESS_MIN, ad.sigmoid(raw)))
        return albedo, roughness

    def forward(self, x, tape: Optional[Tape] = None) -> MaterialSample:
        z = self.encode(x, tape)
        albedo, roughness = self.decode(z, tape)
        return MaterialSample(albedo, roughness, z)


def material_forward(net: MaterialNet, x, tape: Optional[Tape] = None):
    """Albedo, roughness and latent code at points x (N, 3)."""
    sample = net.forward(x, tape)
    return sample.albedo, sample.roughness, sample.latent


def kl_sparsity(latents, rho: float):
    """Sum over latent units of KL(rho || batch-mean activation).

    Raises:
        ValueError: On an empty batch or rho outside (0, 1).
    """
    if ad.value_of(latents).shape[0] == 0:
        raise ValueError("kl_sparsity needs a non-empty latent batch")
    if not 0.0 < rho < 1.0:
        raise ValueError(f"rho must lie in (0, 1), got {rho}")
    z_hat = ad.clamp(ad.mean(latents, axis=0), KL_CLAMP, 1.0 - KL_CLAMP)
    term_on = ad.mul(rho, ad.sub(math.log(rho), ad.log(z_hat)))
    term_off = ad.mul(1.0 - rho, ad.sub(math.log(1.0 - rho), ad.log(ad.sub(1.0, z_hat))))
    return ad.sum_(ad.add(term_on, term_off))


def smoothness_loss(net: MaterialNet, z, epsilon: float, rng: np.random.Generator, tape: Optional[Tape] = None):
    """Mean L1 change of decoded albedo and roughness under a latent jitter.

    The jitter is uniform in [-epsilon, epsilon] per component.
    """
    if epsilon < 0:
        raise ValueError(f"epsilon must be non-negative, got {epsilon}")
    shape = ad.value_of(z).shape
    delta = rng.uniform(-epsilon, epsilon, size=shape) if epsilon > 0 else np.zeros(shape)
    a0, r0 = net.decode(z, tape)
    a1, r1 = net.decode(ad.add(z, delta), tape)
    diff = ad.concat([ad.sub(a0, a1), ad.unsqueeze(ad.sub(r0, r1))], axis=-1)
    return ad.mean(ad.abs_(diff))


class PrimitiveMaterials:
    """Ground-truth materials looked up by the nearest analytic primitive."""

    def __init__(self, geometry, materials: Sequence[Material], default: Optional[Material] = None) -> None:
        self.geometry = geometry
        self.materials = list(materials)
        self.default = default or Material()
        for m in self.materials:
            m.validate()

    def forward(self, x, tape: Optional[Tape] = None) -> MaterialSample:
        points = ad.value_of(x)
        table = self.materials + [self.default]
        index = np.full(points.shape[0], len(table) - 1)
        if self.materials:
            index = self.geometry.nearest_primitive(points)
            index = np.where(index < len(self.materials), index, len(table) - 1)
        albedo = np.array([table[i].albedo for i in index], dtype=np.float64).reshape(-1, 3)
        roughness = np.array([table[i].roughness for i in index], dtype=np.float64)
        return MaterialSample(albedo, roughness, None)

    def fresnel(self, x) -> np.ndarray:
        points = ad.value_of(x)
        table = self.materials + [self.default]
        index = np.full(points.shape[0], len(table) - 1)
        if self.materials:
            index = self.geometry.nearest_primitive(points)
            index = np.where(index < len(self.materials), index, len(table) - 1)
        return np.array([table[i].fresnel for i in index], dtype=np.float64).reshape(-1, 3)


@dataclass
class MaterialOverride:
    """Post-decoder edits applied at render time."""

    albedo: Optional[Sequence[float]] = None
    roughness: Optional[float] = None
    fresnel_scale: Optional[float] = None

    def validate(self) -> None:
        """Check override ranges.

        Raises:
            ValueError: If a value is outside its Material range.
        """
        if self.albedo is not None:
            albedo = np.asarray(self.albedo, dtype=np.float64)
            if albedo.shape != (3,) or np.any(albedo < 0.0) or np.any(albedo > 1.0):
                raise ValueError(f"Albedo override must be 3 values in [0, 1], got {self.albedo}")
        if self.roughness is not None and not ROUGHNESS_MIN <= self.roughness <= 1.0:
            raise ValueError(f"Roughness override must lie in [0.01, 1], got {self.roughness}")
        if self.fresnel_scale is not None and self.fresnel_scale < 0.0:
            raise ValueError(f"Fresnel scale must be non-negative, got {self.fresnel_scale}")

    @property
    def is_identity(self) -> bool:
        return self.albedo is None and self.roughness is None and self.fresnel_scale in (None, 1.0)


class OverriddenMaterials:
    """Wraps a material source and replaces its outputs after decoding."""

    def __init__(self, base, override: MaterialOverride) -> None:
        override.validate()
        self.base = base
        self.override = override

    def forward(self, x, tape: Optional[Tape] = None) -> MaterialSample:
        sample = self.base.forward(x, tape)
        n = ad.value_of(x).shape[0]
        albedo, roughness = sample.albedo, sample.roughness
        if self.override.albedo is not None:
            albedo = np.tile(np.asarray(self.override.albedo, dtype=np.float64), (n, 1))
        if self.override.roughness is not None:
            roughness = np.full(n, float(self.override.roughness))
        return MaterialSample(albedo, roughness, sample.latent)
