"""Spherical Gaussian algebra.

An SG is g(w) = mu * exp(lambda * (w . xi - 1)). All functions here accept
numpy arrays or autodiff Vars with arbitrary leading batch axes: axes have
shape (..., 3), sharpness (...), amplitude (..., C).
"""

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Tuple, Union

import numpy as np
from scipy.optimize import minimize_scalar

from . import autodiff as ad

logger = logging.getLogger(__name__)

CONSTANTS_FILE = Path(__file__).with_name("clamped_cosine.txt")
DEGENERATE_SHARPNESS = 1e-6
GOLDEN_ANGLE = math.pi * (3.0 - math.sqrt(5.0))


@dataclass
class SphericalGaussian:
    """One lobe (or a batch of lobes)."""

    axis: Any
    sharpness: Any
    amplitude: Any
    degenerate: Any = False

    def validate(self) -> None:
        """Check unit axes and positive sharpness.

        Raises:
            ValueError: On a non-unit axis or non-positive sharpness.
        """
        axis = ad.value_of(self.axis)
        lam = ad.value_of(self.sharpness)
        if np.any(np.abs(np.linalg.norm(axis, axis=-1) - 1.0) > 1e-9):
            raise ValueError("SG axis must be unit length")
        if np.any(lam <= 0.0):
            raise ValueError(f"SG sharpness must be positive, got min {lam.min()}")

    @classmethod
    def create(cls, axis, sharpness, amplitude) -> "SphericalGaussian":
        g = cls(
            np.asarray(axis, dtype=np.float64),
            np.asarray(sharpness, dtype=np.float64),
            np.asarray(amplitude, dtype=np.float64),
        )
        g.validate()
        return g


@dataclass(frozen=True)
class DirectionSet:
    """Fixed environment light axes."""

    vectors: np.ndarray

    def __post_init__(self) -> None:
        vectors = np.array(self.vectors, dtype=np.float64).reshape(-1, 3)
        if vectors.shape[0] == 0:
            raise ValueError("DirectionSet needs at least one direction")
        if np.any(np.abs(np.linalg.norm(vectors, axis=1) - 1.0) > 1e-9):
            raise ValueError("DirectionSet vectors must be unit length")
        vectors.setflags(write=False)
        object.__setattr__(self, "vectors", vectors)

    def __len__(self) -> int:
        return self.vectors.shape[0]

    @classmethod
    def from_vectors(cls, vectors) -> "DirectionSet":
        v = np.asarray(vectors, dtype=np.float64).reshape(-1, 3)
        return cls(v / np.linalg.norm(v, axis=1, keepdims=True))

    def min_angle(self) -> float:
        """Smallest pairwise angle in radians (pi for a single direction)."""
        if len(self) == 1:
            return math.pi
        cos = self.vectors @ self.vectors.T
        np.fill_diagonal(cos, -1.0)
        return float(np.arccos(np.clip(cos.max(), -1.0, 1.0)))

    @property
    def solid_angle(self) -> float:
        """Per-light solid angle, 4 pi / K."""
        return 4.0 * math.pi / len(self)


def fibonacci_directions(count: int) -> DirectionSet:
    """Near-uniform unit vectors on a Fibonacci spiral.

    Args:
        count: Number of directions K.

    Returns:
        DirectionSet of K vectors, deterministic for a given K.

    Raises:
        ValueError: If count < 1.
    """
    if count < 1:
        raise ValueError(f"Direction count must be >= 1, got {count}")
    i = np.arange(count, dtype=np.float64)
    z = 1.0 - (2.0 * i + 1.0) / count
    r = np.sqrt(np.maximum(1.0 - z * z, 0.0))
    phi = GOLDEN_ANGLE * i
    vectors = np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)
    return DirectionSet(vectors / np.linalg.norm(vectors, axis=1, keepdims=True))


def sg_eval(g: SphericalGaussian, direction):
    """mu * exp(lambda (w . xi - 1)), broadcast over batch axes."""
    cos = ad.dot(direction, g.axis)
    return ad.mul(g.amplitude, ad.unsqueeze(ad.exp(ad.mul(g.sharpness, ad.sub(cos, 1.0)))))


def sg_product(g1: SphericalGaussian, g2: SphericalGaussian) -> SphericalGaussian:
    """Pointwise product of two SGs, itself an SG.

    Antipodal lobes of equal sharpness have no defined axis; those entries
    fall back to an isotropic lobe (sharpness 1e-6, axis of g1) and are
    marked in the result's ``degenerate`` field.
    """
    v = ad.add(
        ad.mul(ad.unsqueeze(g1.sharpness), g1.axis),
        ad.mul(ad.unsqueeze(g2.sharpness), g2.axis),
    )
    lam = ad.norm(v)
    lam_value = ad.value_of(lam)
    scale = ad.value_of(g1.sharpness) + ad.value_of(g2.sharpness)
    degenerate = lam_value <= 1e-12 * np.maximum(scale, 1.0)

    if np.any(degenerate):
        logger.debug("SG product degenerate for %d lobes", int(np.sum(degenerate)))
        lam = ad.where(degenerate, DEGENERATE_SHARPNESS, lam)
        axis = ad.where(
            degenerate[..., None],
            np.broadcast_to(ad.value_of(g1.axis), ad.value_of(v).shape),
            ad.div(v, ad.unsqueeze(lam)),
        )
    else:
        axis = ad.div(v, ad.unsqueeze(lam))

    log_scale = ad.sub(lam, ad.add(g1.sharpness, g2.sharpness))
    amplitude = ad.mul(ad.mul(g1.amplitude, g2.amplitude), ad.unsqueeze(ad.exp(log_scale)))
    flag = bool(degenerate) if np.ndim(degenerate) == 0 else degenerate
    return SphericalGaussian(axis, lam, amplitude, degenerate=flag)


def sg_integral(g: SphericalGaussian):
    """Integral over the full sphere: 2 pi (mu / lambda)(1 - exp(-2 lambda))."""
    factor = ad.div(
        ad.mul(2.0 * math.pi, ad.sub(1.0, ad.exp(ad.mul(-2.0, g.sharpness)))),
        g.sharpness,
    )
    return ad.mul(g.amplitude, ad.unsqueeze(factor))


def sg_inner_product(g1: SphericalGaussian, g2: SphericalGaussian, with_flag: bool = False):
    """Integral of the product of two SGs over the sphere.

    Args:
        g1: First lobe(s).
        g2: Second lobe(s).
        with_flag: Also return the product's degeneracy flag.
    """
    product = sg_product(g1, g2)
    value = sg_integral(product)
    if with_flag:
        return value, product.degenerate
    return value


# ---------------------------------------------------------------------------
# Clamped cosine
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CosineLobeFit:
    """Least-squares SG fit of max(w . n, 0) over the sphere."""

    sharpness: float
    amplitude: float
    residual: float


def _cosine_moments(lam: float) -> Tuple[float, float]:
    # A = int_0^1 exp(lam (c - 1)) c dc ; B = int_-1^1 exp(2 lam (c - 1)) dc
    a = 1.0 / lam - 1.0 / lam ** 2 + math.exp(-lam) / lam ** 2
    b = (1.0 - math.exp(-4.0 * lam)) / (2.0 * lam)
    return a, b


def optimal_cosine_amplitude(lam: float) -> float:
    """Amplitude minimizing the squared error for a given sharpness."""
    a, b = _cosine_moments(lam)
    return a / b


def cosine_lobe_residual(lam: float, mu: float) -> float:
    """Integral over the sphere of (mu exp(lam (w.n - 1)) - max(w.n, 0))^2."""
    a, b = _cosine_moments(lam)
    return 2.0 * math.pi * (b * mu * mu - 2.0 * a * mu + 1.0 / 3.0)


def fit_clamped_cosine(
    lo: float = 1.0,
    hi: float = 5.0,
    grid: int = 401,
    xatol: float = 1e-10,
) -> CosineLobeFit:
    """Fit (lambda_c, mu_c) by a grid search refined with a bounded scalar minimization."""

    def err(l: float) -> float:
        return cosine_lobe_residual(l, optimal_cosine_amplitude(l))

    lams = np.linspace(lo, hi, grid)
    best = int(np.argmin([err(l) for l in lams]))
    bracket = (lams[max(best - 1, 0)], lams[min(best + 1, grid - 1)])
    refined = minimize_scalar(err, bounds=bracket, method="bounded", options={"xatol": xatol})

    lam = float(refined.x)
    mu = optimal_cosine_amplitude(lam)
    return CosineLobeFit(sharpness=lam, amplitude=mu, residual=cosine_lobe_residual(lam, mu))


def write_cosine_constants(fit: CosineLobeFit, path: Union[str, Path] = CONSTANTS_FILE) -> None:
    lines = [
        "# Clamped-cosine SG fit, regenerated by data/fit_cosine_lobe.py",
        f"sharpness = {fit.sharpness:.6f}",
        f"amplitude = {fit.amplitude:.6f}",
        f"residual = {fit.residual:.6f}",
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    logger.info("Clamped-cosine constants written to: %s", path)


def load_cosine_constants(path: Union[str, Path] = CONSTANTS_FILE) -> CosineLobeFit:
    """Read the key = value constants file.

    Raises:
        FileNotFoundError: If the file does not exist.
        ValueError: If a key is missing or malformed.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Clamped-cosine constants not found: {path}")
    values: Dict[str, float] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key = value")
        key, raw = (part.strip() for part in line.split("=", 1))
        values[key] = float(raw)
    missing = {"sharpness", "amplitude"} - values.keys()
    if missing:
        raise ValueError(f"{path}: missing keys {sorted(missing)}")
    return CosineLobeFit(values["sharpness"], values["amplitude"], values.get("residual", float("nan")))


COSINE_LOBE = load_cosine_constants()


def clamped_cosine_sg(normal) -> SphericalGaussian:
    """SG approximating max(w . n, 0), axis n, fitted sharpness/amplitude."""
    shape = ad.value_of(normal).shape[:-1]
    return SphericalGaussian(
        normal,
        np.full(shape, COSINE_LOBE.sharpness),
        np.full(shape + (1,), COSINE_LOBE.amplitude),
    )
