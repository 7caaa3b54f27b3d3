"""Configuration management for the inverse renderer."""

import dataclasses
import logging
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

from dotenv import load_dotenv

# Load .env file if present
load_dotenv()

logger = logging.getLogger(__name__)


def _env_bool(name: str, default: str) -> bool:
    return os.getenv(name, default).lower() == "true"


@dataclass
class TraceConfig:
    """Sphere tracing, refinement and occlusion-query settings."""

    threshold: float = 1e-3  # tau: hit when |sdf| < threshold
    max_iterations: int = 128
    refinement_tolerance: float = 1e-6
    max_refine_steps: int = 3
    offset_scale: float = 5.0  # secondary ray origin offset, in units of tau
    boundary_angle_deg: float = 2.0
    grazing_sdf_scale: float = 10.0  # grazing needs min |sdf| <= scale * tau
    bound_radius: float = 3.0

    def validate(self) -> None:
        """Check the threshold ordering and counts.

        Raises:
            ValueError: If any field is out of range.
        """
        if not self.threshold > self.refinement_tolerance > 0:
            raise ValueError(
                f"Trace config requires threshold > refinement_tolerance > 0, "
                f"got {self.threshold} and {self.refinement_tolerance}"
            )
        if self.max_iterations < 1:
            raise ValueError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if self.max_refine_steps < 0:
            raise ValueError(f"max_refine_steps must be >= 0, got {self.max_refine_steps}")
        if self.bound_radius <= 0:
            raise ValueError(f"bound_radius must be positive, got {self.bound_radius}")

    @property
    def offset(self) -> float:
        return self.offset_scale * self.threshold

    @classmethod
    def from_env(cls) -> "TraceConfig":
        """Create config from environment variables."""
        return cls(
            threshold=float(os.getenv("IR_TRACE_THRESHOLD", "1e-3")),
            max_iterations=int(os.getenv("IR_TRACE_MAX_ITERATIONS", "128")),
            refinement_tolerance=float(os.getenv("IR_TRACE_REFINE_TOL", "1e-6")),
            max_refine_steps=int(os.getenv("IR_TRACE_REFINE_STEPS", "3")),
            boundary_angle_deg=float(os.getenv("IR_BOUNDARY_ANGLE_DEG", "2.0")),
        )


@dataclass
class RenderConfig:
    """Forward rendering and boundary-term settings."""

    trace: TraceConfig = field(default_factory=TraceConfig)
    use_boundary: bool = True
    half_weight_boundary: bool = True
    boundary_slices: int = 32
    boundary_steps: int = 32
    boundary_eps_deg: float = 0.5
    bisection_iterations: int = 20
    threads: int = 1

    @classmethod
    def from_env(cls) -> "RenderConfig":
        """Create config from environment variables."""
        return cls(
            trace=TraceConfig.from_env(),
            use_boundary=_env_bool("IR_USE_BOUNDARY", "true"),
            boundary_slices=int(os.getenv("IR_BOUNDARY_SLICES", "32")),
            boundary_steps=int(os.getenv("IR_BOUNDARY_STEPS", "32")),
            threads=int(os.getenv("IR_THREADS", "1")),
        )


@dataclass
class TrainConfig:
    """Loss weights, optimizer and schedule for fitting a scene."""

    # Loss weights
    lambda_rec: float = 1.0
    lambda_kl: float = 0.01
    lambda_smooth: float = 0.1
    rho: float = 0.05
    epsilon: float = 0.02

    # Optimizer / schedule
    learning_rate: float = 5e-4
    steps: int = 2000
    batch_rays: int = 1024
    seed: int = 0
    geometry_steps: int = 500
    init_radius: float = 1.0

    # Stage flags
    freeze_geometry: bool = False
    freeze_env: bool = False
    uniform_weights: bool = False
    use_boundary: bool = True
    boundary_pixels: int = 32

    # Bookkeeping
    log_every: int = 50
    checkpoint_every: int = 0
    checkpoint_path: Optional[str] = None
    divergence_factor: float = 10.0
    divergence_patience: int = 100

    def validate(self) -> None:
        """Check weights and counts.

        Raises:
            ValueError: If any field is out of range.
        """
        for name in ("lambda_rec", "lambda_kl", "lambda_smooth", "epsilon"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative, got {getattr(self, name)}")
        if not 0.0 < self.rho < 1.0:
            raise ValueError(f"rho must lie in (0, 1), got {self.rho}")
        if self.steps < 0:
            raise ValueError(f"steps must be >= 0, got {self.steps}")
        if self.batch_rays < 1:
            raise ValueError(f"batch_rays must be >= 1, got {self.batch_rays}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")

    @classmethod
    def from_env(cls) -> "TrainConfig":
        """Create config from environment variables."""
        return cls(
            learning_rate=float(os.getenv("IR_LEARNING_RATE", "5e-4")),
            steps=int(os.getenv("IR_STEPS", "2000")),
            batch_rays=int(os.getenv("IR_BATCH_RAYS", "1024")),
            seed=int(os.getenv("IR_SEED", "0")),
            geometry_steps=int(os.getenv("IR_GEOMETRY_STEPS", "500")),
            use_boundary=_env_bool("IR_USE_BOUNDARY", "true"),
            log_every=int(os.getenv("IR_LOG_EVERY", "50")),
        )


@dataclass
class AppConfig:
    """Process-wide settings for the command-line tool."""

    seed: int = 0
    threads: int = 1
    colored_output: bool = True

    # Logging
    log_level: str = "WARNING"
    log_file: Optional[str] = None

    @classmethod
    def from_env(cls) -> "AppConfig":
        """Create config from environment variables."""
        return cls(
            seed=int(os.getenv("IR_SEED", "0")),
            threads=int(os.getenv("IR_THREADS", "1")),
            colored_output=_env_bool("COLORED_OUTPUT", "true"),
            log_level=os.getenv("LOG_LEVEL", "WARNING"),
            log_file=os.getenv("LOG_FILE") or None,
        )


def _coerce(raw: str, current: Any, key: str) -> Any:
    if isinstance(current, bool):
        lowered = raw.lower()
        if lowered in ("true", "1", "yes", "on"):
            return True
        if lowered in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"Config key '{key}' expects a boolean, got '{raw}'")
    try:
        if isinstance(current, int):
            return int(raw)
        if isinstance(current, float):
            return float(raw)
    except ValueError as e:
        raise ValueError(f"Config key '{key}' cannot parse '{raw}': {e}") from e
    if raw.lower() in ("none", "null", ""):
        return None
    return raw


def apply_overrides(configs: Dict[str, Any], overrides: List[str]) -> None:
    """Apply ``section.key=value`` overrides to config dataclasses in place.

    ``trace.*`` keys address the TraceConfig nested inside a RenderConfig
    when no standalone ``trace`` section is given.

    Args:
        configs: Mapping of section name to config dataclass instance.
        overrides: Strings of the form ``section.key=value``.

    Raises:
        ValueError: If an override is malformed or names an unknown key.
    """
    for item in overrides:
        if "=" not in item:
            raise ValueError(f"Config override must look like section.key=value, got '{item}'")
        dotted, raw = item.split("=", 1)
        if "." not in dotted:
            raise ValueError(f"Config override key must be section.key, got '{dotted}'")
        section, key = dotted.strip().split(".", 1)

        target = configs.get(section)
        if target is None and section == "trace" and "render" in configs:
            target = configs["render"].trace
        if target is None:
            raise ValueError(f"Unknown config section '{section}' in override '{item}'")

        names = {f.name for f in dataclasses.fields(target)}
        if key not in names or dataclasses.is_dataclass(getattr(target, key)):
            raise ValueError(f"Unknown config key '{dotted}'")

        value = _coerce(raw.strip(), getattr(target, key), dotted)
        setattr(target, key, value)
        logger.debug("Config override %s = %r", dotted, value)


def setup_logging(config: AppConfig) -> None:
    """Configure logging based on app config."""
    log_format = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
    handlers: list[logging.Handler] = [logging.StreamHandler()]

    if config.log_file:
        handlers.append(logging.FileHandler(config.log_file))

    logging.basicConfig(
        level=getattr(logging, config.log_level.upper(), logging.INFO),
        format=log_format,
        handlers=handlers,
    )
