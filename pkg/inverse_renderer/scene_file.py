"""Scene file loading, validation and serialization.

Scene files are JSON documents with the sections ``geometry``,
``environment``, ``cameras``, ``materials``, ``networks``, ``trace``,
``render``, ``train`` and ``seed``. Unknown and duplicate keys are
rejected with the offending key and its line in the file.
"""

import copy
import dataclasses
import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from .brdf import DEFAULT_F0
from .config import RenderConfig, TraceConfig, TrainConfig

logger = logging.getLogger(__name__)

DEFAULT_LIGHTS = 128

SECTIONS = ("geometry", "environment", "cameras", "materials", "networks", "trace", "render", "train", "seed")

PRIMITIVE_KEYS = {
    "sphere": {"type", "center", "radius", "trainable"},
    "plane": {"type", "normal", "offset"},
    "box": {"type", "center", "half_extents"},
}
NEURAL_KEYS = {"type", "hidden", "beta", "pe_freqs", "init_radius", "bound_radius"}
ENVIRONMENT_KEYS = {"lights", "init", "radiance", "sharpness", "amplitude", "path"}
CAMERA_KEYS = {"position", "look_at", "up", "fov", "width", "height"}
MATERIAL_KEYS = {"albedo", "roughness", "fresnel"}
NETWORK_DEFAULTS: Dict[str, Any] = {
    "indirect_hidden": [128, 128, 128, 128],
    "pos_freqs": 6,
    "normal_freqs": 4,
    "latent_dim": 32,
    "pe_freqs": 6,
    "encoder_hidden": [64, 64],
    "decoder_hidden": [64],
}


class SceneFileError(ValueError):
    """Schema violation in a scene file, naming the key and line when known."""

    def __init__(self, message: str, key: Optional[str] = None, line: Optional[int] = None) -> None:
        location = ""
        if key is not None:
            location += f" (key '{key}'"
            location += f", line {line})" if line is not None else ")"
        elif line is not None:
            location += f" (line {line})"
        super().__init__(message + location)
        self.key = key
        self.line = line


@dataclass
class SceneFile:
    """Validated scene description with defaults applied."""

    geometry: Dict[str, Any]
    environment: Dict[str, Any]
    cameras: List[Dict[str, Any]]
    materials: List[Dict[str, Any]] = field(default_factory=list)
    networks: Dict[str, Any] = field(default_factory=lambda: dict(NETWORK_DEFAULTS))
    trace: Dict[str, Any] = field(default_factory=dict)
    render: Dict[str, Any] = field(default_factory=dict)
    train: Dict[str, Any] = field(default_factory=dict)
    seed: int = 0
    source_path: Optional[str] = field(default=None, compare=False)

    @property
    def light_count(self) -> int:
        return int(self.environment["lights"])

    def trace_config(self) -> TraceConfig:
        return TraceConfig(**self.trace)

    def render_config(self) -> RenderConfig:
        return RenderConfig(trace=self.trace_config(), **self.render)

    def train_config(self) -> TrainConfig:
        return TrainConfig(**self.train)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "geometry": copy.deepcopy(self.geometry),
            "environment": copy.deepcopy(self.environment),
            "cameras": copy.deepcopy(self.cameras),
            "materials": copy.deepcopy(self.materials),
            "networks": copy.deepcopy(self.networks),
            "trace": dict(self.trace),
            "render": dict(self.render),
            "train": dict(self.train),
            "seed": self.seed,
        }


# ---------------------------------------------------------------------------
# Parsing helpers
# ---------------------------------------------------------------------------


def _line_of(text: str, key: str, occurrence: int = 1) -> Optional[int]:
    """1-based line of the n-th ``"key":`` in the raw text, if found."""
    pattern = re.compile(r'"%s"\s*:' % re.escape(key))
    for i, match in enumerate(pattern.finditer(text), start=1):
        if i == occurrence:
            return text.count("\n", 0, match.start()) + 1
    return None


def _reject_duplicates(text: str):
    seen_counts: Dict[str, int] = {}

    def hook(pairs: List[Tuple[str, Any]]) -> Dict[str, Any]:
        result: Dict[str, Any] = {}
        for key, value in pairs:
            seen_counts[key] = seen_counts.get(key, 0) + 1
            if key in result:
                raise SceneFileError("Duplicate key", key, _line_of(text, key, seen_counts[key]))
            result[key] = value
        return result

    return hook


def _check_keys(section: Dict[str, Any], allowed, where: str, text: str) -> None:
    if not isinstance(section, dict):
        raise SceneFileError(f"Section '{where}' must be an object", where, _line_of(text, where))
    for key in section:
        if key not in allowed:
            raise SceneFileError(f"Unknown key in '{where}'", key, _line_of(text, key))


def _vector(value: Any, key: str, text: str, size: int = 3) -> List[float]:
    if not isinstance(value, (list, tuple)) or len(value) != size:
        raise SceneFileError(f"Expected a list of {size} numbers, got {value!r}", key, _line_of(text, key))
    try:
        return [float(v) for v in value]
    except (TypeError, ValueError):
        raise SceneFileError(f"Expected numbers, got {value!r}", key, _line_of(text, key)) from None


def _number(value: Any, key: str, text: str, positive: bool = False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise SceneFileError(f"Expected a number, got {value!r}", key, _line_of(text, key))
    if positive and value <= 0:
        raise SceneFileError(f"Expected a positive number, got {value!r}", key, _line_of(text, key))
    return float(value)


def _config_section(raw: Dict[str, Any], cls, where: str, text: str, skip=()) -> Dict[str, Any]:
    names = {f.name for f in dataclasses.fields(cls)} - set(skip)
    _check_keys(raw, names, where, text)
    defaults = cls()
    section = {}
    for key, value in raw.items():
        current = getattr(defaults, key)
        if isinstance(current, bool) and not isinstance(value, bool):
            raise SceneFileError("Expected true or false", key, _line_of(text, key))
        if isinstance(current, (int, float)) and not isinstance(current, bool):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise SceneFileError(f"Expected a number, got {value!r}", key, _line_of(text, key))
            value = int(value) if isinstance(current, int) else float(value)
        section[key] = value
    return section


# ---------------------------------------------------------------------------
# Section validators
# ---------------------------------------------------------------------------


def _geometry(raw: Any, text: str) -> Dict[str, Any]:
    if not isinstance(raw, dict):
        raise SceneFileError("Section 'geometry' must be an object", "geometry", _line_of(text, "geometry"))
    kind = raw.get("type", "analytic")
    if kind == "neural":
        _check_keys(raw, NEURAL_KEYS, "geometry", text)
        return {
            "type": "neural",
            "hidden": [int(h) for h in raw.get("hidden", [64, 64, 64, 64])],
            "beta": _number(raw.get("beta", 100.0), "beta", text, positive=True),
            "pe_freqs": int(raw.get("pe_freqs", 6)),
            "init_radius": _number(raw.get("init_radius", 1.0), "init_radius", text, positive=True),
            "bound_radius": _number(raw.get("bound_radius", 3.0), "bound_radius", text, positive=True),
        }
    if kind != "analytic":
        raise SceneFileError(f"Geometry type must be 'analytic' or 'neural', got '{kind}'", "type", _line_of(text, "type"))

    _check_keys(raw, {"type", "primitives"}, "geometry", text)
    primitives = raw.get("primitives")
    if not isinstance(primitives, list) or not primitives:
        raise SceneFileError("Analytic geometry needs a non-empty 'primitives' list", "primitives", _line_of(text, "primitives"))

    result = []
    for prim in primitives:
        if not isinstance(prim, dict) or prim.get("type") not in PRIMITIVE_KEYS:
            found = prim.get("type") if isinstance(prim, dict) else prim
            raise SceneFileError(f"Primitive type must be one of {sorted(PRIMITIVE_KEYS)}, got {found!r}", "type", _line_of(text, "type"))
        kind = prim["type"]
        _check_keys(prim, PRIMITIVE_KEYS[kind], kind, text)
        if kind == "sphere":
            result.append({
                "type": "sphere",
                "center": _vector(prim.get("center", [0.0, 0.0, 0.0]), "center", text),
                "radius": _number(prim.get("radius", 1.0), "radius", text, positive=True),
                "trainable": bool(prim.get("trainable", False)),
            })
        elif kind == "plane":
            result.append({
                "type": "plane",
                "normal": _vector(prim.get("normal", [0.0, 1.0, 0.0]), "normal", text),
                "offset": _number(prim.get("offset", 0.0), "offset", text),
            })
        else:
            result.append({
                "type": "box",
                "center": _vector(prim.get("center", [0.0, 0.0, 0.0]), "center", text),
                "half_extents": _vector(prim.get("half_extents", [0.5, 0.5, 0.5]), "half_extents", text),
            })
    return {"type": "analytic", "primitives": result}


def _environment(raw: Any, text: str) -> Dict[str, Any]:
    raw = raw if raw is not None else {}
    _check_keys(raw, ENVIRONMENT_KEYS, "environment", text)
    lights = raw.get("lights", DEFAULT_LIGHTS)
    if isinstance(lights, bool) or not isinstance(lights, int) or lights < 1:
        raise SceneFileError(f"Light count must be a positive integer, got {lights!r}", "lights", _line_of(text, "lights"))
    init = raw.get("init", "constant")
    if init not in ("constant", "pfm", "values"):
        raise SceneFileError(f"Environment init must be constant, pfm or values, got '{init}'", "init", _line_of(text, "init"))

    env: Dict[str, Any] = {"lights": lights, "init": init, "sharpness": None}
    if raw.get("sharpness") is not None:
        sharp = raw["sharpness"]
        env["sharpness"] = [float(v) for v in sharp] if isinstance(sharp, list) else _number(sharp, "sharpness", text, positive=True)
    radiance = raw.get("radiance", 1.0)
    env["radiance"] = _vector(radiance, "radiance", text) if isinstance(radiance, list) else _number(radiance, "radiance", text)
    if init == "pfm":
        if not isinstance(raw.get("path"), str):
            raise SceneFileError("Environment init 'pfm' needs a 'path'", "path", _line_of(text, "init"))
        env["path"] = raw["path"]
    if init == "values":
        amplitude = raw.get("amplitude")
        if not isinstance(amplitude, list) or len(amplitude) != lights:
            raise SceneFileError(f"Environment init 'values' needs {lights} amplitude rows", "amplitude", _line_of(text, "amplitude"))
        env["amplitude"] = [_vector(row, "amplitude", text) for row in amplitude]
        if isinstance(env["sharpness"], list) and len(env["sharpness"]) != lights:
            raise SceneFileError(f"Expected {lights} sharpness values", "sharpness", _line_of(text, "sharpness"))
    return env


def _cameras(raw: Any, text: str) -> List[Dict[str, Any]]:
    if not isinstance(raw, list) or not raw:
        raise SceneFileError("Section 'cameras' must be a non-empty list", "cameras", _line_of(text, "cameras"))
    cameras = []
    for cam in raw:
        _check_keys(cam, CAMERA_KEYS, "cameras", text)
        if "position" not in cam:
            raise SceneFileError("Camera needs a 'position'", "position", _line_of(text, "cameras"))
        fov = _number(cam.get("fov", 40.0), "fov", text)
        if not 0.0 < fov < 180.0:
            raise SceneFileError(f"Camera fov must lie in (0, 180), got {fov}", "fov", _line_of(text, "fov"))
        cameras.append({
            "position": _vector(cam["position"], "position", text),
            "look_at": _vector(cam.get("look_at", [0.0, 0.0, 0.0]), "look_at", text),
            "up": _vector(cam.get("up", [0.0, 1.0, 0.0]), "up", text),
            "fov": fov,
            "width": int(_number(cam.get("width", 64), "width", text, positive=True)),
            "height": int(_number(cam.get("height", 64), "height", text, positive=True)),
        })
    return cameras


def _materials(raw: Any, text: str) -> List[Dict[str, Any]]:
    if raw is None:
        return []
    if not isinstance(raw, list):
        raise SceneFileError("Section 'materials' must be a list", "materials", _line_of(text, "materials"))
    result = []
    for m in raw:
        _check_keys(m, MATERIAL_KEYS, "materials", text)
        albedo = _vector(m.get("albedo", [0.8, 0.8, 0.8]), "albedo", text)
        roughness = _number(m.get("roughness", 0.5), "roughness", text)
        fresnel = _vector(m.get("fresnel", list(DEFAULT_F0)), "fresnel", text)
        if any(not 0.0 <= a <= 1.0 for a in albedo + fresnel) or not 0.01 <= roughness <= 1.0:
            raise SceneFileError("Material values out of range", "materials", _line_of(text, "materials"))
        result.append({"albedo": albedo, "roughness": roughness, "fresnel": fresnel})
    return result


def _networks(raw: Any, text: str) -> Dict[str, Any]:
    raw = raw if raw is not None else {}
    _check_keys(raw, set(NETWORK_DEFAULTS), "networks", text)
    result = dict(NETWORK_DEFAULTS)
    for key, value in raw.items():
        default = NETWORK_DEFAULTS[key]
        if isinstance(default, list):
            if not isinstance(value, list) or not all(isinstance(v, int) and v > 0 for v in value):
                raise SceneFileError("Expected a list of positive layer widths", key, _line_of(text, key))
            result[key] = list(value)
        else:
            result[key] = int(_number(value, key, text, positive=True))
    return result


# ---------------------------------------------------------------------------
# Public API
# ---------------------------------------------------------------------------


def parse_scene(text: str, source_path: Optional[str] = None) -> SceneFile:
    """Parse and validate scene JSON text.

    Raises:
        SceneFileError: On malformed JSON or any schema violation.
    """
    try:
        raw = json.loads(text, object_pairs_hook=_reject_duplicates(text))
    except json.JSONDecodeError as e:
        raise SceneFileError(f"Malformed JSON: {e.msg}", None, e.lineno) from e
    if not isinstance(raw, dict):
        raise SceneFileError("Scene file must hold a JSON object", None, 1)
    for key in raw:
        if key not in SECTIONS:
            raise SceneFileError("Unknown top-level section", key, _line_of(text, key))
    if "geometry" not in raw:
        raise SceneFileError("Missing section", "geometry", None)
    if "cameras" not in raw:
        raise SceneFileError("Missing section", "cameras", None)

    seed = raw.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise SceneFileError(f"Seed must be an integer, got {seed!r}", "seed", _line_of(text, "seed"))

    scene = SceneFile(
        geometry=_geometry(raw["geometry"], text),
        environment=_environment(raw.get("environment"), text),
        cameras=_cameras(raw["cameras"], text),
        materials=_materials(raw.get("materials"), text),
        networks=_networks(raw.get("networks"), text),
        trace=_config_section(raw.get("trace", {}), TraceConfig, "trace", text),
        render=_config_section(raw.get("render", {}), RenderConfig, "render", text, skip=("trace",)),
        train=_config_section(raw.get("train", {}), TrainConfig, "train", text),
        seed=seed,
        source_path=source_path,
    )
    try:
        scene.trace_config().validate()
        scene.train_config().validate()
    except ValueError as e:
        raise SceneFileError(str(e)) from e
    return scene


def load_scene(path: str) -> SceneFile:
    """Load and validate a scene file.

    Raises:
        FileNotFoundError: If the file does not exist.
        SceneFileError: On any schema violation.
    """
    file_path = Path(path)
    if not file_path.exists():
        raise FileNotFoundError(f"Scene file not found: {path}")
    if file_path.suffix.lower() != ".json":
        logger.warning("File '%s' does not have a .json extension.", path)
    text = file_path.read_text(encoding="utf-8")
    scene = parse_scene(text, str(file_path))
    logger.info("Loaded scene file: %s (%d lights, %d cameras)", path, scene.light_count, len(scene.cameras))
    return scene


def serialize_scene(scene: SceneFile) -> str:
    """Canonical JSON text of a scene; parses back to an equal SceneFile."""
    return json.dumps(scene.to_dict(), indent=2, sort_keys=True)


def save_scene(scene: SceneFile, path: str) -> None:
    Path(path).write_text(serialize_scene(scene) + "\n", encoding="utf-8")
    logger.info("Scene file saved to %s", path)


def resolve_path(scene: SceneFile, relative: str) -> Path:
    """Resolve a path from a scene file relative to the file's directory."""
    path = Path(relative)
    if path.is_absolute() or scene.source_path is None:
        return path
    return Path(scene.source_path).parent / path
