"""Command-line interface.

Usage:
    python inverse_renderer.py render data/sample_scene.json --camera 0 --out view.pfm --ldr view.ppm
    python inverse_renderer.py synthesize data/sample_scene.json --out data/sample
    python inverse_renderer.py fit data/sample_scene.json --data data/sample --out scene.ckpt
    python inverse_renderer.py relight scene.ckpt --env sky.pfm --out relit.pfm
    python inverse_renderer.py edit scene.ckpt --roughness 0.2 --out edited.pfm
    python inverse_renderer.py export-env scene.ckpt --out env.pfm --size 64x32
    python inverse_renderer.py eval scene.ckpt --data data/sample --report report.txt
    python inverse_renderer.py gradcheck data/sample_scene.json

Exit codes: 0 on success, 1 on a runtime failure, 2 on a usage error.
"""

import argparse
import dataclasses
import logging
import sys
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from rich.console import Console

from . import autodiff as ad
from .autodiff import grad_check
from .config import AppConfig, TrainConfig, apply_overrides, setup_logging
from .dataset import load_dataset, synthesize_dataset, write_dataset
from .illumination import env_map_export
from .image_io import read_pfm, write_pfm, write_ppm
from .material import MaterialOverride
from .metrics import evaluate_bundle
from .renderer import Camera, render_image, render_rays, tone_map
from .report import (
    print_eval_report,
    print_fit_summary,
    print_gradcheck_report,
    print_render_summary,
    save_eval_report,
    save_trace_csv,
    save_trace_json,
)
from .scene_file import load_scene
from .training import (
    SceneBundle,
    build_bundle,
    edit_material,
    environment_from_image,
    fit,
    load_checkpoint,
    relight,
    save_checkpoint,
)

console = Console()
logger = logging.getLogger(__name__)

GRADCHECK_TOLERANCE = 1e-3


class UsageError(Exception):
    """Invalid combination of arguments detected after parsing."""


# ---------------------------------------------------------------------------
# Argument types
# ---------------------------------------------------------------------------


def _rgb(text: str) -> Tuple[float, float, float]:
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected r,g,b, got '{text}'")
    try:
        values = tuple(float(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected numbers in r,g,b, got '{text}'") from None
    if any(not 0.0 <= v <= 1.0 for v in values):
        raise argparse.ArgumentTypeError(f"albedo values must lie in [0, 1], got '{text}'")
    return values


def _roughness(text: str) -> float:
    value = float(text)
    if not 0.01 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"roughness must lie in [0.01, 1], got {value}")
    return value


def _fresnel_scale(text: str) -> float:
    value = float(text)
    if value < 0.0:
        raise argparse.ArgumentTypeError(f"fresnel scale must be non-negative, got {value}")
    return value


def _size(text: str) -> Tuple[int, int]:
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WxH, got '{text}'") from None
    if w < 1 or h < 1:
        raise argparse.ArgumentTypeError(f"size must be positive, got '{text}'")
    return w, h


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return value


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_arg_parser() -> argparse.ArgumentParser:
    """Build the CLI argument parser.

    Returns:
        Configured ArgumentParser instance.
    """
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="Random seed (default: scene or IR_SEED).")
    common.add_argument("--threads", type=_positive_int, default=None, help="Render worker threads.")
    common.add_argument(
        "--config",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="Override a trace, render or train setting; repeatable.",
    )
    common.add_argument(
        "--log-level",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        default=None,
        help="Logging verbosity level (default: WARNING).",
    )
    common.add_argument("--log-file", default=None, help="Path to log file.")
    common.add_argument("--no-color", action="store_true", help="Disable colored output.")

    parser = argparse.ArgumentParser(
        prog="inverse_renderer",
        description="Differentiable SG-illumination renderer and inverse-rendering fitter.",
        epilog="Global options (--seed, --threads, --config, --log-level, --log-file, --no-color) follow the command name.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("render", parents=[common], help="Render a scene file view to PFM.")
    p.add_argument("scene", help="Scene JSON file.")
    p.add_argument("--camera", type=int, default=0, help="Camera index (default: 0).")
    p.add_argument("--out", required=True, help="Output HDR PFM path.")
    p.add_argument("--ldr", default=None, help="Also write a tone-mapped PPM.")
    p.add_argument("--learned-materials", action="store_true", help="Shade with the material network even when ground-truth materials are given.")

    p = sub.add_parser("synthesize", parents=[common], help="Render a ground-truth dataset from a scene file.")
    p.add_argument("scene", help="Scene JSON file.")
    p.add_argument("--out", required=True, help="Output dataset directory.")

    p = sub.add_parser("fit", parents=[common], help="Fit a scene to a posed-image dataset.")
    p.add_argument("scene", help="Scene JSON file describing the model to fit.")
    p.add_argument("--data", required=True, help="Dataset directory.")
    p.add_argument("--out", required=True, help="Output checkpoint path.")
    p.add_argument("--steps", type=int, default=None, help="Joint training steps.")
    p.add_argument("--uniform-weights", action="store_true", help="Freeze IndirectNet at uniform weights.")
    p.add_argument("--no-boundary", action="store_true", help="Disable the boundary gradient term.")
    p.add_argument("--trace-json", default=None, help="Save the loss trace as JSON.")
    p.add_argument("--trace-csv", default=None, help="Save the loss trace as CSV.")

    p = sub.add_parser("relight", parents=[common], help="Render a checkpoint under a new environment map.")
    p.add_argument("checkpoint", help="Checkpoint file.")
    p.add_argument("--env", required=True, help="Lat-long HDR environment PFM.")
    p.add_argument("--out", required=True, help="Output HDR PFM path.")
    p.add_argument("--camera", type=int, default=0, help="Camera index (default: 0).")
    p.add_argument("--ldr", default=None, help="Also write a tone-mapped PPM.")

    p = sub.add_parser("edit", parents=[common], help="Render a checkpoint with material overrides.")
    p.add_argument("checkpoint", help="Checkpoint file.")
    p.add_argument("--albedo", type=_rgb, default=None, help="Albedo override r,g,b in [0, 1].")
    p.add_argument("--roughness", type=_roughness, default=None, help="Roughness override in [0.01, 1].")
    p.add_argument("--fresnel-scale", type=_fresnel_scale, default=None, help="Multiply F0 by k >= 0.")
    p.add_argument("--out", required=True, help="Output HDR PFM path.")
    p.add_argument("--camera", type=int, default=0, help="Camera index (default: 0).")
    p.add_argument("--ldr", default=None, help="Also write a tone-mapped PPM.")

    p = sub.add_parser("export-env", parents=[common], help="Export a checkpoint's environment as a lat-long PFM.")
    p.add_argument("checkpoint", help="Checkpoint file.")
    p.add_argument("--out", required=True, help="Output PFM path.")
    p.add_argument("--size", type=_size, default=(64, 32), help="Map size WxH (default: 64x32).")

    p = sub.add_parser("eval", parents=[common], help="Score a checkpoint against a dataset.")
    p.add_argument("checkpoint", help="Checkpoint file.")
    p.add_argument("--data", required=True, help="Dataset directory.")
    p.add_argument("--report", default=None, help="Write the report (text, or JSON for *.json).")

    p = sub.add_parser("gradcheck", parents=[common], help="Check tape gradients of a small render.")
    p.add_argument("scene", help="Scene JSON file.")
    p.add_argument("--size", type=_positive_int, default=8, help="Render width and height (default: 8).")
    p.add_argument("--max-per-group", type=_positive_int, default=4, help="Entries checked per group (default: 4).")
    p.add_argument("--tolerance", type=float, default=GRADCHECK_TOLERANCE, help="Pass threshold on max_rel_err.")

    return parser


def build_configs(args: argparse.Namespace) -> Tuple[AppConfig, TrainConfig]:
    """Build configuration objects from CLI args and environment variables.

    Args:
        args: Parsed CLI arguments.

    Returns:
        Tuple of (AppConfig, TrainConfig defaults from the environment).
    """
    app_config = AppConfig.from_env()
    if args.seed is not None:
        app_config.seed = args.seed
    if args.threads is not None:
        app_config.threads = args.threads
    if args.log_level is not None:
        app_config.log_level = args.log_level
    if args.log_file is not None:
        app_config.log_file = args.log_file
    if args.no_color:
        app_config.colored_output = False
    return app_config, TrainConfig.from_env()


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _configure_bundle(bundle: SceneBundle, args: argparse.Namespace, app: AppConfig, train=None) -> None:
    bundle.render.threads = app.threads
    sections: Dict[str, object] = {"render": bundle.render, "trace": bundle.render.trace}
    if train is not None:
        sections["train"] = train
    try:
        apply_overrides(sections, args.config)
        bundle.render.trace.validate()
    except ValueError as e:
        raise UsageError(str(e)) from e


def _camera(bundle: SceneBundle, index: int) -> Camera:
    cameras = bundle.scene.cameras
    if not 0 <= index < len(cameras):
        raise UsageError(f"Camera index {index} out of range (scene has {len(cameras)})")
    c = cameras[index]
    return Camera(tuple(c["position"]), tuple(c["look_at"]), tuple(c["up"]), c["fov"], c["width"], c["height"])


def _write_outputs(result, args: argparse.Namespace, app: AppConfig) -> None:
    write_pfm(args.out, result.image)
    if getattr(args, "ldr", None):
        write_ppm(args.ldr, tone_map(result.image))
    print_render_summary(result, args.out, colored=app.colored_output)


def cmd_render(args: argparse.Namespace, app: AppConfig, train: TrainConfig) -> int:
    scene = load_scene(args.scene)
    bundle = build_bundle(scene, ground_truth=bool(scene.materials) and not args.learned_materials, seed=args.seed)
    _configure_bundle(bundle, args, app)
    _write_outputs(render_image(bundle, _camera(bundle, args.camera)), args, app)
    return 0


def cmd_synthesize(args: argparse.Namespace, app: AppConfig, train: TrainConfig) -> int:
    scene = load_scene(args.scene)
    bundle = build_bundle(scene, ground_truth=bool(scene.materials), seed=args.seed)
    _configure_bundle(bundle, args, app)
    cameras = [_camera(bundle, i) for i in range(len(scene.cameras))]
    write_dataset(args.out, synthesize_dataset(bundle, cameras))
    console.print(f"[green]Dataset saved to: {args.out}[/green]")
    return 0


def cmd_fit(args: argparse.Namespace, app: AppConfig, train: TrainConfig) -> int:
    scene = load_scene(args.scene)
    cfg = dataclasses.replace(train, **scene.train)
    bundle = build_bundle(scene, seed=args.seed)
    _configure_bundle(bundle, args, app, train=cfg)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.steps is not None:
        cfg.steps = args.steps
    if args.uniform_weights:
        cfg.uniform_weights = True
    if args.no_boundary:
        cfg.use_boundary = False
    cfg.checkpoint_path = args.out
    try:
        cfg.validate()
    except ValueError as e:
        raise UsageError(str(e)) from e

    dataset = load_dataset(args.data)
    result = fit(bundle, dataset, cfg)
    if args.trace_json:
        save_trace_json(result.trace, args.trace_json)
    if args.trace_csv:
        save_trace_csv(result.trace, args.trace_csv)
    print_fit_summary(result, colored=app.colored_output)
    if cfg.steps == 0:
        save_checkpoint(bundle, args.out)
    return 0


def cmd_relight(args: argparse.Namespace, app: AppConfig, train: TrainConfig) -> int:
    bundle = load_checkpoint(args.checkpoint)
    _configure_bundle(bundle, args, app)
    env = environment_from_image(bundle, read_pfm(args.env).astype(np.float64))
    _write_outputs(relight(bundle, env, _camera(bundle, args.camera)), args, app)
    return 0


def cmd_edit(args: argparse.Namespace, app: AppConfig, train: TrainConfig) -> int:
    override = MaterialOverride(args.albedo, args.roughness, args.fresnel_scale)
    bundle = load_checkpoint(args.checkpoint)
    _configure_bundle(bundle, args, app)
    _write_outputs(edit_material(bundle, override, _camera(bundle, args.camera)), args, app)
    return 0


def cmd_export_env(args: argparse.Namespace, app: AppConfig, train: TrainConfig) -> int:
    bundle = load_checkpoint(args.checkpoint)
    width, height = args.size
    write_pfm(args.out, env_map_export(bundle.env, width, height))
    console.print(f"[green]Environment map saved to: {args.out}[/green]")
    return 0


def cmd_eval(args: argparse.Namespace, app: AppConfig, train: TrainConfig) -> int:
    bundle = load_checkpoint(args.checkpoint)
    _configure_bundle(bundle, args, app)
    evaluation = evaluate_bundle(bundle, load_dataset(args.data))
    print_eval_report(evaluation, colored=app.colored_output)
    if args.report:
        save_eval_report(evaluation, args.report)
    return 0


def cmd_gradcheck(args: argparse.Namespace, app: AppConfig, train: TrainConfig) -> int:
    scene = load_scene(args.scene)
    bundle = build_bundle(scene, seed=args.seed)
    _configure_bundle(bundle, args, app)
    camera = _camera(bundle, 0)
    camera.width = camera.height = args.size
    origins, dirs = camera.generate_rays()

    def loss(tape):
        radiance = render_rays(bundle, origins, dirs, tape).radiance
        return ad.mean(ad.abs_(radiance))

    report = grad_check(loss, bundle.store, eps=1e-5, max_per_group=args.max_per_group, seed=app.seed)
    print_gradcheck_report(report, args.tolerance, colored=app.colored_output)
    console.print(f"max_rel_err={report.max_rel_err:.6e}", markup=False, highlight=False)
    return 0 if report.max_rel_err <= args.tolerance else 1


COMMANDS = {
    "render": cmd_render,
    "synthesize": cmd_synthesize,
    "fit": cmd_fit,
    "relight": cmd_relight,
    "edit": cmd_edit,
    "export-env": cmd_export_env,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main entry point for the inverse renderer CLI.

    Returns:
        Process exit code.
    """
    parser = build_arg_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if isinstance(e.code, int) else 2

    app_config, train_defaults = build_configs(args)
    setup_logging(app_config)

    try:
        return COMMANDS[args.command](args, app_config, train_defaults)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        if app_config.colored_output:
            console.print(f"[red]Usage error: {e}[/red]")
        else:
            print(f"Usage error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # noqa: BLE001
        logger.debug("Command '%s' failed", args.command, exc_info=True)
        if app_config.colored_output:
            console.print(f"[red]Error: {e}[/red]")
        else:
            print(f"Error: {e}", file=sys.stderr)
        return 1
